use rand::Rng;

use super::layers::{init_linear, linear};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const PROJECTION_WIDTHS: [usize; 3] = [256, 128, 50];
pub const CLASSIFIER_HIDDEN: usize = 1024;

pub fn init_projection<R: Rng + ?Sized>(store: &mut ParamStore, in_dim: usize, rng: &mut R) {
    let mut d = in_dim;
    for (i, &w) in PROJECTION_WIDTHS.iter().enumerate() {
        init_linear(store, &format!("proj.l{i}"), d, w, rng);
        d = w;
    }
}

/// Three affine layers 256 -> 128 -> 50 with ReLU after the first two.
pub fn projection(g: &mut Graph, store: &ParamStore, x: Var) -> Var {
    let mut h = x;
    for i in 0..PROJECTION_WIDTHS.len() {
        h = linear(g, store, &format!("proj.l{i}"), h);
        if i + 1 < PROJECTION_WIDTHS.len() {
            h = g.relu(h);
        }
    }
    h
}

pub fn init_classifier<R: Rng + ?Sized>(store: &mut ParamStore, in_dim: usize, n_classes: usize, rng: &mut R) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!("a classifier needs at least 2 classes, got {n_classes}")));
    }
    init_linear(store, "cls.hidden", in_dim, CLASSIFIER_HIDDEN, rng);
    init_linear(store, "cls.out", CLASSIFIER_HIDDEN, n_classes, rng);
    Ok(())
}

/// Dense 1024 + ReLU, then class logits.
pub fn classifier(g: &mut Graph, store: &ParamStore, x: Var) -> Var {
    let h = linear(g, store, "cls.hidden", x);
    let h = g.relu(h);
    linear(g, store, "cls.out", h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tests::{param_grad_check, weighted_sum};
    use crate::tensor::Tensor;

    #[test]
    fn projection_shapes_zero_weights_and_gradients() {
        let mut rng = crate::seed::rng(0);
        let mut store = ParamStore::new();
        init_projection(&mut store, 6, &mut rng);
        let x = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let run = |s: &ParamStore| {
            let mut g = Graph::inference();
            let xv = g.constant(x.clone());
            let y = projection(&mut g, s, xv);
            g.value(y).clone()
        };
        assert_eq!(run(&store).shape(), &[3, 50]);
        let mut zero = store.clone();
        for name in zero.names().map(String::from).collect::<Vec<_>>() {
            let t = zero.get_mut(&name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        assert!(run(&zero).data().iter().all(|&v| v == 0.0));
        let err = param_grad_check(&store, 4, |g, s| {
            let xv = g.constant(x.clone());
            let y = projection(g, s, xv);
            weighted_sum(g, y, 1)
        });
        assert!(err < 1e-4, "{err}");
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = projection(&mut g, &store, xv);
        let l = weighted_sum(&mut g, y, 1);
        let grads = g.param_grads(&g.backward(l));
        for i in 0..3 {
            assert!(grads.get(&format!("proj.l{i}.w")).unwrap().sq_norm() > 0.0);
        }
    }

    #[test]
    fn classifier_widths_and_shift_invariance() {
        let mut rng = crate::seed::rng(1);
        let mut store = ParamStore::new();
        init_classifier(&mut store, 8, 10, &mut rng).unwrap();
        assert_eq!(store.get("cls.hidden.w").unwrap().shape(), &[8, 1024]);
        let mut g = Graph::inference();
        let x = g.constant(Tensor::randn(&[2, 8], 1.0, &mut rng));
        let y = classifier(&mut g, &store, x);
        assert_eq!(g.shape(y), &[2, 10]);
        let logits = g.value(y).row(0).to_vec();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 3.5).collect();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax(&logits), argmax(&shifted));
        assert!(init_classifier(&mut ParamStore::new(), 8, 1, &mut rng).is_err());
    }
}
