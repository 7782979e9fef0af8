//! Parameterized building blocks shared by encoders, decoders and heads.
//!
//! Every block owns the parameters `<name>.*` in a [`ParamStore`]; `init_*`
//! creates them and the forward function binds them into a [`Graph`].

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;

/// Glorot-uniform weights `[fan_in, fan_out]`, zero bias.
pub fn init_linear<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::uniform(&[fan_in, fan_out], bound, rng));
    store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

/// `x @ w + b` over the last axis.
pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{name}.w"));
    let b = g.param(store, &format!("{name}.b"));
    let y = g.matmul(x, w);
    g.add_bcast(y, b)
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, dim: usize) {
    store.insert(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
    store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]));
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let gamma = g.param(store, &format!("{name}.gamma"));
    let beta = g.param(store, &format!("{name}.beta"));
    let y = g.layer_norm(x, LN_EPS);
    let y = g.mul_bcast(y, gamma);
    g.add_bcast(y, beta)
}

pub fn init_attention<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{name}.{p}"), dim, dim, rng);
    }
}

/// Multi-head self-attention over `[batch, tokens, dim]`.
pub fn attention(g: &mut Graph, store: &ParamStore, name: &str, x: Var, heads: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let split = |g: &mut Graph, p: &str| {
        let y = linear(g, store, &format!("{name}.{p}"), x);
        let y = g.reshape(y, &[b, t, heads, dh]);
        g.permute(y, &[0, 2, 1, 3])
    };
    let q = split(g, "q");
    let k = split(g, "k");
    let v = split(g, "v");
    let scores = g.matmul_t(q, k, false, true);
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax(scores);
    let ctx = g.matmul(attn, v);
    let ctx = g.permute(ctx, &[0, 2, 1, 3]);
    let ctx = g.reshape(ctx, &[b, t, d]);
    linear(g, store, &format!("{name}.o"), ctx)
}

pub fn init_block<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, mlp_ratio: usize, rng: &mut R) {
    init_layer_norm(store, &format!("{name}.ln1"), dim);
    init_attention(store, &format!("{name}.attn"), dim, rng);
    init_layer_norm(store, &format!("{name}.ln2"), dim);
    init_linear(store, &format!("{name}.mlp1"), dim, dim * mlp_ratio, rng);
    init_linear(store, &format!("{name}.mlp2"), dim * mlp_ratio, dim, rng);
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
pub fn block(g: &mut Graph, store: &ParamStore, name: &str, x: Var, heads: usize) -> Var {
    let h = layer_norm(g, store, &format!("{name}.ln1"), x);
    let h = attention(g, store, &format!("{name}.attn"), h, heads);
    let x = g.add(x, h);
    let h = layer_norm(g, store, &format!("{name}.ln2"), x);
    let h = linear(g, store, &format!("{name}.mlp1"), h);
    let h = g.gelu(h);
    let h = linear(g, store, &format!("{name}.mlp2"), h);
    g.add(x, h)
}

/// Sinusoidal position table `[n, dim]`.
pub fn sinusoidal(n: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, dim]);
    let data = t.data_mut();
    for pos in 0..n {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    t
}

/// Arrange rows: output row `r` is `rows[idx[r]]` where indices past the end
/// of `rows` address `fill` (both `[_, dim]`).
pub fn gather_with_fill(g: &mut Graph, rows: Var, fill: Var, idx: &[usize]) -> Var {
    let pool = g.concat(&[rows, fill], 0);
    g.select_rows(pool, idx)
}

/// 1-D "same" convolution over `[batch, length, c_in]` with weights
/// `[k * c_in, c_out]`.
pub fn init_conv<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, k: usize, c_in: usize, c_out: usize, rng: &mut R) {
    init_linear(store, name, k * c_in, c_out, rng);
}

pub fn conv(g: &mut Graph, store: &ParamStore, name: &str, x: Var, k: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (b, l) = (s[0], s[1]);
    let cols = if k == 1 { g.reshape(x, &[b * l, s[2]]) } else { g.im2col(x, k) };
    let y = linear(g, store, name, cols);
    let c_out = g.shape(y)[1];
    g.reshape(y, &[b, l, c_out])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tests::{param_grad_check, weighted_sum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        init_block(&mut store, "blk", 8, 2, &mut rng);
        // non-trivial affine parameters
        for name in ["blk.ln1.gamma", "blk.ln2.beta"] {
            let t = store.get_mut(name).unwrap();
            *t = Tensor::randn(t.shape(), 0.5, &mut rng).map(|v| v + 1.0);
        }
        let x = Tensor::randn(&[2, 5, 8], 1.0, &mut rng);
        let err = param_grad_check(&store, 6, |g, s| {
            let xv = g.constant(x.clone());
            let y = block(g, s, "blk", xv, 2);
            weighted_sum(g, y, 3)
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        init_attention(&mut store, "a", 8, &mut rng);
        let x = Tensor::randn(&[1, 4, 8], 1.0, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Tensor::zeros(&[1, 4, 8]);
        for (i, &p) in perm.iter().enumerate() {
            xp.data_mut()[i * 8..(i + 1) * 8].copy_from_slice(&x.data()[p * 8..(p + 1) * 8]);
        }
        let run = |t: &Tensor| {
            let mut g = Graph::inference();
            let v = g.constant(t.clone());
            let y = attention(&mut g, &store, "a", v, 2);
            g.value(y).clone()
        };
        let (y, yp) = (run(&x), run(&xp));
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((yp.data()[i * 8 + j] - y.data()[p * 8 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoidal_table() {
        let t = sinusoidal(3, 4);
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((t.data()[4] - 1f64.sin()).abs() < 1e-15);
        assert!((t.data()[6] - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        init_conv(&mut store, "c", 3, 2, 1, &mut rng);
        let x = Tensor::randn(&[1, 5, 2], 1.0, &mut rng);
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let y = conv(&mut g, &store, "c", xv, 3);
        let w = store.get("c.w").unwrap().data();
        for t in 0..5 {
            let mut acc = 0.0;
            for j in 0..3 {
                let src = t as isize + j as isize - 1;
                if (0..5).contains(&src) {
                    for c in 0..2 {
                        acc += x.data()[src as usize * 2 + c] * w[j * 2 + c];
                    }
                }
            }
            assert!((g.value(y).data()[t] - acc).abs() < 1e-12);
        }
    }
}
