//! Optimization machinery: Adam, early stopping, EMA tracking and the epoch
//! loop shared by every pretraining and fine-tuning method.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-7 }
    }
}

/// Adam moments for every parameter updated so far.
#[derive(Clone, Debug, Default)]
pub struct OptimState {
    pub config: AdamConfig,
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl OptimState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, ..Default::default() }
    }
}

/// Bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut OptimState) -> Result<()> {
    if grads.iter().any(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite { what: "gradient", step: state.step as usize });
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("{name}: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        if !state.m.contains(name) {
            state.m.insert(name, Tensor::zeros(g.shape()));
            state.v.insert(name, Tensor::zeros(g.shape()));
        }
        let m = state.m.get_mut(name).unwrap().data_mut();
        let v = state.v.get_mut(name).unwrap().data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for name in grads.names().map(String::from).collect::<Vec<_>>() {
            grads.get_mut(&name).unwrap().scale_inplace(s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    /// Lower is better.
    Loss,
    /// Higher is better.
    Accuracy,
}

/// Index of the best value (earliest on ties) and whether more than
/// `patience` epochs have passed since it.
pub fn early_stop(history: &[f64], patience: usize, monitor: Monitor) -> (bool, usize) {
    assert!(!history.is_empty(), "early_stop needs at least one epoch");
    let mut best = 0;
    for (i, &v) in history.iter().enumerate().skip(1) {
        let better = match monitor {
            Monitor::Loss => v < history[best],
            Monitor::Accuracy => v > history[best],
        };
        if better {
            best = i;
        }
    }
    (history.len() - 1 - best > patience, best)
}

/// `teacher = tau * teacher + (1 - tau) * student` for every teacher array.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    for name in teacher.names().map(String::from).collect::<Vec<_>>() {
        let s = student.get(&name).ok_or_else(|| Error::Shape(format!("student lacks {name}")))?;
        let t = teacher.get_mut(&name).unwrap();
        if t.shape() != s.shape() {
            return Err(Error::Shape(format!("{name}: teacher {:?} vs student {:?}", t.shape(), s.shape())));
        }
        if tau == 1.0 {
            continue;
        }
        for (ti, &si) in t.data_mut().iter_mut().zip(s.data()) {
            *ti = tau * *ti + (1.0 - tau) * si;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` trains every epoch.
    pub patience: Option<usize>,
    pub monitor: Monitor,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl TrainSchedule {
    pub fn pretrain() -> Self {
        Self { epochs: 300, batch_size: 128, patience: Some(15), monitor: Monitor::Loss, clip_norm: None }
    }

    pub fn finetune(scarce: bool) -> Self {
        Self { epochs: if scarce { 50 } else { 100 }, batch_size: 64, patience: None, monitor: Monitor::Accuracy, clip_norm: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs ({}) and batch_size ({}) must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        Ok(())
    }
}

/// One training objective over an indexable training set.
pub trait Objective {
    /// Build the loss graph for the training items `batch`.
    fn loss(&mut self, params: &ParamStore, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<(Graph, Var)>;

    /// Monitored metric on held-out data.
    fn validate(&mut self, params: &ParamStore) -> Result<f64>;

    /// Hook after each optimizer step (teacher updates, monitors).
    fn after_step(&mut self, _params: &ParamStore, _step: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
}

pub struct TrainOutcome {
    pub best_params: ParamStore,
    pub final_params: ParamStore,
    pub history: History,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Wall-clock milliseconds of every optimizer step.
    pub step_ms: Vec<f64>,
}

/// Train `params` with Adam. Batches come from a per-epoch seeded shuffle of
/// `0..n_train`; the final incomplete batch is kept.
pub fn run_epochs(
    mut params: ParamStore,
    n_train: usize,
    objective: &mut dyn Objective,
    schedule: &TrainSchedule,
    adam: AdamConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if n_train == 0 {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut shuffle_rng = rng_for(seed, "shuffle");
    let mut step_rng = rng_for(seed, "steps");
    let mut state = OptimState::new(adam);
    let mut history = History::default();
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut stopped_early = false;
    let mut step_ms = Vec::new();
    let mut step = 0usize;
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(schedule.batch_size) {
            let t0 = Instant::now();
            let (g, loss) = objective.loss(&params, batch, &mut step_rng)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite { what: "loss", step });
            }
            let mut grads = g.param_grads(&g.backward(loss));
            drop(g);
            if let Some(c) = schedule.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(&mut params, &grads, &mut state)?;
            step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            objective.after_step(&params, step)?;
            step += 1;
            total += value * batch.len() as f64;
            count += batch.len();
        }
        history.train_loss.push(total / count as f64);
        let val = objective.validate(&params)?;
        if !val.is_finite() {
            return Err(Error::NonFinite { what: "validation metric", step });
        }
        history.val_metric.push(val);
        let (stop, best) = early_stop(&history.val_metric, schedule.patience.unwrap_or(usize::MAX), schedule.monitor);
        if best == epoch {
            best_params = params.clone();
            best_epoch = epoch;
        }
        if stop && schedule.patience.is_some() {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { best_params, final_params: params, history, best_epoch, stopped_early, step_ms })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Persisted record of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub schedule: TrainSchedule,
    pub optimizer: AdamConfig,
    pub history: History,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: usize,
    pub step_ms_median: f64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn from_outcome(config_hash: String, seed: u64, schedule: &TrainSchedule, adam: AdamConfig, out: &TrainOutcome) -> Self {
        Self {
            config_hash,
            seed,
            schedule: schedule.clone(),
            optimizer: adam,
            history: out.history.clone(),
            best_epoch: out.best_epoch,
            stopped_early: out.stopped_early,
            steps: out.step_ms.len(),
            step_ms_median: median(&out.step_ms),
            extra: serde_json::Value::Null,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(vals: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(&[vals.len()], vals.to_vec()));
        s
    }

    /// Textbook Adam over flat vectors, written independently of `adam_step`.
    fn reference_adam(p: &mut [f64], grads: &[Vec<f64>], lr: f64, b1: f64, b2: f64, eps: f64) {
        let mut m = vec![0.0; p.len()];
        let mut v = vec![0.0; p.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as f64;
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powf(t));
                let vh = v[i] / (1.0 - b2.powf(t));
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = store(&[0.0]);
        let mut st = OptimState::new(AdamConfig::default());
        adam_step(&mut p, &store(&[1.0]), &mut st).unwrap();
        // mhat = 1, vhat = 1 -> -lr / (1 + eps)
        let expect = -3e-4 / (1.0 + 1e-7);
        assert!((p.get("p").unwrap().data()[0] - expect).abs() < 1e-18);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = store(&[1.0, 2.0]);
        let mut st = OptimState::new(AdamConfig::default());
        adam_step(&mut p, &store(&[0.5, 0.5]), &mut st).unwrap();
        let before = p.clone();
        let m_before = st.m.get("p").unwrap().clone();
        let mut p2 = p.clone();
        let mut st2 = st.clone();
        adam_step(&mut p2, &store(&[0.0, 0.0]), &mut st2).unwrap();
        assert_eq!(st2.m.get("p").unwrap().data()[0], 0.9 * m_before.data()[0]);
        // bias-corrected momentum still moves a parameter with zero gradient;
        // with zero moments it does not
        let mut fresh = before.clone();
        let mut st3 = OptimState::new(AdamConfig::default());
        adam_step(&mut fresh, &store(&[0.0, 0.0]), &mut st3).unwrap();
        assert_eq!(fresh, before);
        let d = p2.get("p").unwrap().data();
        let b = before.get("p").unwrap().data();
        assert!(((d[0] - b[0]) - (d[1] - b[1])).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_adam() {
        let mut rng = crate::seed::rng(11);
        let init = Tensor::randn(&[40], 1.0, &mut rng);
        let grads: Vec<Vec<f64>> = (0..25).map(|_| Tensor::randn(&[40], 2.0, &mut rng).into_data()).collect();
        let mut p = ParamStore::new();
        p.insert("w", init.clone());
        let mut st = OptimState::new(AdamConfig::default());
        for g in &grads {
            let mut gs = ParamStore::new();
            gs.insert("w", Tensor::new(&[40], g.clone()));
            adam_step(&mut p, &gs, &mut st).unwrap();
        }
        let mut r = init.into_data();
        reference_adam(&mut r, &grads, 3e-4, 0.9, 0.999, 1e-7);
        let diff = p.get("w").unwrap().max_abs_diff(&Tensor::new(&[40], r));
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = store(&[0.0]);
        let mut st = OptimState::new(AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &store(&[f64::NAN]), &mut st), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn early_stop_examples() {
        let mut h = vec![5.0, 4.0, 3.0];
        h.extend(std::iter::repeat(3.0).take(15));
        assert_eq!(early_stop(&h, 15, Monitor::Loss), (false, 2));
        h.push(3.5);
        assert_eq!(early_stop(&h, 15, Monitor::Loss), (true, 2));
        let dec: Vec<f64> = (0..50).map(|i| 100.0 - i as f64).collect();
        assert_eq!(early_stop(&dec, 15, Monitor::Loss), (false, 49));
        let tie = [0.5, 0.6, 0.9, 0.7, 0.8, 0.6, 0.7, 0.9];
        assert_eq!(early_stop(&tie, 100, Monitor::Accuracy).1, 2);
        assert_eq!(early_stop(&[1.0, 1.0], 0, Monitor::Loss), (true, 0));
    }

    #[test]
    fn ema_examples() {
        let mut t = store(&[1.0]);
        ema_update(&mut t, &store(&[0.0]), 0.998).unwrap();
        assert!((t.get("p").unwrap().data()[0] - 0.998).abs() < 1e-15);
        let mut t = store(&[1.0, -2.0]);
        ema_update(&mut t, &store(&[3.0, 4.0]), 1.0).unwrap();
        assert_eq!(t, store(&[1.0, -2.0]));
        ema_update(&mut t, &store(&[3.0, 4.0]), 0.0).unwrap();
        assert_eq!(t, store(&[3.0, 4.0]));
        assert!(ema_update(&mut t, &store(&[1.0]), 0.5).is_err());
        assert!(ema_update(&mut t, &store(&[1.0, 1.0]), 1.5).is_err());
    }

    /// Least squares `w·x ≈ y` on fixed data.
    struct Regression {
        xs: Vec<[f64; 2]>,
        ys: Vec<f64>,
    }

    impl Objective for Regression {
        fn loss(&mut self, params: &ParamStore, batch: &[usize], _rng: &mut ChaCha8Rng) -> Result<(Graph, Var)> {
            let mut g = Graph::new();
            let w = g.param(params, "w");
            let x = g.constant(Tensor::new(&[batch.len(), 2], batch.iter().flat_map(|&i| self.xs[i]).collect()));
            let pred = g.matmul(x, w);
            let pv = g.value(pred).data().to_vec();
            let n = batch.len() as f64;
            let mut value = 0.0;
            let mut grad = vec![0.0; batch.len()];
            for (k, &i) in batch.iter().enumerate() {
                let d = pv[k] - self.ys[i];
                value += d * d / n;
                grad[k] = 2.0 * d / n;
            }
            let l = g.loss(&[pred], value, vec![Tensor::new(&[batch.len(), 1], grad)]);
            Ok((g, l))
        }

        fn validate(&mut self, params: &ParamStore) -> Result<f64> {
            let w = params.get("w").unwrap().data();
            Ok(self.xs.iter().zip(&self.ys).map(|(x, y)| (x[0] * w[0] + x[1] * w[1] - y).powi(2)).sum::<f64>() / self.ys.len() as f64)
        }
    }

    fn regression() -> (Regression, ParamStore) {
        let xs: Vec<[f64; 2]> = (0..37).map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let ys = xs.iter().map(|x| 2.0 * x[0] - x[1]).collect();
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(&[2, 1]));
        (Regression { xs, ys }, p)
    }

    #[test]
    fn run_epochs_is_reproducible_and_learns() {
        let sched = TrainSchedule { epochs: 30, batch_size: 8, patience: Some(5), monitor: Monitor::Loss, clip_norm: None };
        let adam = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let (mut o1, p) = regression();
        let a = run_epochs(p.clone(), 37, &mut o1, &sched, adam, 3).unwrap();
        let (mut o2, _) = regression();
        let b = run_epochs(p.clone(), 37, &mut o2, &sched, adam, 3).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_params, b.best_params);
        assert!(a.history.val_metric[a.best_epoch] < a.history.val_metric[0]);
        // 37 items in batches of 8 -> 5 steps per epoch (last batch kept)
        assert_eq!(a.step_ms.len(), 5 * a.history.train_loss.len());
        let (mut o3, _) = regression();
        let c = run_epochs(p, 37, &mut o3, &sched, adam, 4).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        struct Flat;
        impl Objective for Flat {
            fn loss(&mut self, params: &ParamStore, _b: &[usize], _r: &mut ChaCha8Rng) -> Result<(Graph, Var)> {
                let mut g = Graph::new();
                let w = g.param(params, "w");
                let l = g.loss(&[w], 0.0, vec![Tensor::zeros(&[2, 1])]);
                Ok((g, l))
            }
            fn validate(&mut self, _p: &ParamStore) -> Result<f64> {
                Ok(1.0)
            }
        }
        let (_, p) = regression();
        let sched = TrainSchedule { epochs: 10, batch_size: 4, patience: Some(0), monitor: Monitor::Loss, clip_norm: None };
        let out = run_epochs(p, 8, &mut Flat, &sched, AdamConfig::default(), 0).unwrap();
        assert_eq!(out.history.val_metric.len(), 2);
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 0);
    }

    proptest! {
        #[test]
        fn ema_is_convex(t in prop::collection::vec(-10.0f64..10.0, 1..20), tau in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let s = Tensor::randn(&[t.len()], 5.0, &mut rng).into_data();
            let mut teacher = store(&t);
            ema_update(&mut teacher, &store(&s), tau).unwrap();
            for ((&a, &b), &c) in t.iter().zip(&s).zip(teacher.get("p").unwrap().data()) {
                prop_assert!(c >= a.min(b) - 1e-12 && c <= a.max(b) + 1e-12);
            }
        }

        #[test]
        fn best_index_is_never_after_last_improvement(h in prop::collection::vec(0.0f64..5.0, 1..40), patience in 0usize..10) {
            let (stop, best) = early_stop(&h, patience, Monitor::Loss);
            let mut last_improvement = 0;
            let mut running = h[0];
            for (i, &v) in h.iter().enumerate() {
                if v < running {
                    running = v;
                    last_improvement = i;
                }
            }
            prop_assert!(best <= last_improvement);
            prop_assert_eq!(best, last_improvement);
            prop_assert_eq!(stop, h.len() - 1 - best > patience);
        }
    }
}
