//! Self-distillation: a student sees masked inputs and regresses, at the
//! masked token slots, the averaged top-layer representations a teacher
//! computes from the full input. The teacher follows the student by EMA.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::backbones::layers::{gather_with_fill, init_linear, linear, LN_EPS};
use crate::backbones::{batch_input, encode, inception, tokenize, transformer, Encoder, EncoderConfig, Family, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::harmonize::{SensorWindow, CHANNELS, WINDOW_LEN};
use crate::mae::{check_plans, init_mask_tokens, mask_token_rows, random_mask_for, MaskPlan};
use crate::params::ParamStore;
use crate::pretrain::{config_hash, Method, PretrainSet, Pretrained};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::Tensor;
use crate::trainer::{ema_update, run_epochs, AdamConfig, Objective, RunManifest, TrainSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct D2vConfig {
    pub mask_ratio: f64,
    pub tau: f64,
    pub beta: f64,
    /// Top blocks averaged into targets; half the encoder depth when unset.
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Batches between collapse checks; 0 disables the monitor.
    #[serde(default = "default_check_every")]
    pub collapse_check_every: usize,
    #[serde(default = "default_threshold")]
    pub collapse_threshold: f64,
}

fn default_check_every() -> usize {
    10
}

fn default_threshold() -> f64 {
    1e-4
}

/// Consecutive low-spread checks that raise the collapse alarm.
pub const COLLAPSE_PATIENCE: usize = 3;

impl D2vConfig {
    pub fn for_family(family: Family) -> Self {
        let (mask_ratio, tau) = match family {
            Family::ConvInception => (0.75, 0.998),
            Family::SensorwiseTransformer => (0.5, 0.9999),
        };
        Self {
            mask_ratio,
            tau,
            beta: 0.5,
            top_k: None,
            collapse_check_every: default_check_every(),
            collapse_threshold: default_threshold(),
        }
    }

    pub fn top_k(&self, enc: &EncoderConfig) -> usize {
        self.top_k.unwrap_or((enc.depth / 2).max(1))
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("data2vec config: {m}")));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} must lie in [0, 1]", self.tau));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        let k = self.top_k(enc);
        if k == 0 || k > enc.depth {
            return bad(format!("top_k {k} must lie in 1..={}", enc.depth));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} must lie in (0, 1)", self.mask_ratio));
        }
        crate::mae::visible_count(enc.n_tokens(), self.mask_ratio)?;
        Ok(())
    }
}

/// Mask tokens and the linear prediction head.
pub fn init_student_extras<R: rand::Rng + ?Sized>(store: &mut ParamStore, enc: &EncoderConfig, rng: &mut R) {
    match enc.family {
        Family::SensorwiseTransformer => init_mask_tokens(store, enc.embed_dim, true, rng),
        Family::ConvInception => init_mask_tokens(store, enc.token_values(), false, rng),
    }
    let w = enc.embedding_width();
    init_linear(store, "predictor", w, w, rng);
}

/// Layer-norm (no affine) over the last axis.
fn normalize_rows(t: &Tensor) -> Tensor {
    let d = t.last_dim();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Average of the `top_k` deepest block outputs, each layer-normalized.
pub fn average_top_layers(layers: &[Tensor], top_k: usize) -> Result<Tensor> {
    if top_k == 0 || top_k > layers.len() {
        return Err(Error::InvalidArgument(format!("top_k {top_k} must lie in 1..={}", layers.len())));
    }
    let mut acc = Tensor::zeros(layers[0].shape());
    for l in &layers[layers.len() - top_k..] {
        acc.add_assign(&normalize_rows(l));
    }
    acc.scale_inplace(1.0 / top_k as f64);
    Ok(acc)
}

/// Teacher targets `[batch, tokens, width]` from unmasked windows. Computed
/// in a separate inference graph, so no gradient reaches the teacher.
pub fn teacher_targets(teacher: &ParamStore, enc: &EncoderConfig, windows: &[&SensorWindow], top_k: usize) -> Result<Tensor> {
    let mut g = Graph::inference();
    let x = g.constant(batch_input(windows));
    let e = encode(&mut g, teacher, enc, x);
    let layers: Vec<Tensor> = e.layers.iter().map(|&v| g.value(v).clone()).collect();
    average_top_layers(&layers, top_k)
}

/// Student predictions `[batch, tokens, width]` with mask tokens in place of
/// the masked slots. Also returns the number of tokens per window the
/// encoder received.
pub fn student_forward(
    g: &mut Graph,
    params: &ParamStore,
    enc: &EncoderConfig,
    windows: &[&SensorWindow],
    plans: &[MaskPlan],
) -> Result<(Var, usize)> {
    if windows.len() != plans.len() {
        return Err(Error::Shape(format!("{} windows but {} mask plans", windows.len(), plans.len())));
    }
    check_plans(enc, plans)?;
    let (b, n) = (windows.len(), enc.n_tokens());
    let x = g.constant(batch_input(windows));
    // every token row, then the mask tokens; masked slots point at the latter
    let index = |rows: [usize; 2]| -> Vec<usize> {
        plans
            .iter()
            .enumerate()
            .flat_map(|(s, p)| (0..n).map(move |t| if p.is_masked(t) { b * n + rows[p.groups[t].min(1)] } else { s * n + t }))
            .collect()
    };
    let (tokens, seen) = match enc.family {
        Family::SensorwiseTransformer => {
            let t = transformer::embed(g, params, enc, x);
            let t = g.reshape(t, &[b * n, enc.embed_dim]);
            let (fill, rows) = mask_token_rows(g, params, true);
            let t = gather_with_fill(g, t, fill, &index(rows));
            let t = g.reshape(t, &[b, n, enc.embed_dim]);
            let t = transformer::add_positions(g, enc, t);
            let seen = g.shape(t)[1];
            (transformer::blocks(g, params, enc, t).0, seen)
        }
        Family::ConvInception => {
            let raw = tokenize(g, enc, x);
            let raw = g.reshape(raw, &[b * n, enc.token_values()]);
            let (fill, rows) = mask_token_rows(g, params, false);
            let raw = gather_with_fill(g, raw, fill, &index(rows));
            let raw = g.reshape(raw, &[b, WINDOW_LEN, CHANNELS]);
            let (out, _) = inception::forward(g, params, enc, raw);
            (inception::frame_pool(g, enc, out), n)
        }
    };
    Ok((linear(g, params, "predictor", tokens), seen))
}

fn huber(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Smooth L1 averaged over the masked tokens and every dimension of
/// `[batch, tokens, width]` tensors, with its gradient for `pred`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor, plans: &[MaskPlan], beta: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() || pred.shape().len() != 3 || pred.shape()[0] != plans.len() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let (n, d) = (pred.shape()[1], pred.shape()[2]);
    let count = (plans.iter().map(|p| p.masked.len()).sum::<usize>() * d) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for (b, p) in plans.iter().enumerate() {
        for &t in &p.masked {
            let off = (b * n + t) * d;
            for j in off..off + d {
                let (l, dl) = huber(pred.data()[j] - target.data()[j], beta);
                sum += l;
                grad.data_mut()[j] = dl / count;
            }
        }
    }
    Ok((sum / count, grad))
}

pub fn smooth_l1_loss(g: &mut Graph, pred: Var, target: &Tensor, plans: &[MaskPlan], beta: f64) -> Result<Var> {
    let (l, grad) = smooth_l1(g.value(pred), target, plans, beta)?;
    Ok(g.loss(&[pred], l, vec![grad]))
}

/// Watches the spread of teacher targets and raises an alarm after
/// [`COLLAPSE_PATIENCE`] consecutive checks below the threshold.
#[derive(Clone, Debug)]
pub struct CollapseMonitor {
    pub threshold: f64,
    pub every: usize,
    pub history: Vec<f64>,
    low_streak: usize,
}

impl CollapseMonitor {
    pub fn new(threshold: f64, every: usize) -> Self {
        Self { threshold, every, history: Vec::new(), low_streak: 0 }
    }

    /// Mean over dimensions of the standard deviation across rows of `[.., d]`.
    pub fn statistic(targets: &Tensor) -> f64 {
        let d = targets.last_dim();
        let rows = targets.len() / d;
        let mut total = 0.0;
        for j in 0..d {
            let col = (0..rows).map(|r| targets.data()[r * d + j]);
            let mean = col.clone().sum::<f64>() / rows as f64;
            total += (col.map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64).sqrt();
        }
        total / d as f64
    }

    /// Record a check; true when the alarm fires.
    pub fn observe(&mut self, statistic: f64) -> bool {
        self.history.push(statistic);
        self.low_streak = if statistic < self.threshold { self.low_streak + 1 } else { 0 };
        self.low_streak >= COLLAPSE_PATIENCE
    }

    /// Check `targets` if `batch` is due; errors when the alarm fires.
    pub fn check(&mut self, batch: usize, targets: &Tensor) -> Result<()> {
        if self.every == 0 || batch % self.every != 0 {
            return Ok(());
        }
        let s = Self::statistic(targets);
        if self.observe(s) {
            return Err(Error::Collapse(s));
        }
        Ok(())
    }
}

struct D2vObjective<'a> {
    data: &'a PretrainSet<'a>,
    enc: EncoderConfig,
    cfg: D2vConfig,
    teacher: ParamStore,
    monitor: CollapseMonitor,
    batches: usize,
    val_batch: usize,
    val_seed: u64,
}

impl D2vObjective<'_> {
    fn batch_loss(&self, g: &mut Graph, params: &ParamStore, idx: &[usize], seeds: &[u64]) -> Result<(Var, Tensor)> {
        let windows = self.data.windows(idx);
        let plans = seeds.iter().map(|&s| random_mask_for(&self.enc, self.cfg.mask_ratio, s)).collect::<Result<Vec<_>>>()?;
        let targets = teacher_targets(&self.teacher, &self.enc, &windows, self.cfg.top_k(&self.enc))?;
        let (pred, _) = student_forward(g, params, &self.enc, &windows, &plans)?;
        Ok((smooth_l1_loss(g, pred, &targets, &plans, self.cfg.beta)?, targets))
    }
}

impl Objective for D2vObjective<'_> {
    fn loss(&mut self, params: &ParamStore, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<(Graph, Var)> {
        let idx: Vec<usize> = batch.iter().map(|&i| self.data.train[i]).collect();
        let seeds: Vec<u64> = idx.iter().map(|_| rng.next_u64()).collect();
        let mut g = Graph::new();
        let (l, targets) = self.batch_loss(&mut g, params, &idx, &seeds)?;
        self.monitor.check(self.batches, &targets)?;
        self.batches += 1;
        Ok((g, l))
    }

    fn validate(&mut self, params: &ParamStore) -> Result<f64> {
        let mut total = 0.0;
        for (b, chunk) in self.data.val.chunks(self.val_batch).enumerate() {
            let seeds: Vec<u64> = (0..chunk.len()).map(|j| derive_seed(self.val_seed, &format!("{b}/{j}"))).collect();
            let mut g = Graph::inference();
            let (l, _) = self.batch_loss(&mut g, params, chunk, &seeds)?;
            total += g.value(l).item() * chunk.len() as f64;
        }
        Ok(total / self.data.val.len() as f64)
    }

    fn after_step(&mut self, params: &ParamStore, _step: usize) -> Result<()> {
        ema_update(&mut self.teacher, params, self.cfg.tau)
    }
}

pub fn d2v_pretrain(
    data: &PretrainSet,
    encoder: Encoder,
    cfg: &D2vConfig,
    schedule: &TrainSchedule,
    adam: AdamConfig,
    seed: u64,
) -> Result<Pretrained> {
    cfg.validate(&encoder.config)?;
    data.check()?;
    let teacher = encoder.params.with_prefix(ENCODER_PREFIX);
    let mut params = encoder.params.clone();
    init_student_extras(&mut params, &encoder.config, &mut rng_for(seed, "data2vec-init"));
    let mut obj = D2vObjective {
        data,
        enc: encoder.config.clone(),
        cfg: cfg.clone(),
        teacher,
        monitor: CollapseMonitor::new(cfg.collapse_threshold, cfg.collapse_check_every),
        batches: 0,
        val_batch: schedule.batch_size,
        val_seed: derive_seed(seed, "data2vec-val"),
    };
    let out = run_epochs(params, data.train.len(), &mut obj, schedule, adam, seed)?;
    let hash = config_hash(&(&encoder.config, cfg, schedule, adam));
    let mut manifest = RunManifest::from_outcome(hash, seed, schedule, adam, &out);
    manifest.extra = serde_json::json!({
        "method": "data2vec",
        "data2vec": cfg,
        "mask_ratio": cfg.mask_ratio,
        "tau": cfg.tau,
        "top_k": cfg.top_k(&encoder.config),
        "target_spread": obj.monitor.history,
    });
    Ok(Pretrained { method: Method::Data2vec, encoder: encoder.config, params: out.best_params, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tests::{grad_check, param_grad_check};
    use crate::mae::random_mask;
    use crate::seed::rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn window(seed: u64) -> SensorWindow {
        let t = Tensor::randn(&[WINDOW_LEN * CHANNELS], 1.0, &mut rng(seed));
        SensorWindow::new(format!("d/s/0/{seed}"), t.into_data(), 0, "s".into(), "d".into()).unwrap()
    }

    fn tiny(family: Family) -> EncoderConfig {
        let mut enc = EncoderConfig::desk(family);
        enc.frame_length = 32;
        if family == Family::SensorwiseTransformer {
            enc.embed_dim = 8;
        } else {
            enc.filters = 2;
            enc.bottleneck = 2;
            enc.kernels = vec![3];
        }
        enc
    }

    #[test]
    fn smooth_l1_examples() {
        let plan = vec![MaskPlan { n_tokens: 2, visible: vec![1], masked: vec![0], groups: vec![0; 2] }];
        let t = Tensor::zeros(&[1, 2, 1]);
        let at = |d: f64| smooth_l1(&Tensor::new(&[1, 2, 1], vec![d, 9.0]), &t, &plan, 0.5).unwrap().0;
        assert!((at(0.25) - 0.0625).abs() < 1e-15);
        assert!((at(2.0) - 1.75).abs() < 1e-15);
        assert!((at(0.5) - 0.25).abs() < 1e-15);
        assert!((at(0.5 - 1e-12) - 0.25).abs() < 1e-11);
        assert!(smooth_l1(&t, &t, &plan, 0.0).is_err());
    }

    #[test]
    fn smooth_l1_gradient() {
        let mut r = rng(1);
        let p = Tensor::randn(&[2, 5, 4], 1.0, &mut r);
        let t = Tensor::randn(&[2, 5, 4], 1.0, &mut r);
        let plans = vec![random_mask(5, 0.6, 1).unwrap(), random_mask(5, 0.6, 2).unwrap()];
        let err = grad_check(&[p], |g, v| smooth_l1_loss(g, v[0], &t, &plans, 0.5).unwrap());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn target_averaging() {
        let mut r = rng(2);
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
        let b = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
        let one = average_top_layers(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(one, normalize_rows(&b));
        let same = average_top_layers(&[b.clone(), b.clone()], 2).unwrap();
        assert!(same.max_abs_diff(&normalize_rows(&b)) < 1e-15);
        assert!(average_top_layers(&[a, b], 3).is_err());
        for row in one.data().chunks(4) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn student_sees_full_sequence_and_teacher_gets_no_gradient() {
        for family in Family::ALL {
            let enc = tiny(family);
            let student = Encoder::init(enc.clone(), 1).unwrap();
            let teacher = student.params.clone();
            let mut p = student.params.clone();
            init_student_extras(&mut p, &enc, &mut rng(3));
            let w = [window(1), window(2)];
            let ws: Vec<&SensorWindow> = w.iter().collect();
            let plans: Vec<_> = (0..2).map(|s| random_mask_for(&enc, 0.5, s).unwrap()).collect();
            let targets = teacher_targets(&teacher, &enc, &ws, 1).unwrap();
            let mut g = Graph::new();
            let (pred, seen) = student_forward(&mut g, &p, &enc, &ws, &plans).unwrap();
            assert_eq!(seen, enc.n_tokens());
            assert_eq!(g.shape(pred), targets.shape());
            let l = smooth_l1_loss(&mut g, pred, &targets, &plans, 0.5).unwrap();
            let grads = g.param_grads(&g.backward(l));
            assert_eq!(teacher, student.params);
            assert!(grads.get("mask_token").or(grads.get("mask_token.acc")).unwrap().sq_norm() > 0.0);
        }
    }

    #[test]
    fn student_gradients_match_finite_differences() {
        for family in Family::ALL {
            let mut enc = tiny(family);
            enc.depth = 1;
            let mut p = Encoder::init(enc.clone(), 4).unwrap().params;
            let teacher = p.clone();
            init_student_extras(&mut p, &enc, &mut rng(5));
            let w = [window(7), window(8)];
            let plans: Vec<_> = (0..2).map(|s| random_mask_for(&enc, 0.5, s + 3).unwrap()).collect();
            let ws: Vec<&SensorWindow> = w.iter().collect();
            let targets = teacher_targets(&teacher, &enc, &ws, 1).unwrap();
            let err = param_grad_check(&p, 3, |g, s| {
                let (pred, _) = student_forward(g, s, &enc, &ws, &plans).unwrap();
                smooth_l1_loss(g, pred, &targets, &plans, 0.5).unwrap()
            });
            assert!(err < 1e-3, "{family}: {err}");
        }
    }

    #[test]
    fn masked_slots_ignore_their_inputs() {
        let enc = tiny(Family::SensorwiseTransformer);
        let mut p = Encoder::init(enc.clone(), 1).unwrap().params;
        init_student_extras(&mut p, &enc, &mut rng(2));
        let plan = random_mask_for(&enc, 0.5, 4).unwrap();
        let a = window(10);
        let mut b = a.clone();
        let masked_frame = plan.masked.iter().find(|&&t| t < enc.frames()).copied().unwrap();
        for t in masked_frame * enc.frame_length..(masked_frame + 1) * enc.frame_length {
            b.values[t * CHANNELS] += 3.0;
        }
        let run = |w: &SensorWindow| {
            let mut g = Graph::inference();
            let (pred, _) = student_forward(&mut g, &p, &enc, &[w], std::slice::from_ref(&plan)).unwrap();
            g.value(pred).clone()
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn ema_matches_closed_form() {
        let tau = 0.9;
        let mut teacher = ParamStore::new();
        teacher.insert("w", Tensor::new(&[2], vec![1.0, -2.0]));
        let t0 = teacher.clone();
        let traj: Vec<[f64; 2]> = (0..12).map(|i| [i as f64 * 0.3, (i as f64).sin()]).collect();
        for s in &traj {
            let mut st = ParamStore::new();
            st.insert("w", Tensor::new(&[2], s.to_vec()));
            ema_update(&mut teacher, &st, tau).unwrap();
        }
        let n = traj.len() as i32;
        for j in 0..2 {
            let mut want = tau.powi(n) * t0.get("w").unwrap().data()[j];
            for (i, s) in traj.iter().enumerate() {
                want += (1.0 - tau) * tau.powi(n - 1 - i as i32) * s[j];
            }
            assert!((teacher.get("w").unwrap().data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn collapse_monitor() {
        let flat = Tensor::full(&[16, 4], 0.3);
        assert!(CollapseMonitor::statistic(&flat) < 1e-15);
        let mut m = CollapseMonitor::new(1e-4, 1);
        assert!(m.check(0, &flat).is_ok());
        assert!(m.check(1, &flat).is_ok());
        assert!(matches!(m.check(2, &flat), Err(Error::Collapse(_))));
        let mut r = rng(3);
        let noise = Tensor::new(&[20_000, 4], (0..80_000).map(|_| StandardNormal.sample(&mut r)).collect());
        let s = CollapseMonitor::statistic(&noise);
        assert!((s - 1.0).abs() < 0.02, "{s}");
        let mut off = CollapseMonitor::new(1e-4, 0);
        for i in 0..10 {
            assert!(off.check(i, &flat).is_ok());
        }
        assert!(off.history.is_empty());
    }

    #[test]
    fn pretrain_updates_teacher_and_records_settings() {
        let enc = tiny(Family::SensorwiseTransformer);
        let windows: Vec<SensorWindow> = (0..10).map(window).collect();
        let corpus = crate::harmonize::Corpus::from_windows(Default::default(), windows);
        let data = PretrainSet { corpus: &corpus, train: (0..8).collect(), val: vec![8, 9] };
        let schedule = TrainSchedule { epochs: 2, batch_size: 4, ..TrainSchedule::pretrain() };
        let cfg = D2vConfig::for_family(Family::SensorwiseTransformer);
        let init = Encoder::init(enc, 1).unwrap();
        let out = d2v_pretrain(&data, init.clone(), &cfg, &schedule, AdamConfig::default(), 3).unwrap();
        assert_eq!(out.manifest.extra["tau"], 0.9999);
        assert_eq!(out.manifest.extra["mask_ratio"], 0.5);
        assert_eq!(out.manifest.extra["top_k"], 1);
        assert_eq!(out.manifest.history.train_loss.len(), 2);
        assert_ne!(out.params.with_prefix(ENCODER_PREFIX), init.params);
    }

    #[test]
    fn ema_boundaries_are_exact() {
        let enc = tiny(Family::ConvInception);
        let t = Encoder::init(enc.clone(), 1).unwrap().params;
        let s = Encoder::init(enc, 2).unwrap().params;
        let mut keep = t.clone();
        ema_update(&mut keep, &s, 1.0).unwrap();
        assert_eq!(keep, t);
        let mut copy = t.clone();
        ema_update(&mut copy, &s, 0.0).unwrap();
        assert_eq!(copy, s);
    }

    proptest! {
        #[test]
        fn loss_ignores_visible_predictions(seed in any::<u64>(), delta in -5.0f64..5.0) {
            let mut r = rng(seed);
            let p = Tensor::randn(&[2, 6, 3], 1.0, &mut r);
            let t = Tensor::randn(&[2, 6, 3], 1.0, &mut r);
            let plans = vec![random_mask(6, 0.5, seed).unwrap(), random_mask(6, 0.5, seed ^ 7).unwrap()];
            let mut q = p.clone();
            for (i, pl) in plans.iter().enumerate() {
                for &v in &pl.visible {
                    for j in 0..3 {
                        q.data_mut()[(i * 6 + v) * 3 + j] += delta;
                    }
                }
            }
            prop_assert_eq!(smooth_l1(&p, &t, &plans, 0.5).unwrap().0, smooth_l1(&q, &t, &plans, 0.5).unwrap().0);
        }
    }
}
