//! Masked autoencoding: random token masking, visible-only encoding, mask
//! token insertion, a lightweight decoder and a masked reconstruction loss.

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::backbones::layers::{self, gather_with_fill, init_block, init_conv, init_layer_norm, init_linear, linear};
use crate::backbones::{batch_input, inception, tokenize, transformer, Encoder, EncoderConfig, Family};
use crate::error::{Error, Result};
use crate::harmonize::{SensorWindow, CHANNELS};
use crate::params::ParamStore;
use crate::pretrain::{config_hash, Method, PretrainSet, Pretrained};
use crate::seed::{derive_seed, rng, rng_for};
use crate::tensor::Tensor;
use crate::trainer::{run_epochs, AdamConfig, Objective, RunManifest, TrainSchedule};

pub const MASK_TOKEN_PREFIX: &str = "mask_token";
pub const DECODER_MLP_RATIO: usize = 4;
pub const DECODER_KERNEL: usize = 3;
const MASK_TOKEN_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaeConfig {
    pub mask_ratio: f64,
    pub decoder_depth: usize,
    /// Token width of the transformer decoder.
    #[serde(default)]
    pub decoder_width: usize,
    /// Channels of the convolutional decoder.
    #[serde(default)]
    pub decoder_filters: usize,
    /// One mask token per sensor group instead of a shared one.
    #[serde(default)]
    pub sensorwise_tokens: bool,
}

impl MaeConfig {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::ConvInception => Self {
                mask_ratio: 0.6,
                decoder_depth: 4,
                decoder_width: 0,
                decoder_filters: 192,
                sensorwise_tokens: false,
            },
            Family::SensorwiseTransformer => Self {
                mask_ratio: 0.6,
                decoder_depth: 6,
                decoder_width: 252,
                decoder_filters: 0,
                sensorwise_tokens: true,
            },
        }
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("mae config: {m}")));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} must lie in (0, 1)", self.mask_ratio));
        }
        if self.decoder_depth == 0 {
            return bad("decoder_depth must be at least 1".into());
        }
        match enc.family {
            Family::SensorwiseTransformer if self.decoder_width == 0 => bad("decoder_width must be at least 1".into()),
            Family::ConvInception if self.decoder_filters == 0 => bad("decoder_filters must be at least 1".into()),
            Family::ConvInception if self.sensorwise_tokens => {
                bad("sensorwise_tokens needs the sensor-wise transformer family".into())
            }
            _ => {
                visible_count(enc.n_tokens(), self.mask_ratio)?;
                Ok(())
            }
        }
    }

    fn decoder_dim(&self, enc: &EncoderConfig) -> usize {
        match enc.family {
            Family::SensorwiseTransformer => self.decoder_width,
            Family::ConvInception => self.decoder_filters,
        }
    }
}

/// Visible and masked token indices of one window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub n_tokens: usize,
    /// Ascending.
    pub visible: Vec<usize>,
    /// Ascending.
    pub masked: Vec<usize>,
    /// Sensor group of every token (all zero without sensor groups).
    pub groups: Vec<usize>,
}

impl MaskPlan {
    pub fn is_masked(&self, token: usize) -> bool {
        self.masked.binary_search(&token).is_ok()
    }
}

/// `floor(n * (1 - ratio))`, rejecting plans without visible or masked tokens.
pub fn visible_count(n: usize, ratio: f64) -> Result<usize> {
    let v = (n as f64 * (1.0 - ratio) + 1e-9).floor().max(0.0) as usize;
    if n < 2 || v == 0 || v >= n {
        return Err(Error::DegenerateMask { n_tokens: n, visible: v });
    }
    Ok(v)
}

pub fn random_mask(n_tokens: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    let v = visible_count(n_tokens, mask_ratio)?;
    let mut perm: Vec<usize> = (0..n_tokens).collect();
    perm.shuffle(&mut rng(seed));
    let mut visible = perm[..v].to_vec();
    let mut masked = perm[v..].to_vec();
    visible.sort_unstable();
    masked.sort_unstable();
    Ok(MaskPlan { n_tokens, visible, masked, groups: vec![0; n_tokens] })
}

/// [`random_mask`] over an encoder's tokens, with sensor groups filled in.
pub fn random_mask_for(enc: &EncoderConfig, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    let mut plan = random_mask(enc.n_tokens(), mask_ratio, seed)?;
    plan.groups = (0..enc.n_tokens()).map(|t| enc.token_sensor(t).unwrap_or(0)).collect();
    Ok(plan)
}

pub(crate) fn check_plans(enc: &EncoderConfig, plans: &[MaskPlan]) -> Result<usize> {
    let v = plans.first().map(|p| p.visible.len()).ok_or_else(|| Error::Shape("no mask plans".into()))?;
    for p in plans {
        if p.n_tokens != enc.n_tokens() || p.visible.len() != v || p.masked.is_empty() {
            return Err(Error::Shape(format!(
                "mask plan over {} tokens with {} visible does not fit {} tokens / {v} visible",
                p.n_tokens,
                p.visible.len(),
                enc.n_tokens()
            )));
        }
    }
    Ok(v)
}

/// Learnable mask tokens `[count, width]`, one per sensor group or shared.
pub fn init_mask_tokens<R: rand::Rng + ?Sized>(store: &mut ParamStore, width: usize, sensorwise: bool, rng: &mut R) {
    if sensorwise {
        for s in transformer::SENSORS {
            store.insert(format!("{MASK_TOKEN_PREFIX}.{s}"), Tensor::randn(&[1, width], MASK_TOKEN_STD, rng));
        }
    } else {
        store.insert(MASK_TOKEN_PREFIX, Tensor::randn(&[1, width], MASK_TOKEN_STD, rng));
    }
}

/// All mask tokens as rows `[count, width]` and the row used by each sensor group.
pub(crate) fn mask_token_rows(g: &mut Graph, store: &ParamStore, sensorwise: bool) -> (Var, [usize; 2]) {
    if sensorwise {
        let parts: Vec<Var> =
            transformer::SENSORS.iter().map(|s| g.param(store, &format!("{MASK_TOKEN_PREFIX}.{s}"))).collect();
        (g.concat(&parts, 0), [0, 1])
    } else {
        (g.param(store, MASK_TOKEN_PREFIX), [0, 0])
    }
}

/// Row indices placing `v` encoded rows per sample and the mask token rows
/// (which start at `fill_base`) into full-length sequences.
pub(crate) fn assembly_index(plans: &[MaskPlan], fill_base: usize, rows: [usize; 2]) -> Vec<usize> {
    let mut idx = Vec::new();
    for (b, p) in plans.iter().enumerate() {
        let v = p.visible.len();
        let mut next = 0;
        for t in 0..p.n_tokens {
            if next < v && p.visible[next] == t {
                idx.push(b * v + next);
                next += 1;
            } else {
                idx.push(fill_base + rows[p.groups[t].min(1)]);
            }
        }
    }
    idx
}

pub fn init_mae<R: rand::Rng + ?Sized>(store: &mut ParamStore, enc: &EncoderConfig, cfg: &MaeConfig, rng: &mut R) {
    let width = enc.embedding_width();
    let d = cfg.decoder_dim(enc);
    init_mask_tokens(store, width, cfg.sensorwise_tokens, rng);
    init_linear(store, "decoder.embed", width, d, rng);
    for i in 0..cfg.decoder_depth {
        let name = format!("decoder.block{i}");
        match enc.family {
            Family::SensorwiseTransformer => init_block(store, &name, d, DECODER_MLP_RATIO, rng),
            Family::ConvInception => init_conv(store, &name, DECODER_KERNEL, d, d, rng),
        }
    }
    if enc.family == Family::SensorwiseTransformer {
        init_layer_norm(store, "decoder.norm", d);
    }
    init_linear(store, "decoder.out", d, enc.token_values(), rng);
}

fn decoder_heads(enc: &EncoderConfig, width: usize) -> usize {
    if enc.heads > 0 && width % enc.heads == 0 {
        enc.heads
    } else {
        1
    }
}

/// Forward products of one MAE pass.
pub struct MaeForward {
    /// Reconstructed raw tokens `[batch, tokens, token_values]`.
    pub recon: Var,
    /// Original raw tokens, same layout.
    pub target: Tensor,
    /// Tokens per window that entered the encoder.
    pub encoder_tokens: usize,
}

pub fn mae_forward(
    g: &mut Graph,
    params: &ParamStore,
    enc: &EncoderConfig,
    cfg: &MaeConfig,
    windows: &[&SensorWindow],
    plans: &[MaskPlan],
) -> Result<MaeForward> {
    if windows.len() != plans.len() {
        return Err(Error::Shape(format!("{} windows but {} mask plans", windows.len(), plans.len())));
    }
    let v = check_plans(enc, plans)?;
    let (b, n) = (windows.len(), enc.n_tokens());
    let x = g.constant(batch_input(windows));
    let raw = tokenize(g, enc, x);
    let target = g.value(raw).clone();
    let vis_rows: Vec<usize> = plans.iter().enumerate().flat_map(|(i, p)| p.visible.iter().map(move |&t| i * n + t)).collect();
    let width = enc.embedding_width();
    let (encoded, encoder_tokens) = match enc.family {
        Family::SensorwiseTransformer => {
            let t = transformer::embed(g, params, enc, x);
            let t = transformer::add_positions(g, enc, t);
            let t = g.reshape(t, &[b * n, width]);
            let t = g.select_rows(t, &vis_rows);
            let t = g.reshape(t, &[b, v, width]);
            let seen = g.shape(t)[1];
            let (out, _) = transformer::blocks(g, params, enc, t);
            (g.reshape(out, &[b * v, width]), seen)
        }
        Family::ConvInception => {
            let frames = g.reshape(raw, &[b * n, enc.token_values()]);
            let frames = g.select_rows(frames, &vis_rows);
            let frames = g.reshape(frames, &[b * v, enc.frame_length, CHANNELS]);
            let seen = g.shape(frames)[0] / b;
            let (out, _) = inception::forward(g, params, enc, frames);
            (g.mean_axis(out, 1), seen)
        }
    };
    let (fill, rows) = mask_token_rows(g, params, cfg.sensorwise_tokens);
    let full = gather_with_fill(g, encoded, fill, &assembly_index(plans, b * v, rows));
    let d = cfg.decoder_dim(enc);
    let h = linear(g, params, "decoder.embed", full);
    let h = g.reshape(h, &[b, n, d]);
    let pe = g.constant(layers::sinusoidal(n, d));
    let mut h = g.add_bcast(h, pe);
    for i in 0..cfg.decoder_depth {
        let name = format!("decoder.block{i}");
        h = match enc.family {
            Family::SensorwiseTransformer => layers::block(g, params, &name, h, decoder_heads(enc, d)),
            Family::ConvInception => {
                let c = layers::conv(g, params, &name, h, DECODER_KERNEL);
                let c = g.relu(c);
                g.add(h, c)
            }
        };
    }
    if enc.family == Family::SensorwiseTransformer {
        h = layers::layer_norm(g, params, "decoder.norm", h);
    }
    let recon = linear(g, params, "decoder.out", h);
    Ok(MaeForward { recon, target, encoder_tokens })
}

/// Mean squared error over the masked tokens of `[batch, tokens, values]`
/// tensors, with its gradient with respect to `recon`.
pub fn masked_mse(recon: &Tensor, target: &Tensor, plans: &[MaskPlan]) -> Result<(f64, Tensor)> {
    if recon.shape() != target.shape() || recon.shape().len() != 3 || recon.shape()[0] != plans.len() {
        return Err(Error::Shape(format!("reconstruction {:?} vs target {:?}", recon.shape(), target.shape())));
    }
    let (n, tv) = (recon.shape()[1], recon.shape()[2]);
    let count: usize = plans.iter().map(|p| p.masked.len()).sum::<usize>() * tv;
    let mut grad = Tensor::zeros(recon.shape());
    let mut sum = 0.0;
    for (b, p) in plans.iter().enumerate() {
        for &t in &p.masked {
            let off = (b * n + t) * tv;
            for j in off..off + tv {
                let d = recon.data()[j] - target.data()[j];
                sum += d * d;
                grad.data_mut()[j] = 2.0 * d / count as f64;
            }
        }
    }
    Ok((sum / count as f64, grad))
}

pub fn masked_mse_loss(g: &mut Graph, recon: Var, target: &Tensor, plans: &[MaskPlan]) -> Result<Var> {
    let (l, grad) = masked_mse(g.value(recon), target, plans)?;
    Ok(g.loss(&[recon], l, vec![grad]))
}

/// Masked-token MSE between windows `[batch, 128, 6]`.
pub fn mae_loss(enc: &EncoderConfig, recon: &Tensor, original: &Tensor, plans: &[MaskPlan]) -> Result<f64> {
    let tok = |t: &Tensor| {
        let mut g = Graph::inference();
        let x = g.constant(t.clone());
        let y = tokenize(&mut g, enc, x);
        g.value(y).clone()
    };
    Ok(masked_mse(&tok(recon), &tok(original), plans)?.0)
}

fn batch_loss(
    g: &mut Graph,
    params: &ParamStore,
    enc: &EncoderConfig,
    cfg: &MaeConfig,
    windows: &[&SensorWindow],
    seeds: &[u64],
) -> Result<Var> {
    let plans = seeds.iter().map(|&s| random_mask_for(enc, cfg.mask_ratio, s)).collect::<Result<Vec<_>>>()?;
    let out = mae_forward(g, params, enc, cfg, windows, &plans)?;
    masked_mse_loss(g, out.recon, &out.target, &plans)
}

struct MaeObjective<'a> {
    data: &'a PretrainSet<'a>,
    enc: EncoderConfig,
    cfg: MaeConfig,
    val_batch: usize,
    val_seed: u64,
}

impl Objective for MaeObjective<'_> {
    fn loss(&mut self, params: &ParamStore, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<(Graph, Var)> {
        let idx: Vec<usize> = batch.iter().map(|&i| self.data.train[i]).collect();
        let seeds: Vec<u64> = idx.iter().map(|_| rng.next_u64()).collect();
        let mut g = Graph::new();
        let l = batch_loss(&mut g, params, &self.enc, &self.cfg, &self.data.windows(&idx), &seeds)?;
        Ok((g, l))
    }

    fn validate(&mut self, params: &ParamStore) -> Result<f64> {
        let mut total = 0.0;
        for (b, chunk) in self.data.val.chunks(self.val_batch).enumerate() {
            let seeds: Vec<u64> = (0..chunk.len()).map(|j| derive_seed(self.val_seed, &format!("{b}/{j}"))).collect();
            let mut g = Graph::inference();
            let l = batch_loss(&mut g, params, &self.enc, &self.cfg, &self.data.windows(chunk), &seeds)?;
            total += g.value(l).item() * chunk.len() as f64;
        }
        Ok(total / self.data.val.len() as f64)
    }
}

pub fn mae_pretrain(
    data: &PretrainSet,
    encoder: Encoder,
    cfg: &MaeConfig,
    schedule: &TrainSchedule,
    adam: AdamConfig,
    seed: u64,
) -> Result<Pretrained> {
    cfg.validate(&encoder.config)?;
    data.check()?;
    let mut params = encoder.params.clone();
    init_mae(&mut params, &encoder.config, cfg, &mut rng_for(seed, "mae-init"));
    let mut obj = MaeObjective {
        data,
        enc: encoder.config.clone(),
        cfg: cfg.clone(),
        val_batch: schedule.batch_size,
        val_seed: derive_seed(seed, "mae-val"),
    };
    let out = run_epochs(params, data.train.len(), &mut obj, schedule, adam, seed)?;
    let hash = config_hash(&(&encoder.config, cfg, schedule, adam));
    let mut manifest = RunManifest::from_outcome(hash, seed, schedule, adam, &out);
    manifest.extra = serde_json::json!({ "method": "mae", "mae": cfg, "mask_ratio": cfg.mask_ratio });
    Ok(Pretrained { method: Method::Mae, encoder: encoder.config, params: out.best_params, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tests::{grad_check, param_grad_check};
    use crate::harmonize::WINDOW_LEN;
    use proptest::prelude::*;

    fn tiny(family: Family) -> (EncoderConfig, MaeConfig) {
        let mut enc = EncoderConfig::desk(family);
        let mut cfg = MaeConfig::for_family(family);
        cfg.decoder_depth = 1;
        match family {
            Family::SensorwiseTransformer => {
                enc.embed_dim = 8;
                enc.depth = 1;
                enc.frame_length = 32;
                cfg.decoder_width = 6;
            }
            Family::ConvInception => {
                enc.filters = 2;
                enc.bottleneck = 2;
                enc.depth = 1;
                enc.kernels = vec![3];
                enc.frame_length = 32;
                cfg.decoder_filters = 4;
            }
        }
        (enc, cfg)
    }

    fn window(seed: u64) -> SensorWindow {
        let t = Tensor::randn(&[WINDOW_LEN * CHANNELS], 1.0, &mut rng(seed));
        SensorWindow::new(format!("d/s/0/{seed}"), t.into_data(), 0, "s".into(), "d".into()).unwrap()
    }

    fn setup(family: Family, seed: u64) -> (EncoderConfig, MaeConfig, ParamStore) {
        let (enc, cfg) = tiny(family);
        let mut p = Encoder::init(enc.clone(), seed).unwrap().params;
        init_mae(&mut p, &enc, &cfg, &mut rng(seed + 1));
        (enc, cfg, p)
    }

    #[test]
    fn mask_plan_examples() {
        let p = random_mask(32, 0.6, 3).unwrap();
        assert_eq!((p.visible.len(), p.masked.len()), (12, 20));
        assert_eq!(random_mask(32, 0.6, 3).unwrap(), p);
        assert_ne!(random_mask(32, 0.6, 4).unwrap(), p);
        assert!(random_mask(4, 0.8, 0).is_err());
        assert_eq!(random_mask(4, 0.1, 0).unwrap().masked.len(), 1);
        assert!(random_mask(1, 0.5, 0).is_err());
        let enc = EncoderConfig::desk(Family::SensorwiseTransformer);
        let p = random_mask_for(&enc, 0.5, 1).unwrap();
        assert_eq!(p.groups[15], 0);
        assert_eq!(p.groups[16], 1);
    }

    #[test]
    fn loss_examples() {
        let enc = EncoderConfig::desk(Family::ConvInception);
        let orig = Tensor::randn(&[1, WINDOW_LEN, CHANNELS], 1.0, &mut rng(0));
        let plan = MaskPlan {
            n_tokens: 8,
            visible: vec![3],
            masked: vec![0, 1, 2, 4, 5, 6, 7],
            groups: vec![0; 8],
        };
        let plans = [plan];
        assert_eq!(mae_loss(&enc, &orig, &orig, &plans).unwrap(), 0.0);
        let shifted = orig.map(|v| v + 1.0);
        assert!((mae_loss(&enc, &shifted, &orig, &plans).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_gradient() {
        let mut r = rng(2);
        let a = Tensor::randn(&[2, 5, 3], 1.0, &mut r);
        let t = Tensor::randn(&[2, 5, 3], 1.0, &mut r);
        let plans = vec![random_mask(5, 0.6, 1).unwrap(), random_mask(5, 0.6, 2).unwrap()];
        let err = grad_check(&[a], |g, v| masked_mse_loss(g, v[0], &t, &plans).unwrap());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn encoder_sees_only_visible_tokens() {
        for family in Family::ALL {
            let (enc, cfg, p) = setup(family, 3);
            let w = [window(1), window(2)];
            let ws: Vec<&SensorWindow> = w.iter().collect();
            let plans: Vec<_> = (0..2).map(|s| random_mask_for(&enc, 0.6, s).unwrap()).collect();
            let mut g = Graph::inference();
            let out = mae_forward(&mut g, &p, &enc, &cfg, &ws, &plans).unwrap();
            assert_eq!(out.encoder_tokens, plans[0].visible.len());
            assert_eq!(g.shape(out.recon), &[2, enc.n_tokens(), enc.token_values()]);
            let recon = crate::backbones::untokenize(&enc, g.value(out.recon));
            assert_eq!(recon.shape(), &[2, WINDOW_LEN, CHANNELS]);
        }
    }

    #[test]
    fn sensor_specific_mask_tokens_fill_their_slots() {
        let enc = EncoderConfig::desk(Family::SensorwiseTransformer);
        let plan = random_mask_for(&enc, 0.5, 9).unwrap();
        let idx = assembly_index(&[plan.clone()], 100, [0, 1]);
        for &t in &plan.masked {
            assert_eq!(idx[t], 100 + enc.token_sensor(t).unwrap());
        }
        for (j, &t) in plan.visible.iter().enumerate() {
            assert_eq!(idx[t], j);
        }
        let shared = assembly_index(&[plan.clone()], 100, [0, 0]);
        assert!(plan.masked.iter().all(|&t| shared[t] == 100));
    }

    #[test]
    fn end_to_end_gradients_reach_every_part() {
        for family in Family::ALL {
            let (enc, cfg, p) = setup(family, 5);
            let w = [window(3), window(4)];
            let plans: Vec<_> = (0..2).map(|s| random_mask_for(&enc, 0.5, s + 10).unwrap()).collect();
            let build = |g: &mut Graph, s: &ParamStore| {
                let ws: Vec<&SensorWindow> = w.iter().collect();
                let out = mae_forward(g, s, &enc, &cfg, &ws, &plans).unwrap();
                masked_mse_loss(g, out.recon, &out.target, &plans).unwrap()
            };
            let err = param_grad_check(&p, 3, build);
            assert!(err < 1e-3, "{family}: {err}");
            let mut g = Graph::new();
            let l = build(&mut g, &p);
            let grads = g.param_grads(&g.backward(l));
            let tok = grads.with_prefix(MASK_TOKEN_PREFIX);
            assert!(!tok.is_empty() && tok.iter().all(|(_, t)| t.sq_norm() > 0.0), "{family}");
        }
    }

    #[test]
    fn learns_constant_signal() {
        let (enc, mut cfg) = tiny(Family::SensorwiseTransformer);
        cfg.mask_ratio = 0.3;
        let windows: Vec<SensorWindow> = (0..8)
            .map(|i| SensorWindow::new(format!("d/s/0/{i}"), vec![0.5; WINDOW_LEN * CHANNELS], 0, "s".into(), "d".into()).unwrap())
            .collect();
        let corpus = crate::harmonize::Corpus::from_windows(Default::default(), windows);
        let data = PretrainSet { corpus: &corpus, train: (0..6).collect(), val: vec![6, 7] };
        let schedule = TrainSchedule { epochs: 50, batch_size: 6, patience: None, ..TrainSchedule::pretrain() };
        let adam = AdamConfig { lr: 1e-2, ..AdamConfig::default() };
        let out = mae_pretrain(&data, Encoder::init(enc, 1).unwrap(), &cfg, &schedule, adam, 2).unwrap();
        let h = &out.manifest.history.train_loss;
        assert!(*h.last().unwrap() < 1e-3, "{h:?}");
        assert_eq!(out.manifest.extra["mask_ratio"], 0.3);
        let dir = tempfile::tempdir().unwrap();
        out.save(dir.path(), 2, None, &[MASK_TOKEN_PREFIX]).unwrap();
        let (_, p) = crate::backbones::load_checkpoint(dir.path()).unwrap();
        assert!(p.contains("mask_token.acc") && !p.names().any(|n| n.starts_with("decoder.")));
    }

    #[test]
    fn defaults_and_validation() {
        let t = MaeConfig::for_family(Family::SensorwiseTransformer);
        assert_eq!((t.mask_ratio, t.decoder_depth, t.decoder_width), (0.6, 6, 252));
        let c = MaeConfig::for_family(Family::ConvInception);
        assert_eq!((c.mask_ratio, c.decoder_depth, c.decoder_filters), (0.6, 4, 192));
        let enc = EncoderConfig::desk(Family::ConvInception);
        assert!(c.validate(&enc).is_ok());
        assert!(MaeConfig { mask_ratio: 1.0, ..c.clone() }.validate(&enc).is_err());
        assert!(MaeConfig { sensorwise_tokens: true, ..c.clone() }.validate(&enc).is_err());
        assert!(MaeConfig { decoder_filters: 0, ..c }.validate(&enc).is_err());
    }

    proptest! {
        #[test]
        fn visible_count_matches_integer_floor(n in 2usize..=64, r in 0usize..4, seed in any::<u64>()) {
            let (num, den) = [(1, 4), (1, 2), (3, 5), (3, 4)][r];
            let ratio = num as f64 / den as f64;
            let want = n * (den - num) / den;
            match random_mask(n, ratio, seed) {
                Ok(p) => {
                    prop_assert_eq!(p.visible.len(), want);
                    prop_assert_eq!(p.visible.len() + p.masked.len(), n);
                    let mut all: Vec<usize> = p.visible.iter().chain(&p.masked).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                }
                Err(_) => prop_assert!(want == 0 || want == n),
            }
        }

        #[test]
        fn loss_ignores_visible_tokens(seed in any::<u64>(), delta in -5.0f64..5.0) {
            let mut r = rng(seed);
            let a = Tensor::randn(&[2, 6, 3], 1.0, &mut r);
            let t = Tensor::randn(&[2, 6, 3], 1.0, &mut r);
            let plans = vec![random_mask(6, 0.5, seed).unwrap(), random_mask(6, 0.5, seed ^ 1).unwrap()];
            let mut b = a.clone();
            for (i, p) in plans.iter().enumerate() {
                for &v in &p.visible {
                    for j in 0..3 {
                        b.data_mut()[(i * 6 + v) * 3 + j] += delta;
                    }
                }
            }
            prop_assert_eq!(masked_mse(&a, &t, &plans).unwrap().0, masked_mse(&b, &t, &plans).unwrap().0);
        }
    }
}
