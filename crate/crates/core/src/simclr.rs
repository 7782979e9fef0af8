//! Contrastive pretraining: two augmented views per window, a projection
//! head and the NT-Xent loss.

use std::f64::consts::TAU;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::backbones::{batch_input, encode, heads, Encoder, EncoderConfig, Family};
use crate::error::{Error, Result};
use crate::harmonize::{SensorWindow, CHANNELS, WINDOW_LEN};
use crate::params::ParamStore;
use crate::pretrain::{config_hash, Method, PretrainSet, Pretrained};
use crate::seed::{derive_seed, rng};
use crate::tensor::Tensor;
use crate::trainer::{run_epochs, AdamConfig, Objective, RunManifest, TrainSchedule};

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transformation {
    Rotation,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimclrConfig {
    pub temperature: f64,
    pub transformation: Transformation,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
}

fn default_sigma() -> f64 {
    0.05
}

impl SimclrConfig {
    pub fn for_family(family: Family) -> Self {
        let transformation = match family {
            Family::ConvInception => Transformation::Rotation,
            Family::SensorwiseTransformer => Transformation::Noise,
        };
        Self { temperature: 0.1, transformation, noise_sigma: default_sigma() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "simclr temperature {} must be > 0 and noise_sigma {} >= 0",
                self.temperature, self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues' formula).
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> Mat3 {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Uniform axis (normalized Gaussian) and uniform angle in `[0, 2π)`.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            let angle = rng.random_range(0.0..TAU);
            return rotation_matrix([v[0] / n, v[1] / n, v[2] / n], angle);
        }
    }
}

/// Apply `acc` to every accelerometer triple and `gyro` to every gyroscope triple.
pub fn rotate_with(values: &[f64], acc: &Mat3, gyro: &Mat3) -> Vec<f64> {
    let mut out = values.to_vec();
    for t in 0..WINDOW_LEN {
        for (s, m) in [acc, gyro].into_iter().enumerate() {
            let base = t * CHANNELS + 3 * s;
            let v = &values[base..base + 3];
            for r in 0..3 {
                out[base + r] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
            }
        }
    }
    out
}

/// Independent random rotations of the accelerometer and gyroscope triples.
pub fn rotate3d(window: &SensorWindow, seed: u64) -> SensorWindow {
    let mut r = rng(seed);
    let acc = random_rotation(&mut r);
    let gyro = random_rotation(&mut r);
    SensorWindow { values: rotate_with(&window.values, &acc, &gyro), ..window.clone() }
}

/// Additive zero-mean Gaussian noise of standard deviation `sigma`.
pub fn jitter_noise(window: &SensorWindow, sigma: f64, seed: u64) -> SensorWindow {
    let mut out = window.clone();
    if sigma > 0.0 {
        let mut r = rng(seed);
        let n = Normal::new(0.0, sigma).expect("sigma > 0");
        for v in out.values.iter_mut() {
            *v += n.sample(&mut r);
        }
    }
    out
}

pub fn augment(window: &SensorWindow, cfg: &SimclrConfig, seed: u64) -> SensorWindow {
    match cfg.transformation {
        Transformation::Rotation => rotate3d(window, seed),
        Transformation::Noise => jitter_noise(window, cfg.noise_sigma, seed),
    }
}

/// NT-Xent over the 2N rows of `z` where row `i` and row `i + N` are a
/// positive pair. Returns the mean per-anchor loss and its gradient.
pub fn nt_xent_joint(z: &Tensor, temperature: f64) -> Result<(f64, Tensor)> {
    let (m, d) = (z.shape()[0], z.shape()[1]);
    let n = m / 2;
    if m % 2 != 0 || n < 2 {
        return Err(Error::InvalidArgument(format!("NT-Xent needs at least 2 pairs, got {m} rows")));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let norms: Vec<f64> = (0..m).map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)).collect();
    let u: Vec<f64> = (0..m).flat_map(|i| z.row(i).iter().map(|v| v / norms[i]).collect::<Vec<_>>()).collect();
    let mut sim = vec![0.0; m * m];
    crate::tensor::gemm(m, d, m, &u, false, &u, true, &mut sim, 0.0);
    let pos = |i: usize| if i < n { i + n } else { i - n };
    let mut loss = 0.0;
    // a[i][k] = dL/ds_ik (scaled similarity) from anchor i
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        let row: Vec<f64> = (0..m).map(|k| sim[i * m + k] / temperature).collect();
        let mx = (0..m).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&k| k != i).map(|k| (row[k] - mx).exp()).sum();
        loss += -(row[pos(i)] - mx) + denom.ln();
        for k in (0..m).filter(|&k| k != i) {
            let p = (row[k] - mx).exp() / denom;
            a[i * m + k] = (p - if k == pos(i) { 1.0 } else { 0.0 }) / m as f64;
        }
    }
    loss /= m as f64;
    let mut grad = vec![0.0; m * d];
    for i in 0..m {
        let mut gu = vec![0.0; d];
        for k in 0..m {
            let w = (a[i * m + k] + a[k * m + i]) / temperature;
            if w != 0.0 {
                for (g, uk) in gu.iter_mut().zip(&u[k * d..(k + 1) * d]) {
                    *g += w * uk;
                }
            }
        }
        let ui = &u[i * d..(i + 1) * d];
        let dot: f64 = gu.iter().zip(ui).map(|(g, u)| g * u).sum();
        for j in 0..d {
            grad[i * d + j] = (gu[j] - ui[j] * dot) / norms[i];
        }
    }
    Ok((loss, Tensor::new(&[m, d], grad)))
}

/// NT-Xent over the views `z_a`, `z_b` (`[N, D]` each).
pub fn nt_xent(z_a: &Tensor, z_b: &Tensor, temperature: f64) -> Result<(f64, Tensor, Tensor)> {
    if z_a.shape() != z_b.shape() || z_a.shape().len() != 2 {
        return Err(Error::Shape(format!("views {:?} vs {:?}", z_a.shape(), z_b.shape())));
    }
    let (n, d) = (z_a.shape()[0], z_a.shape()[1]);
    let mut data = z_a.data().to_vec();
    data.extend_from_slice(z_b.data());
    let (l, g) = nt_xent_joint(&Tensor::new(&[2 * n, d], data), temperature)?;
    let (ga, gb) = g.data().split_at(n * d);
    Ok((l, Tensor::new(&[n, d], ga.to_vec()), Tensor::new(&[n, d], gb.to_vec())))
}

/// Graph node for [`nt_xent_joint`].
pub fn nt_xent_loss(g: &mut Graph, z: Var, temperature: f64) -> Result<Var> {
    let (l, grad) = nt_xent_joint(g.value(z), temperature)?;
    Ok(g.loss(&[z], l, vec![grad]))
}

/// Encoder + projection head on `2N` windows (views of pair `i` at `i`, `i + N`).
fn pair_loss(
    g: &mut Graph,
    params: &ParamStore,
    enc: &EncoderConfig,
    cfg: &SimclrConfig,
    windows: &[&SensorWindow],
    seeds: &[u64],
) -> Result<Var> {
    let n = windows.len();
    let views: Vec<SensorWindow> = (0..2 * n).map(|j| augment(windows[j % n], cfg, seeds[j])).collect();
    let x = g.constant(batch_input(&views.iter().collect::<Vec<_>>()));
    let e = encode(g, params, enc, x);
    let z = heads::projection(g, params, e.pooled);
    nt_xent_loss(g, z, cfg.temperature)
}

struct SimclrObjective<'a> {
    data: &'a PretrainSet<'a>,
    enc: EncoderConfig,
    cfg: SimclrConfig,
    val_batch: usize,
    val_seed: u64,
}

impl Objective for SimclrObjective<'_> {
    fn loss(&mut self, params: &ParamStore, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<(Graph, Var)> {
        let mut idx: Vec<usize> = batch.iter().map(|&i| self.data.train[i]).collect();
        if idx.len() < 2 {
            // a lone trailing item gets a random partner so it still has a negative
            idx.push(self.data.train[rng.random_range(0..self.data.train.len())]);
        }
        let windows = self.data.windows(&idx);
        let seeds: Vec<u64> = (0..2 * windows.len()).map(|_| rng.next_u64()).collect();
        let mut g = Graph::new();
        let l = pair_loss(&mut g, params, &self.enc, &self.cfg, &windows, &seeds)?;
        Ok((g, l))
    }

    fn validate(&mut self, params: &ParamStore) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0.0;
        for (b, chunk) in self.data.val.chunks(self.val_batch).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let windows = self.data.windows(chunk);
            let seeds: Vec<u64> =
                (0..2 * windows.len()).map(|j| derive_seed(self.val_seed, &format!("{b}/{j}"))).collect();
            let mut g = Graph::inference();
            let l = pair_loss(&mut g, params, &self.enc, &self.cfg, &windows, &seeds)?;
            total += g.value(l).item() * chunk.len() as f64;
            count += chunk.len() as f64;
        }
        if count == 0.0 {
            return Err(Error::InvalidArgument("simclr validation needs at least 2 windows".into()));
        }
        Ok(total / count)
    }
}

pub fn simclr_pretrain(
    data: &PretrainSet,
    encoder: Encoder,
    cfg: &SimclrConfig,
    schedule: &TrainSchedule,
    adam: AdamConfig,
    seed: u64,
) -> Result<Pretrained> {
    cfg.validate()?;
    data.check()?;
    let mut params = encoder.params.clone();
    heads::init_projection(&mut params, encoder.config.embedding_width(), &mut crate::seed::rng_for(seed, "proj-init"));
    let mut obj = SimclrObjective {
        data,
        enc: encoder.config.clone(),
        cfg: cfg.clone(),
        val_batch: schedule.batch_size.max(2),
        val_seed: derive_seed(seed, "simclr-val"),
    };
    let out = run_epochs(params, data.train.len(), &mut obj, schedule, adam, seed)?;
    let hash = config_hash(&(&encoder.config, cfg, schedule, adam));
    let mut manifest = RunManifest::from_outcome(hash, seed, schedule, adam, &out);
    manifest.extra = serde_json::json!({ "method": "simclr", "simclr": cfg, "batch_size": schedule.batch_size });
    Ok(Pretrained { method: Method::Simclr, encoder: encoder.config, params: out.best_params, manifest })
}
