//! Sensor-wise token transformer.
//!
//! Each sensor (accelerometer, gyroscope) is cut into non-overlapping frames
//! of `frame_length` timesteps; every frame is linearly projected by a
//! sensor-specific projector. Tokens are grouped per sensor (accelerometer
//! block, then gyroscope block) and positions restart within each block.

use rand::Rng;

use super::layers::{self, block, init_block, init_layer_norm, init_linear, linear};
use super::{tokenize, EncoderConfig};
use crate::autodiff::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const SENSORS: [&str; 2] = ["acc", "gyro"];

pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    for s in SENSORS {
        init_linear(store, &format!("encoder.embed.{s}"), cfg.frame_length * 3, cfg.embed_dim, rng);
    }
    for i in 0..cfg.depth {
        init_block(store, &format!("encoder.block{i}"), cfg.embed_dim, cfg.mlp_ratio, rng);
    }
    init_layer_norm(store, "encoder.norm", cfg.embed_dim);
}

/// Projected tokens `[b, 2F, E]` without positional encodings.
pub fn embed(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, x: Var) -> Var {
    let b = g.shape(x)[0];
    let f = cfg.frames();
    let tv = cfg.token_values();
    let raw = tokenize(g, cfg, x);
    let by_sensor = g.reshape(raw, &[b, 2, f, tv]);
    let by_sensor = g.permute(by_sensor, &[1, 0, 2, 3]);
    let by_sensor = g.reshape(by_sensor, &[2, b * f * tv]);
    let parts: Vec<Var> = SENSORS
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let frames = g.select_rows(by_sensor, &[i]);
            let frames = g.reshape(frames, &[b, f, tv]);
            linear(g, store, &format!("encoder.embed.{s}"), frames)
        })
        .collect();
    g.concat(&parts, 1)
}

/// Position table `[2F, E]`: positions `0..F` for each sensor block.
pub fn positions(cfg: &EncoderConfig) -> Tensor {
    let one = layers::sinusoidal(cfg.frames(), cfg.embed_dim);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    Tensor::new(&[cfg.n_tokens(), cfg.embed_dim], data)
}

pub fn add_positions(g: &mut Graph, cfg: &EncoderConfig, tokens: Var) -> Var {
    let pe = g.constant(positions(cfg));
    g.add_bcast(tokens, pe)
}

/// Transformer blocks on `[b, n, E]` tokens (any subset of positions).
/// Returns the final normalized tokens and every block output.
pub fn blocks(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, tokens: Var) -> (Var, Vec<Var>) {
    let mut x = tokens;
    let mut outs = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        x = block(g, store, &format!("encoder.block{i}"), x, cfg.heads);
        outs.push(x);
    }
    let out = layers::layer_norm(g, store, "encoder.norm", x);
    (out, outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{batch_input, Encoder, Family};
    use crate::harmonize::SensorWindow;

    fn window(f: impl Fn(usize, usize) -> f64) -> SensorWindow {
        let values = (0..128 * 6).map(|i| f(i / 6, i % 6)).collect();
        SensorWindow::new("d/s/0/0".into(), values, 0, "s".into(), "d".into()).unwrap()
    }

    fn tokens(enc: &Encoder, w: &SensorWindow, with_pos: bool) -> Tensor {
        let mut g = Graph::inference();
        let x = g.constant(batch_input(&[w]));
        let mut t = embed(&mut g, &enc.params, &enc.config, x);
        if with_pos {
            t = add_positions(&mut g, &enc.config, t);
        }
        g.value(t).clone()
    }

    #[test]
    fn zero_window_gives_zero_tokens_before_positions() {
        let enc = Encoder::init(crate::backbones::EncoderConfig::desk(Family::SensorwiseTransformer), 0).unwrap();
        let t = tokens(&enc, &window(|_, _| 0.0), false);
        assert_eq!(t.shape(), &[1, 32, 32]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t = tokens(&enc, &window(|_, _| 0.0), true);
        assert_eq!(t.data()[..32], positions(&enc.config).data()[..32]);
        assert_eq!(t.data()[16 * 32..17 * 32], t.data()[..32]);
    }

    #[test]
    fn gyro_changes_leave_accel_tokens_alone() {
        let enc = Encoder::init(crate::backbones::EncoderConfig::desk(Family::SensorwiseTransformer), 1).unwrap();
        let a = window(|t, c| (t * 7 + c) as f64 * 0.01);
        let b = window(|t, c| if c < 3 { (t * 7 + c) as f64 * 0.01 } else { 0.0 });
        let (ta, tb) = (tokens(&enc, &a, true), tokens(&enc, &b, true));
        let half = 16 * 32;
        assert_eq!(ta.data()[..half], tb.data()[..half]);
        assert_ne!(ta.data()[half..], tb.data()[half..]);
    }
}
