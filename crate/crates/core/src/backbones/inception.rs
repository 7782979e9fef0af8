//! Inception-style 1-D convolutional encoder.
//!
//! Block: 1x1 bottleneck, parallel "same" convolutions of every configured
//! kernel size on the bottleneck, plus a max-pool(3) -> 1x1 branch on the
//! block input; branches are concatenated, a residual is added when the
//! input width matches, then ReLU. Channels-last throughout.

use rand::Rng;

use super::layers::{conv, init_conv};
use super::EncoderConfig;
use crate::autodiff::{Graph, Var};
use crate::harmonize::CHANNELS;
use crate::params::ParamStore;

pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    let width = cfg.embedding_width();
    let mut c_in = CHANNELS;
    for i in 0..cfg.depth {
        let name = format!("encoder.block{i}");
        init_conv(store, &format!("{name}.bottleneck"), 1, c_in, cfg.bottleneck, rng);
        for &k in &cfg.kernels {
            init_conv(store, &format!("{name}.k{k}"), k, cfg.bottleneck, cfg.filters, rng);
        }
        init_conv(store, &format!("{name}.pool"), 1, c_in, cfg.filters, rng);
        c_in = width;
    }
}

/// Forward over `[b, l, 6]` for any length `l`. Returns the last block's
/// output and every block output, each `[b, l, width]`.
pub fn forward(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, x: Var) -> (Var, Vec<Var>) {
    let mut h = x;
    let mut outs = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let name = format!("encoder.block{i}");
        let bott = conv(g, store, &format!("{name}.bottleneck"), h, 1);
        let mut branches: Vec<Var> =
            cfg.kernels.iter().map(|&k| conv(g, store, &format!("{name}.k{k}"), bott, k)).collect();
        let pooled = g.max_pool(h, 3);
        branches.push(conv(g, store, &format!("{name}.pool"), pooled, 1));
        let mut y = g.concat(&branches, 2);
        if g.shape(h) == g.shape(y) {
            y = g.add(y, h);
        }
        h = g.relu(y);
        outs.push(h);
    }
    (h, outs)
}

/// Mean over each frame's timesteps: `[b, 128, c]` -> `[b, F, c]`.
pub fn frame_pool(g: &mut Graph, cfg: &EncoderConfig, v: Var) -> Var {
    let s = g.shape(v).to_vec();
    let r = g.reshape(v, &[s[0], cfg.frames(), cfg.frame_length, s[2]]);
    g.mean_axis(r, 2)
}
