//! Encoder families, token layout and heads.
//!
//! Parameter names are namespaced: `encoder.*` for the backbone, `proj.*` for
//! the contrastive projection head, `cls.*` for the classifier, `mask_token*`
//! for learnable mask tokens and `decoder.*` / `predictor.*` for
//! method-specific parts.

mod checkpoint;
pub mod heads;
pub mod inception;
pub mod layers;
pub mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_CONFIG, CHECKPOINT_PARAMS};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::harmonize::{SensorWindow, CHANNELS, WINDOW_LEN};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[serde(alias = "conv", alias = "ispl")]
    ConvInception,
    #[serde(alias = "transformer", alias = "hart")]
    SensorwiseTransformer,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::ConvInception, Family::SensorwiseTransformer];

    pub fn short(self) -> &'static str {
        match self {
            Family::ConvInception => "conv",
            Family::SensorwiseTransformer => "transformer",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown architecture family {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub family: Family,
    /// Timesteps per token (frame).
    pub frame_length: usize,
    /// Number of transformer blocks or inception blocks.
    pub depth: usize,
    /// Transformer token width.
    #[serde(default)]
    pub embed_dim: usize,
    #[serde(default)]
    pub heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Filters per inception branch.
    #[serde(default)]
    pub filters: usize,
    #[serde(default)]
    pub bottleneck: usize,
    #[serde(default)]
    pub kernels: Vec<usize>,
}

fn default_mlp_ratio() -> usize {
    4
}

impl EncoderConfig {
    /// Full-size configurations (about 1.34 M parameters each with a 10-class head).
    pub fn reference(family: Family) -> Self {
        match family {
            Family::SensorwiseTransformer => Self {
                family,
                frame_length: 8,
                depth: 6,
                embed_dim: 128,
                heads: 4,
                mlp_ratio: 4,
                filters: 0,
                bottleneck: 0,
                kernels: Vec::new(),
            },
            Family::ConvInception => Self {
                family,
                frame_length: 16,
                depth: 4,
                embed_dim: 0,
                heads: 0,
                mlp_ratio: 4,
                filters: 64,
                bottleneck: 56,
                kernels: vec![9, 19, 39],
            },
        }
    }

    /// Small configurations for single-core runs.
    pub fn desk(family: Family) -> Self {
        match family {
            Family::SensorwiseTransformer => Self {
                family,
                frame_length: 8,
                depth: 2,
                embed_dim: 32,
                heads: 2,
                mlp_ratio: 2,
                filters: 0,
                bottleneck: 0,
                kernels: Vec::new(),
            },
            Family::ConvInception => Self {
                family,
                frame_length: 16,
                depth: 2,
                embed_dim: 0,
                heads: 0,
                mlp_ratio: 4,
                filters: 8,
                bottleneck: 8,
                kernels: vec![3, 5, 9],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("encoder config: {m}")));
        if self.frame_length == 0 || WINDOW_LEN % self.frame_length != 0 {
            return bad(format!("frame_length {} must divide {WINDOW_LEN}", self.frame_length));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        match self.family {
            Family::SensorwiseTransformer => {
                if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
                    return bad(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
                }
                if self.mlp_ratio == 0 {
                    return bad("mlp_ratio must be at least 1".into());
                }
            }
            Family::ConvInception => {
                if self.filters == 0 || self.bottleneck == 0 {
                    return bad("filters and bottleneck must be positive".into());
                }
                if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
                    return bad(format!("kernels must be a non-empty list of odd sizes, got {:?}", self.kernels));
                }
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        WINDOW_LEN / self.frame_length
    }

    /// Tokens per window: one per frame and sensor for the transformer, one
    /// per frame for the convolutional family.
    pub fn n_tokens(&self) -> usize {
        match self.family {
            Family::SensorwiseTransformer => 2 * self.frames(),
            Family::ConvInception => self.frames(),
        }
    }

    /// Raw signal values covered by one token.
    pub fn token_values(&self) -> usize {
        match self.family {
            Family::SensorwiseTransformer => self.frame_length * 3,
            Family::ConvInception => self.frame_length * CHANNELS,
        }
    }

    /// Width of the pooled embedding and of per-token features.
    pub fn embedding_width(&self) -> usize {
        match self.family {
            Family::SensorwiseTransformer => self.embed_dim,
            Family::ConvInception => (self.kernels.len() + 1) * self.filters,
        }
    }

    /// Sensor group (0 accelerometer, 1 gyroscope) of a token, for the
    /// sensor-wise family.
    pub fn token_sensor(&self, token: usize) -> Option<usize> {
        match self.family {
            Family::SensorwiseTransformer => Some(token / self.frames()),
            Family::ConvInception => None,
        }
    }
}

/// Stack windows into `[batch, 128, 6]`.
pub fn batch_input(windows: &[&SensorWindow]) -> Tensor {
    let mut data = Vec::with_capacity(windows.len() * WINDOW_LEN * CHANNELS);
    for w in windows {
        data.extend_from_slice(&w.values);
    }
    Tensor::new(&[windows.len(), WINDOW_LEN, CHANNELS], data)
}

fn token_perm(cfg: &EncoderConfig) -> Option<([usize; 5], [usize; 5])> {
    match cfg.family {
        Family::SensorwiseTransformer => Some(([0, 3, 1, 2, 4], [0, 2, 3, 1, 4])),
        Family::ConvInception => None,
    }
}

/// `[b, 128, 6]` -> `[b, tokens, token_values]` raw token values.
pub fn tokenize(g: &mut Graph, cfg: &EncoderConfig, x: Var) -> Var {
    let b = g.shape(x)[0];
    let (f, fl) = (cfg.frames(), cfg.frame_length);
    match token_perm(cfg) {
        Some((fwd, _)) => {
            let y = g.reshape(x, &[b, f, fl, 2, 3]);
            let y = g.permute(y, &fwd);
            g.reshape(y, &[b, 2 * f, fl * 3])
        }
        None => g.reshape(x, &[b, f, fl * CHANNELS]),
    }
}

/// Inverse of [`tokenize`] on plain tensors.
pub fn untokenize(cfg: &EncoderConfig, tokens: &Tensor) -> Tensor {
    let b = tokens.shape()[0];
    let (f, fl) = (cfg.frames(), cfg.frame_length);
    match token_perm(cfg) {
        Some((_, inv)) => tokens.clone().reshaped(&[b, 2, f, fl, 3]).permuted(&inv).reshaped(&[b, WINDOW_LEN, CHANNELS]),
        None => tokens.clone().reshaped(&[b, WINDOW_LEN, CHANNELS]),
    }
}

/// Forward outputs shared by both families.
pub struct Encoded {
    /// `[batch, width]` mean-pooled embedding.
    pub pooled: Var,
    /// `[batch, tokens, width]` final per-token features.
    pub tokens: Var,
    /// Per-block outputs, each `[batch, tokens, width]`.
    pub layers: Vec<Var>,
}

/// Full-window forward pass.
pub fn encode(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, x: Var) -> Encoded {
    match cfg.family {
        Family::SensorwiseTransformer => {
            let t = transformer::embed(g, store, cfg, x);
            let t = transformer::add_positions(g, cfg, t);
            let (tokens, layers) = transformer::blocks(g, store, cfg, t);
            let pooled = g.mean_axis(tokens, 1);
            Encoded { pooled, tokens, layers }
        }
        Family::ConvInception => {
            let (out, blocks) = inception::forward(g, store, cfg, x);
            let pooled = g.mean_axis(out, 1);
            let layers: Vec<Var> = blocks.iter().map(|&v| inception::frame_pool(g, cfg, v)).collect();
            Encoded { pooled, tokens: *layers.last().unwrap(), layers }
        }
    }
}

/// A backbone with its configuration and `encoder.*` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

impl Encoder {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seed::rng_for(seed, "encoder-init");
        let mut params = ParamStore::new();
        match config.family {
            Family::SensorwiseTransformer => transformer::init(&mut params, &config, &mut rng),
            Family::ConvInception => inception::init(&mut params, &config, &mut rng),
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Verify that `store` carries exactly this config's encoder shapes.
    pub fn check_shapes(config: &EncoderConfig, store: &ParamStore) -> Result<()> {
        let want = Encoder::init(config.clone(), 0)?.params.shape_inventory();
        let have = store.with_prefix(ENCODER_PREFIX).shape_inventory();
        if want != have {
            let missing: Vec<_> = want.iter().filter(|w| !have.contains(w)).map(|w| format!("{}{:?}", w.0, w.1)).collect();
            let extra: Vec<_> = have.iter().filter(|h| !want.contains(h)).map(|h| format!("{}{:?}", h.0, h.1)).collect();
            return Err(Error::ArchMismatch(format!("missing {missing:?}, unexpected {extra:?}")));
        }
        Ok(())
    }

    /// Pooled embeddings of `windows`, evaluated in chunks of `batch`.
    pub fn embed(&self, windows: &[&SensorWindow], batch: usize) -> Tensor {
        embed_with(&self.params, &self.config, windows, batch)
    }
}

/// Pooled embeddings `[n, width]` using the encoder parameters in `store`.
pub fn embed_with(store: &ParamStore, cfg: &EncoderConfig, windows: &[&SensorWindow], batch: usize) -> Tensor {
    let width = cfg.embedding_width();
    let mut out = Vec::with_capacity(windows.len() * width);
    for chunk in windows.chunks(batch.max(1)) {
        let mut g = Graph::inference();
        let x = g.constant(batch_input(chunk));
        let e = encode(&mut g, store, cfg, x);
        out.extend_from_slice(g.value(e.pooled).data());
    }
    Tensor::new(&[windows.len(), width], out)
}
