use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbones::ENCODER_PREFIX;
use crate::error::{Error, Result};
use crate::finetune::{classifier_step_graph, logits, Classifier};
use crate::harmonize::SensorWindow;
use crate::trainer::{adam_step, median, AdamConfig, OptimState};

/// Untimed steps before measurement.
pub const PROFILE_WARMUP: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileMode {
    Frozen,
    Unfrozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Every array element of the model (encoder and head).
    pub param_count: usize,
    pub encoder_param_count: usize,
    /// Forward FLOPs per window (one multiply-accumulate = 2 FLOPs).
    pub flops_per_window: u64,
    /// Median wall-clock milliseconds of a full training step.
    pub ms_per_step: f64,
    pub steps: usize,
    pub batch: usize,
    pub mode: ProfileMode,
}

/// Size, forward cost and training-step time of `model` on `windows`.
pub fn profile(model: &Classifier, windows: &[&SensorWindow], mode: ProfileMode, steps: usize) -> Result<Profile> {
    if windows.is_empty() || steps == 0 {
        return Err(Error::InvalidArgument("profiling needs a non-empty batch and at least one step".into()));
    }
    let mut g = crate::autodiff::Graph::inference();
    logits(&mut g, &model.params, &model.encoder, windows);
    let flops_per_window = g.flops() / windows.len() as u64;
    drop(g);
    let targets: Vec<usize> = (0..windows.len()).map(|i| i % model.classes.len()).collect();
    let frozen = mode == ProfileMode::Frozen;
    let mut params = model.params.clone();
    let mut state = OptimState::new(AdamConfig::default());
    let mut times = Vec::with_capacity(steps);
    for i in 0..PROFILE_WARMUP + steps {
        let t0 = Instant::now();
        let (g, loss) = classifier_step_graph(&params, &model.encoder, windows, &targets, frozen)?;
        let grads = g.param_grads(&g.backward(loss));
        drop(g);
        adam_step(&mut params, &grads, &mut state)?;
        if i >= PROFILE_WARMUP {
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(Profile {
        param_count: model.params.numel(),
        encoder_param_count: model.params.with_prefix(ENCODER_PREFIX).numel(),
        flops_per_window,
        ms_per_step: median(&times),
        steps,
        batch: windows.len(),
        mode,
    })
}
