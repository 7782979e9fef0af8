//! Classification heads on pretrained encoders: supervised pretraining, head
//! attachment and frozen or unfrozen fine-tuning on a fold's target data.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::backbones::{batch_input, encode, heads, Encoder, EncoderConfig, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::eval::{accuracy, macro_f1, RunResult};
use crate::harmonize::{ActivityClass, Corpus, SensorWindow};
use crate::params::ParamStore;
use crate::pretrain::{config_hash, Method, PretrainSet, Pretrained};
use crate::seed::rng_for;
use crate::splits::{resolve, LodoSplit, Scenario};
use crate::tensor::Tensor;
use crate::trainer::{run_epochs, AdamConfig, Monitor, Objective, RunManifest, TrainSchedule};

/// Batch size for inference passes.
pub const EVAL_BATCH: usize = 256;

/// Mean softmax cross-entropy of `[n, classes]` logits and its gradient.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.shape()[0], logits.last_dim());
    if n != targets.len() || n == 0 || targets.iter().any(|&t| t >= c) {
        return Err(Error::Shape(format!("{n} logit rows of width {c} for {} targets", targets.len())));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        loss += z.ln() + mx - row[t];
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (j, v) in row.iter().enumerate() {
            g[j] = ((v - mx).exp() / z - if j == t { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

pub fn cross_entropy_loss(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let (l, grad) = cross_entropy(g.value(logits), targets)?;
    Ok(g.loss(&[logits], l, vec![grad]))
}

/// Encoder plus dense head over a fixed class inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderConfig,
    pub params: ParamStore,
    /// Global class id of every head output.
    pub classes: Vec<u8>,
}

/// Fresh seeded head on the `encoder.*` arrays of `weights`.
pub fn attach_head(encoder: &EncoderConfig, weights: &ParamStore, classes: &[u8], seed: u64) -> Result<Classifier> {
    Encoder::check_shapes(encoder, weights)?;
    let mut params = weights.with_prefix(ENCODER_PREFIX);
    heads::init_classifier(&mut params, encoder.embedding_width(), classes.len(), &mut rng_for(seed, "head-init"))?;
    Ok(Classifier { encoder: encoder.clone(), params, classes: classes.to_vec() })
}

/// Logits `[n, classes]` for `windows`.
pub fn logits(g: &mut Graph, params: &ParamStore, enc: &EncoderConfig, windows: &[&SensorWindow]) -> Var {
    let x = g.constant(batch_input(windows));
    let e = encode(g, params, enc, x);
    heads::classifier(g, params, e.pooled)
}

/// Head index of the highest logit for every window.
pub fn predict(params: &ParamStore, enc: &EncoderConfig, windows: &[&SensorWindow]) -> Vec<usize> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_BATCH) {
        let mut g = Graph::inference();
        let l = logits(&mut g, params, enc, chunk);
        let t = g.value(l);
        for i in 0..chunk.len() {
            let row = t.row(i);
            out.push((0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b }));
        }
    }
    out
}

/// Training graph for one batch; with `frozen` the encoder arrays are constants.
pub fn classifier_step_graph(
    params: &ParamStore,
    enc: &EncoderConfig,
    windows: &[&SensorWindow],
    targets: &[usize],
    frozen: bool,
) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    if frozen {
        g.freeze_prefix(ENCODER_PREFIX);
    }
    let l = logits(&mut g, params, enc, windows);
    let loss = cross_entropy_loss(&mut g, l, targets)?;
    Ok((g, loss))
}

/// Classes present anywhere in the fold's target dataset, ascending.
pub fn target_classes(corpus: &Corpus, split: &LodoSplit) -> Result<Vec<u8>> {
    let mut set = BTreeSet::new();
    for ids in [&split.target_train, &split.target_val, &split.target_test] {
        for i in resolve(corpus, ids)? {
            set.insert(corpus.window(i).label);
        }
    }
    Ok(set.into_iter().collect())
}

struct LabeledObjective<'a> {
    corpus: &'a Corpus,
    enc: EncoderConfig,
    train: Vec<usize>,
    train_targets: Vec<usize>,
    val: Vec<usize>,
    val_targets: Vec<usize>,
    frozen: bool,
    monitor: Monitor,
}

impl LabeledObjective<'_> {
    fn windows(&self, idx: &[usize]) -> Vec<&SensorWindow> {
        idx.iter().map(|&i| self.corpus.window(i)).collect()
    }
}

impl Objective for LabeledObjective<'_> {
    fn loss(&mut self, params: &ParamStore, batch: &[usize], _rng: &mut ChaCha8Rng) -> Result<(Graph, Var)> {
        let idx: Vec<usize> = batch.iter().map(|&i| self.train[i]).collect();
        let targets: Vec<usize> = batch.iter().map(|&i| self.train_targets[i]).collect();
        classifier_step_graph(params, &self.enc, &self.windows(&idx), &targets, self.frozen)
    }

    fn validate(&mut self, params: &ParamStore) -> Result<f64> {
        let windows = self.windows(&self.val);
        match self.monitor {
            Monitor::Accuracy => Ok(accuracy(&predict(params, &self.enc, &windows), &self.val_targets)),
            Monitor::Loss => {
                let mut total = 0.0;
                for (w, t) in windows.chunks(EVAL_BATCH).zip(self.val_targets.chunks(EVAL_BATCH)) {
                    let mut g = Graph::inference();
                    let l = logits(&mut g, params, &self.enc, w);
                    total += cross_entropy(g.value(l), t)?.0 * w.len() as f64;
                }
                Ok(total / windows.len() as f64)
            }
        }
    }
}

/// Encoder and 10-class head trained with cross-entropy on the pretraining
/// partitions; the encoder serves as the supervised baseline.
pub fn supervised_pretrain(
    data: &PretrainSet,
    encoder: Encoder,
    schedule: &TrainSchedule,
    adam: AdamConfig,
    seed: u64,
) -> Result<Pretrained> {
    data.check()?;
    let classes: Vec<u8> = ActivityClass::ALL.iter().map(|c| c.id()).collect();
    let model = attach_head(&encoder.config, &encoder.params, &classes, seed)?;
    let label = |i: &usize| data.corpus.window(*i).label as usize;
    let mut obj = LabeledObjective {
        corpus: data.corpus,
        enc: encoder.config.clone(),
        train_targets: data.train.iter().map(label).collect(),
        train: data.train.clone(),
        val_targets: data.val.iter().map(label).collect(),
        val: data.val.clone(),
        frozen: false,
        monitor: schedule.monitor,
    };
    let out = run_epochs(model.params, data.train.len(), &mut obj, schedule, adam, seed)?;
    let hash = config_hash(&(&encoder.config, schedule, adam));
    let mut manifest = RunManifest::from_outcome(hash, seed, schedule, adam, &out);
    manifest.extra = serde_json::json!({ "method": "supervised" });
    Ok(Pretrained { method: Method::Supervised, encoder: encoder.config, params: out.best_params, manifest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    pub frozen: bool,
    pub scenario: Scenario,
    pub schedule: TrainSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl FinetuneSpec {
    /// Default schedule for `scenario`.
    pub fn new(frozen: bool, scenario: Scenario, seed: u64) -> Self {
        Self { frozen, scenario, schedule: TrainSchedule::finetune(scenario.is_scarce()), adam: AdamConfig::default(), seed }
    }
}

/// Provenance attached to a [`RunResult`].
#[derive(Clone, Debug)]
pub struct RunLabel {
    pub run_id: String,
    pub method: Method,
    pub hyperparameters: serde_json::Value,
}

/// Held-out partition that counts its reads.
struct TestPartition<'a> {
    windows: Vec<&'a SensorWindow>,
    targets: Vec<usize>,
    reads: usize,
}

impl<'a> TestPartition<'a> {
    fn read(&mut self) -> (&[&'a SensorWindow], &[usize]) {
        self.reads += 1;
        (&self.windows, &self.targets)
    }
}

/// Train `model` on the scenario's target windows, keep the epoch with the
/// best validation accuracy and score it once on the test partition.
pub fn finetune(
    model: Classifier,
    corpus: &Corpus,
    split: &LodoSplit,
    spec: &FinetuneSpec,
    label: &RunLabel,
) -> Result<(RunResult, Classifier)> {
    let local = |i: usize| -> Result<usize> {
        let l = corpus.window(i).label;
        model
            .classes
            .iter()
            .position(|&c| c == l)
            .ok_or_else(|| Error::InvalidArgument(format!("class {l} is not in the head's inventory")))
    };
    let train_ids = split.train_ids(spec.scenario)?.to_vec();
    let train = resolve(corpus, &train_ids)?;
    let val = resolve(corpus, &split.target_val)?;
    if val.is_empty() || split.target_test.is_empty() {
        return Err(Error::EmptyScenario(format!("{} (validation or test partition empty)", spec.scenario)));
    }
    let test_idx = resolve(corpus, &split.target_test)?;
    let mut test = TestPartition {
        windows: test_idx.iter().map(|&i| corpus.window(i)).collect(),
        targets: test_idx.iter().map(|&i| local(i)).collect::<Result<_>>()?,
        reads: 0,
    };
    let digest_before = model.params.digest(ENCODER_PREFIX);
    let mut obj = LabeledObjective {
        corpus,
        enc: model.encoder.clone(),
        train_targets: train.iter().map(|&i| local(i)).collect::<Result<_>>()?,
        train,
        val_targets: val.iter().map(|&i| local(i)).collect::<Result<_>>()?,
        val,
        frozen: spec.frozen,
        monitor: Monitor::Accuracy,
    };
    let schedule = TrainSchedule { monitor: Monitor::Accuracy, ..spec.schedule.clone() };
    let out = run_epochs(model.params.clone(), obj.train.len(), &mut obj, &schedule, spec.adam, spec.seed)?;
    let best = Classifier { params: out.best_params, ..model };
    let digest_after = best.params.digest(ENCODER_PREFIX);
    if spec.frozen && digest_after != digest_before {
        return Err(Error::Checkpoint("frozen encoder changed during fine-tuning".into()));
    }
    let (windows, targets) = test.read();
    let preds = predict(&best.params, &best.encoder, windows);
    let test_macro_f1 = macro_f1(&preds, targets, best.classes.len())?;
    let test_accuracy = accuracy(&preds, targets);
    let result = RunResult {
        run_id: label.run_id.clone(),
        fold_id: split.fold_id.clone(),
        leftout_dataset: split.leftout_dataset.clone(),
        method: label.method,
        family: best.encoder.family,
        scenario: spec.scenario,
        frozen: spec.frozen,
        seed: spec.seed,
        test_macro_f1,
        test_accuracy,
        best_epoch: out.best_epoch,
        history: out.history,
        step_ms_median: crate::trainer::median(&out.step_ms),
        classes: best.classes.clone(),
        train_window_ids: train_ids,
        test_evaluations: test.reads,
        encoder_digest_before: digest_before,
        encoder_digest_after: digest_after,
        hyperparameters: serde_json::json!({ "finetune": spec, "pretrain": label.hyperparameters }),
    };
    Ok((result, best))
}
