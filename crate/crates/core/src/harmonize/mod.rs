//! Dataset ingestion: readers, resampling to 50 Hz, per-dataset
//! z-normalization, sliding windows and the unified label vocabulary.

mod corpus;
mod labels;
mod normalize;
mod readers;
mod resample;
mod synth;
mod window;

pub use corpus::{prepare, Corpus, CorpusManifest, DatasetEntry, RecordingEntry, SCHEMA_VERSION};
pub use labels::{unify_labels, ActivityClass, AliasTable, LabelMap, SourceVocabulary};
pub use normalize::{znormalize_dataset, ChannelStats};
pub use readers::{read_source, reader_for, DatasetReader, READER_IDS};
pub use resample::resample_to_50hz;
pub use synth::{synth_generate, write_synthetic, SynthSpec};
pub use window::{majority_label, segment_windows, window_count, window_offsets};

use crate::error::{Error, Result};

pub const WINDOW_LEN: usize = 128;
pub const CHANNELS: usize = 6;
pub const TARGET_RATE_HZ: f64 = 50.0;
pub const WINDOW_OVERLAP: f64 = 0.5;

/// One subject-device stream as read from disk.
///
/// Channels are accelerometer x/y/z then gyroscope x/y/z. `labels[t]` indexes
/// into `vocabulary`; `None` marks unlabeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub dataset_id: String,
    pub subject_id: String,
    pub channels: [Vec<f64>; CHANNELS],
    pub sample_rate_hz: f64,
    pub labels: Vec<Option<u16>>,
    pub vocabulary: Vec<String>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!("sample rate {} must be positive", self.sample_rate_hz)));
        }
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "{}/{}: channel lengths {:?} vs {n} labels",
                self.dataset_id,
                self.subject_id,
                self.channels.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        if let Some(bad) = self.labels.iter().flatten().find(|&&l| l as usize >= self.vocabulary.len()) {
            return Err(Error::Shape(format!("label index {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Rewrite source labels to unified class ids using `map`; labels the map
    /// drops become unlabeled.
    pub fn relabel(&self, map: &LabelMap) -> RawRecording {
        let lookup: Vec<Option<u16>> = self
            .vocabulary
            .iter()
            .map(|name| map.class_of(&self.dataset_id, name).map(|c| c.id() as u16))
            .collect();
        RawRecording {
            labels: self.labels.iter().map(|l| l.and_then(|i| lookup[i as usize])).collect(),
            vocabulary: ActivityClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            ..self.clone()
        }
    }
}

/// A 128 x 6 segment (timestep-major) with its identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorWindow {
    pub id: String,
    pub values: Vec<f64>,
    pub label: u8,
    pub subject_id: String,
    pub dataset_id: String,
}

impl SensorWindow {
    pub fn new(id: String, values: Vec<f64>, label: u8, subject_id: String, dataset_id: String) -> Result<Self> {
        if values.len() != WINDOW_LEN * CHANNELS {
            return Err(Error::Shape(format!("window has {} values, expected {}", values.len(), WINDOW_LEN * CHANNELS)));
        }
        if label as usize >= ActivityClass::ALL.len() {
            return Err(Error::InvalidArgument(format!("label {label} outside the unified vocabulary")));
        }
        Ok(Self { id, values, label, subject_id, dataset_id })
    }

    pub fn at(&self, t: usize, ch: usize) -> f64 {
        self.values[t * CHANNELS + ch]
    }
}
