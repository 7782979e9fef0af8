//! The canonical corpus directory.
//!
//! ```text
//! <corpus>/manifest.json               versioned metadata
//! <corpus>/<dataset>/<subject>_<k>.f32  windows of recording k, little-endian f32,
//!                                      [n_windows, 128, 6] row-major
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    reader_for, resample_to_50hz, segment_windows, unify_labels, znormalize_dataset, ActivityClass, ChannelStats,
    SensorWindow, CHANNELS, TARGET_RATE_HZ, WINDOW_LEN, WINDOW_OVERLAP,
};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub window_size: usize,
    pub overlap: f64,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    pub classes: Vec<String>,
    pub datasets: Vec<DatasetEntry>,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            window_size: WINDOW_LEN,
            overlap: WINDOW_OVERLAP,
            sample_rate_hz: TARGET_RATE_HZ,
            channels: ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"].map(String::from).to_vec(),
            classes: ActivityClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            datasets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub reader: String,
    pub stats: ChannelStats,
    /// source label -> unified class name
    pub label_map: BTreeMap<String, String>,
    pub dropped_labels: Vec<String>,
    pub class_counts: BTreeMap<String, usize>,
    pub subjects: Vec<String>,
    pub recordings: Vec<RecordingEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub subject_id: String,
    pub index: usize,
    pub file: String,
    pub offsets: Vec<usize>,
    pub labels: Vec<u8>,
}

/// A loaded corpus: manifest plus every window in manifest order.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub windows: Vec<SensorWindow>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_windows(manifest: CorpusManifest, windows: Vec<SensorWindow>) -> Self {
        let index = windows.iter().enumerate().map(|(i, w)| (w.id.clone(), i)).collect();
        Self { manifest, windows, index }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CorpusManifest = crate::fsutil::read_json(&dir.join(MANIFEST))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "corpus schema {} unsupported (expected {SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let mut windows = Vec::new();
        for ds in &manifest.datasets {
            for rec in &ds.recordings {
                let path = dir.join(&rec.file);
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let per = WINDOW_LEN * CHANNELS;
                if bytes.len() != rec.offsets.len() * per * 4 {
                    return Err(Error::CorruptFiles(vec![path]));
                }
                let vals: Vec<f64> =
                    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
                for (k, (&off, &label)) in rec.offsets.iter().zip(&rec.labels).enumerate() {
                    windows.push(SensorWindow::new(
                        format!("{}/{}/{}/{}", ds.id, rec.subject_id, rec.index, off),
                        vals[k * per..(k + 1) * per].to_vec(),
                        label,
                        rec.subject_id.clone(),
                        ds.id.clone(),
                    )?);
                }
            }
        }
        Ok(Self::from_windows(manifest, windows))
    }

    /// Sorted ids of the datasets that contribute windows.
    pub fn dataset_ids(&self) -> Vec<String> {
        let ids: std::collections::BTreeSet<&str> = self.windows.iter().map(|w| w.dataset_id.as_str()).collect();
        ids.into_iter().map(String::from).collect()
    }

    pub fn position(&self, window_id: &str) -> Option<usize> {
        self.index.get(window_id).copied()
    }

    pub fn window(&self, i: usize) -> &SensorWindow {
        &self.windows[i]
    }

    /// Indices of windows belonging to `dataset_id`.
    pub fn indices_of(&self, dataset_id: &str) -> Vec<usize> {
        (0..self.windows.len()).filter(|&i| self.windows[i].dataset_id == dataset_id).collect()
    }
}

/// Ingest `dataset` from `root` into the corpus at `out`, replacing any
/// previous entry with the same id. Returns the ids of the datasets written.
pub fn prepare(reader_id: &str, root: &Path, out: &Path) -> Result<Vec<String>> {
    let reader = reader_for(reader_id)?;
    let raw = reader.read(root)?;
    if raw.is_empty() {
        return Err(Error::InvalidArgument(format!("no recordings found under {}", root.display())));
    }
    for r in &raw {
        r.validate()?;
    }
    let label_map = unify_labels(&reader.vocabulary(&raw))?;
    let mut by_ds: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for r in raw {
        by_ds.entry(r.dataset_id.clone()).or_default().push(r);
    }
    let manifest_path = out.join(MANIFEST);
    let mut manifest = if manifest_path.exists() {
        crate::fsutil::read_json::<CorpusManifest>(&manifest_path)?
    } else {
        CorpusManifest::default()
    };
    let mut written = Vec::new();
    for (ds_id, recs) in by_ds {
        let resampled = recs.iter().map(resample_to_50hz).collect::<Result<Vec<_>>>()?;
        let (normed, stats) = znormalize_dataset(&resampled)?;
        let ds_dir: PathBuf = out.join(&ds_id);
        if ds_dir.exists() {
            std::fs::remove_dir_all(&ds_dir).map_err(|e| Error::io(&ds_dir, e))?;
        }
        let mut entry = DatasetEntry {
            id: ds_id.clone(),
            reader: reader.id().to_string(),
            stats,
            label_map: label_map.mapping(&ds_id).into_iter().map(|(k, v)| (k, v.name().to_string())).collect(),
            dropped_labels: label_map.dropped(&ds_id).to_vec(),
            class_counts: BTreeMap::new(),
            subjects: Vec::new(),
            recordings: Vec::new(),
        };
        let mut per_subject: BTreeMap<String, usize> = BTreeMap::new();
        for rec in &normed {
            let unified = rec.relabel(&label_map);
            let k = per_subject.entry(rec.subject_id.clone()).or_default();
            let index = *k;
            *k += 1;
            let windows = segment_windows(&unified, index, WINDOW_LEN, WINDOW_OVERLAP);
            let file = format!("{ds_id}/{}_{index}.f32", rec.subject_id);
            let bytes: Vec<u8> =
                windows.iter().flat_map(|w| w.values.iter().flat_map(|&v| (v as f32).to_le_bytes())).collect();
            crate::fsutil::atomic_write(&out.join(&file), &bytes)?;
            for w in &windows {
                let name = ActivityClass::from_id(w.label).expect("unified label").name().to_string();
                *entry.class_counts.entry(name).or_default() += 1;
            }
            entry.recordings.push(RecordingEntry {
                subject_id: rec.subject_id.clone(),
                index,
                file,
                offsets: windows.iter().map(|w| w.id.rsplit('/').next().unwrap().parse().unwrap()).collect(),
                labels: windows.iter().map(|w| w.label).collect(),
            });
        }
        entry.recordings.sort_by(|a, b| (&a.subject_id, a.index).cmp(&(&b.subject_id, b.index)));
        entry.subjects = per_subject.into_keys().collect();
        manifest.datasets.retain(|d| d.id != ds_id);
        manifest.datasets.push(entry);
        written.push(ds_id);
    }
    manifest.datasets.sort_by(|a, b| a.id.cmp(&b.id));
    crate::fsutil::write_json(&manifest_path, &manifest)?;
    Ok(written)
}
