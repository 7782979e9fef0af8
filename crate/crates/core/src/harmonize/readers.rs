//! Reader plugins for the published on-disk layouts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::synth::{SynthMeta, SYNTH_META};
use super::{ActivityClass, AliasTable, RawRecording, SourceVocabulary, CHANNELS};
use crate::error::{Error, Result};

pub const READER_IDS: [&str; 3] = ["synthetic", "uci", "motionsense"];

pub trait DatasetReader {
    fn id(&self) -> &'static str;
    /// Recordings of the waist position, in `(subject, recording)` order.
    fn read(&self, root: &Path) -> Result<Vec<RawRecording>>;
    fn aliases(&self) -> AliasTable;

    fn vocabulary(&self, recs: &[RawRecording]) -> Vec<SourceVocabulary> {
        let mut by_ds: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for r in recs {
            let labels = by_ds.entry(&r.dataset_id).or_default();
            for l in &r.vocabulary {
                if !labels.contains(l) {
                    labels.push(l.clone());
                }
            }
        }
        by_ds
            .into_iter()
            .map(|(ds, labels)| SourceVocabulary { dataset_id: ds.to_string(), labels, aliases: self.aliases() })
            .collect()
    }
}

pub fn reader_for(id: &str) -> Result<Box<dyn DatasetReader>> {
    match id {
        "synthetic" => Ok(Box::new(SyntheticReader)),
        "uci" => Ok(Box::new(UciReader)),
        "motionsense" => Ok(Box::new(MotionSenseReader)),
        other => Err(Error::UnknownDataset(other.to_string())),
    }
}

pub fn read_source(dataset_id: &str, root: &Path) -> Result<Vec<RawRecording>> {
    reader_for(dataset_id)?.read(root)
}

fn aliases(pairs: &[(&str, ActivityClass)]) -> AliasTable {
    pairs.iter().map(|(l, c)| (l.to_string(), *c)).collect()
}

fn read_to_string(path: &Path, bad: &mut Vec<PathBuf>) -> Option<String> {
    match std::fs::read_to_string(path) {
        Ok(s) => Some(s),
        Err(_) => {
            bad.push(path.to_path_buf());
            None
        }
    }
}

struct SyntheticReader;

impl DatasetReader for SyntheticReader {
    fn id(&self) -> &'static str {
        "synthetic"
    }

    fn aliases(&self) -> AliasTable {
        ActivityClass::ALL.iter().map(|c| (c.name().to_string(), *c)).collect()
    }

    fn read(&self, root: &Path) -> Result<Vec<RawRecording>> {
        let meta_path = root.join(SYNTH_META);
        let meta: SynthMeta = crate::fsutil::read_json(&meta_path).map_err(|_| Error::CorruptFiles(vec![meta_path]))?;
        let vocabulary: Vec<String> =
            ActivityClass::ALL[..meta.spec.classes.min(10)].iter().map(|c| c.name().to_string()).collect();
        let mut bad = Vec::new();
        let mut out = Vec::new();
        for subject in &meta.subjects {
            let path = root.join(format!("{subject}.csv"));
            match parse_synth_csv(&path, &vocabulary) {
                Some((channels, labels)) => out.push(RawRecording {
                    dataset_id: meta.spec.name.clone(),
                    subject_id: subject.clone(),
                    channels,
                    sample_rate_hz: meta.spec.sample_rate_hz,
                    labels,
                    vocabulary: vocabulary.clone(),
                }),
                None => bad.push(path),
            }
        }
        if !bad.is_empty() {
            return Err(Error::CorruptFiles(bad));
        }
        Ok(out)
    }
}

type Parsed = ([Vec<f64>; CHANNELS], Vec<Option<u16>>);

fn parse_synth_csv(path: &Path, vocabulary: &[String]) -> Option<Parsed> {
    let mut rdr = csv::Reader::from_path(path).ok()?;
    let mut channels: [Vec<f64>; CHANNELS] = Default::default();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.ok()?;
        if rec.len() != CHANNELS + 1 {
            return None;
        }
        for (ch, series) in channels.iter_mut().enumerate() {
            series.push(rec[ch].parse().ok()?);
        }
        let l = &rec[CHANNELS];
        labels.push(if l.is_empty() { None } else { Some(vocabulary.iter().position(|v| v == l)? as u16) });
    }
    Some((channels, labels))
}

/// UCI smartphone HAR, raw-signal release (`RawData/acc_expXX_userYY.txt`,
/// `gyro_...`, `labels.txt`), recorded at the waist at 50 Hz.
struct UciReader;

const UCI_LABELS: [&str; 12] = [
    "WALKING",
    "WALKING_UPSTAIRS",
    "WALKING_DOWNSTAIRS",
    "SITTING",
    "STANDING",
    "LAYING",
    "STAND_TO_SIT",
    "SIT_TO_STAND",
    "SIT_TO_LIE",
    "LIE_TO_SIT",
    "STAND_TO_LIE",
    "LIE_TO_STAND",
];

impl DatasetReader for UciReader {
    fn id(&self) -> &'static str {
        "uci"
    }

    fn aliases(&self) -> AliasTable {
        aliases(&[
            ("walking", ActivityClass::Walking),
            ("walking_upstairs", ActivityClass::Upstairs),
            ("walking_downstairs", ActivityClass::Downstairs),
            ("sitting", ActivityClass::Sitting),
            ("standing", ActivityClass::Standing),
            ("laying", ActivityClass::Lying),
        ])
    }

    fn read(&self, root: &Path) -> Result<Vec<RawRecording>> {
        let raw = if root.join("RawData").is_dir() { root.join("RawData") } else { root.to_path_buf() };
        let mut bad = Vec::new();
        let labels_path = raw.join("labels.txt");
        let Some(labels_txt) = read_to_string(&labels_path, &mut bad) else {
            return Err(Error::CorruptFiles(bad));
        };
        // (exp, user) -> [(activity, start, end)] with 1-based inclusive bounds
        let mut segments: BTreeMap<(u32, u32), Vec<(u16, usize, usize)>> = BTreeMap::new();
        for line in labels_txt.lines().filter(|l| !l.trim().is_empty()) {
            let f: Vec<usize> = match line.split_whitespace().map(str::parse).collect::<Result<_, _>>() {
                Ok(f) => f,
                Err(_) => {
                    bad.push(labels_path.clone());
                    break;
                }
            };
            if f.len() != 5 || f[2] == 0 || f[2] > UCI_LABELS.len() {
                bad.push(labels_path.clone());
                break;
            }
            segments.entry((f[0] as u32, f[1] as u32)).or_default().push(((f[2] - 1) as u16, f[3], f[4]));
        }
        let vocabulary: Vec<String> = UCI_LABELS.iter().map(|s| s.to_string()).collect();
        let mut out = Vec::new();
        let mut by_user: Vec<((u32, u32), Vec<(u16, usize, usize)>)> = segments.into_iter().collect();
        by_user.sort_by_key(|((exp, user), _)| (*user, *exp));
        for ((exp, user), segs) in by_user {
            let acc_path = raw.join(format!("acc_exp{exp:02}_user{user:02}.txt"));
            let gyro_path = raw.join(format!("gyro_exp{exp:02}_user{user:02}.txt"));
            let acc = read_to_string(&acc_path, &mut bad).and_then(|s| parse_triples(&s).or_else(|| {
                bad.push(acc_path.clone());
                None
            }));
            let gyro = read_to_string(&gyro_path, &mut bad).and_then(|s| parse_triples(&s).or_else(|| {
                bad.push(gyro_path.clone());
                None
            }));
            let (Some(acc), Some(gyro)) = (acc, gyro) else { continue };
            let n = acc[0].len().min(gyro[0].len());
            let mut labels = vec![None; n];
            for (act, start, end) in segs {
                for l in labels.iter_mut().take(end.min(n)).skip(start.saturating_sub(1)) {
                    *l = Some(act);
                }
            }
            let channels = [
                acc[0][..n].to_vec(),
                acc[1][..n].to_vec(),
                acc[2][..n].to_vec(),
                gyro[0][..n].to_vec(),
                gyro[1][..n].to_vec(),
                gyro[2][..n].to_vec(),
            ];
            out.push(RawRecording {
                dataset_id: "uci".into(),
                subject_id: format!("u{user:02}"),
                channels,
                sample_rate_hz: 50.0,
                labels,
                vocabulary: vocabulary.clone(),
            });
        }
        if !bad.is_empty() {
            bad.sort();
            bad.dedup();
            return Err(Error::CorruptFiles(bad));
        }
        Ok(out)
    }
}

fn parse_triples(text: &str) -> Option<[Vec<f64>; 3]> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        for series in out.iter_mut() {
            series.push(it.next()?.parse().ok()?);
        }
    }
    Some(out)
}

/// MotionSense device-motion release:
/// `A_DeviceMotion_data/<code>_<trial>/sub_<n>.csv`, 50 Hz. Acceleration is
/// gravity plus user acceleration (g); gyroscope is the rotation rate (rad/s).
struct MotionSenseReader;

const MS_CODES: [&str; 6] = ["dws", "ups", "wlk", "jog", "std", "sit"];

impl DatasetReader for MotionSenseReader {
    fn id(&self) -> &'static str {
        "motionsense"
    }

    fn aliases(&self) -> AliasTable {
        aliases(&[
            ("dws", ActivityClass::Downstairs),
            ("ups", ActivityClass::Upstairs),
            ("wlk", ActivityClass::Walking),
            ("jog", ActivityClass::Running),
            ("std", ActivityClass::Standing),
            ("sit", ActivityClass::Sitting),
        ])
    }

    fn read(&self, root: &Path) -> Result<Vec<RawRecording>> {
        let base = if root.join("A_DeviceMotion_data").is_dir() { root.join("A_DeviceMotion_data") } else { root.to_path_buf() };
        let entries = std::fs::read_dir(&base).map_err(|e| Error::io(&base, e))?;
        let mut trials: Vec<(String, PathBuf)> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                let code = name.split('_').next()?.to_string();
                MS_CODES.contains(&code.as_str()).then_some((name, e.path()))
            })
            .collect();
        trials.sort();
        let vocabulary: Vec<String> = MS_CODES.iter().map(|s| s.to_string()).collect();
        let mut bad = Vec::new();
        let mut out = Vec::new();
        for (name, dir) in trials {
            let code = name.split('_').next().unwrap_or_default();
            let label = MS_CODES.iter().position(|c| *c == code).map(|i| i as u16);
            let mut files: Vec<(u32, PathBuf)> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let f = e.file_name().to_string_lossy().into_owned();
                    let n = f.strip_prefix("sub_")?.strip_suffix(".csv")?.parse().ok()?;
                    Some((n, e.path()))
                })
                .collect();
            files.sort();
            for (subject, path) in files {
                let Some(channels) = parse_motionsense(&path) else {
                    bad.push(path);
                    continue;
                };
                let n = channels[0].len();
                out.push(RawRecording {
                    dataset_id: "motionsense".into(),
                    subject_id: format!("sub{subject:02}"),
                    channels,
                    sample_rate_hz: 50.0,
                    labels: vec![label; n],
                    vocabulary: vocabulary.clone(),
                });
            }
        }
        if !bad.is_empty() {
            return Err(Error::CorruptFiles(bad));
        }
        out.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        Ok(out)
    }
}

fn parse_motionsense(path: &Path) -> Option<[Vec<f64>; CHANNELS]> {
    let mut rdr = csv::Reader::from_path(path).ok()?;
    let headers = rdr.headers().ok()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let gravity = [col("gravity.x")?, col("gravity.y")?, col("gravity.z")?];
    let user = [col("userAcceleration.x")?, col("userAcceleration.y")?, col("userAcceleration.z")?];
    let rot = [col("rotationRate.x")?, col("rotationRate.y")?, col("rotationRate.z")?];
    let mut out: [Vec<f64>; CHANNELS] = Default::default();
    for rec in rdr.records() {
        let rec = rec.ok()?;
        let get = |i: usize| rec.get(i)?.trim().parse::<f64>().ok();
        for axis in 0..3 {
            out[axis].push(get(gravity[axis])? + get(user[axis])?);
            out[3 + axis].push(get(rot[axis])?);
        }
    }
    Some(out)
}
