//! Seeded synthetic inertial corpora for tests and desk-scale runs.
//!
//! Every class owns a fixed waveform family (fundamental frequency plus a
//! per-channel harmonic profile) that does not depend on the dataset seed, so
//! several synthetic datasets share class semantics while differing in
//! subjects, sensor gains and noise.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActivityClass, RawRecording, CHANNELS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Dataset id given to the generated recordings.
    pub name: String,
    pub subjects: usize,
    pub classes: usize,
    pub minutes_per_class: f64,
    /// Standard deviation of additive Gaussian noise, relative to unit signal amplitude.
    pub noise: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
}

fn default_rate() -> f64 {
    50.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::InvalidSynthSpec("0 subjects".into()));
        }
        if self.classes == 0 || self.classes > ActivityClass::ALL.len() {
            return Err(Error::InvalidSynthSpec(format!("classes must be in 1..=10, got {}", self.classes)));
        }
        if !(self.minutes_per_class > 0.0) || !(self.noise >= 0.0) || !(self.sample_rate_hz >= 50.0) {
            return Err(Error::InvalidSynthSpec(format!(
                "minutes {} / noise {} / rate {} out of range",
                self.minutes_per_class, self.noise, self.sample_rate_hz
            )));
        }
        Ok(())
    }

    pub fn samples_per_class(&self) -> usize {
        (self.minutes_per_class * 60.0 * self.sample_rate_hz).round() as usize
    }
}

const HARMONICS: usize = 3;

/// Waveform parameters of one class.
#[derive(Clone, Debug)]
pub(crate) struct ClassFamily {
    pub fundamental_hz: f64,
    pub amp: [[f64; HARMONICS]; CHANNELS],
    pub phase: [[f64; HARMONICS]; CHANNELS],
}

impl ClassFamily {
    pub fn of(class: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_C1A5 + class as u64);
        let mut amp = [[0.0; HARMONICS]; CHANNELS];
        let mut phase = [[0.0; HARMONICS]; CHANNELS];
        for ch in 0..CHANNELS {
            for h in 0..HARMONICS {
                amp[ch][h] = rng.random_range(0.1..1.0) / (h + 1) as f64;
                phase[ch][h] = rng.random_range(0.0..TAU);
            }
        }
        Self { fundamental_hz: 0.8 + 0.5 * class as f64, amp, phase }
    }

    /// Noise-free value at time `t` seconds for a subject with frequency scale `fscale`.
    pub fn value(&self, ch: usize, t: f64, fscale: f64, offset: f64) -> f64 {
        let f = self.fundamental_hz * fscale;
        (0..HARMONICS).map(|h| self.amp[ch][h] * (TAU * (h + 1) as f64 * f * t + self.phase[ch][h] + offset).sin()).sum()
    }
}

/// Generate one recording per subject, each cycling through every class.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<RawRecording>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families: Vec<ClassFamily> = (0..spec.classes).map(ClassFamily::of).collect();
    let gains: [f64; CHANNELS] = std::array::from_fn(|_| rng.random_range(0.7..1.3));
    let offsets: [f64; CHANNELS] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::InvalidSynthSpec(e.to_string()))?;
    let per_class = spec.samples_per_class();
    let vocabulary: Vec<String> = ActivityClass::ALL[..spec.classes].iter().map(|c| c.name().to_string()).collect();
    let mut out = Vec::with_capacity(spec.subjects);
    for s in 0..spec.subjects {
        let fscale = rng.random_range(0.92..1.08);
        let amp = rng.random_range(0.8..1.2);
        let mut channels: [Vec<f64>; CHANNELS] = Default::default();
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for (c, fam) in families.iter().enumerate() {
            let seg_phase = rng.random_range(0.0..TAU);
            for i in 0..per_class {
                let t = i as f64 / spec.sample_rate_hz;
                for (ch, series) in channels.iter_mut().enumerate() {
                    let mut v = gains[ch] * amp * fam.value(ch, t, fscale, seg_phase) + offsets[ch];
                    if spec.noise > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    series.push(v);
                }
                labels.push(Some(c as u16));
            }
        }
        out.push(RawRecording {
            dataset_id: spec.name.clone(),
            subject_id: format!("s{s:03}"),
            channels,
            sample_rate_hz: spec.sample_rate_hz,
            labels,
            vocabulary: vocabulary.clone(),
        });
    }
    Ok(out)
}

/// Metadata file of an on-disk synthetic dataset.
pub(crate) const SYNTH_META: &str = "synthetic.json";

#[derive(Serialize, Deserialize)]
pub(crate) struct SynthMeta {
    pub spec: SynthSpec,
    pub seed: u64,
    pub subjects: Vec<String>,
}

/// Generate and write a synthetic dataset: `synthetic.json` plus one
/// `<subject>.csv` (`ax,ay,az,gx,gy,gz,label`) per subject.
pub fn write_synthetic(dir: &Path, spec: &SynthSpec, seed: u64) -> Result<Vec<RawRecording>> {
    let recs = synth_generate(spec, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in &recs {
        let path = dir.join(format!("{}.csv", rec.subject_id));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
        let werr = |e: csv::Error| Error::io(&path, e.into());
        w.write_record(["ax", "ay", "az", "gx", "gy", "gz", "label"]).map_err(werr)?;
        for t in 0..rec.len() {
            let mut row: Vec<String> = rec.channels.iter().map(|c| c[t].to_string()).collect();
            row.push(rec.labels[t].map(|l| rec.vocabulary[l as usize].clone()).unwrap_or_default());
            w.write_record(&row).map_err(werr)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let meta = SynthMeta { spec: spec.clone(), seed, subjects: recs.iter().map(|r| r.subject_id.clone()).collect() };
    crate::fsutil::write_json(&dir.join(SYNTH_META), &meta)?;
    Ok(recs)
}
