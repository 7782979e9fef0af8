use serde::{Deserialize, Serialize};

use super::{RawRecording, CHANNELS};
use crate::error::{Error, Result};

/// Per-channel population mean and standard deviation of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub fn normalize(&self, ch: usize, v: f64) -> f64 {
        (v - self.mean[ch]) / self.std[ch]
    }

    pub fn denormalize(&self, ch: usize, z: f64) -> f64 {
        z * self.std[ch] + self.mean[ch]
    }
}

/// Z-normalize every channel over the concatenation of all recordings of a
/// single dataset.
pub fn znormalize_dataset(recs: &[RawRecording]) -> Result<(Vec<RawRecording>, ChannelStats)> {
    let Some(first) = recs.first() else {
        return Err(Error::InvalidArgument("no recordings to normalize".into()));
    };
    let mut ids: Vec<String> = recs.iter().map(|r| r.dataset_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() > 1 {
        return Err(Error::MixedDatasets(ids));
    }
    let mut stats = ChannelStats { mean: [0.0; CHANNELS], std: [0.0; CHANNELS] };
    for ch in 0..CHANNELS {
        let n: usize = recs.iter().map(|r| r.channels[ch].len()).sum();
        if n == 0 {
            return Err(Error::ZeroVariance { dataset: first.dataset_id.clone(), channel: ch });
        }
        let mean = recs.iter().flat_map(|r| r.channels[ch].iter()).sum::<f64>() / n as f64;
        let var = recs.iter().flat_map(|r| r.channels[ch].iter()).map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance { dataset: first.dataset_id.clone(), channel: ch });
        }
        stats.mean[ch] = mean;
        stats.std[ch] = std;
    }
    let out = recs
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for (ch, series) in r.channels.iter_mut().enumerate() {
                for v in series.iter_mut() {
                    *v = stats.normalize(ch, *v);
                }
            }
            r
        })
        .collect();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ds: &str, vals: Vec<f64>) -> RawRecording {
        let n = vals.len();
        let ch: [Vec<f64>; 6] = std::array::from_fn(|c| vals.iter().map(|v| v * (c + 1) as f64 + c as f64).collect());
        RawRecording {
            dataset_id: ds.into(),
            subject_id: "s".into(),
            channels: ch,
            sample_rate_hz: 50.0,
            labels: vec![None; n],
            vocabulary: vec![],
        }
    }

    fn pooled(recs: &[RawRecording], ch: usize) -> (f64, f64) {
        let all: Vec<f64> = recs.iter().flat_map(|r| r.channels[ch].clone()).collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64;
        (m, v.sqrt())
    }

    #[test]
    fn one_two_three() {
        let (out, stats) = znormalize_dataset(&[rec("d", vec![1.0, 2.0, 3.0])]).unwrap();
        let z = &out[0].channels[0];
        let expect = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in z.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((stats.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pooled_moments_are_standard_and_idempotent() {
        let recs = vec![rec("d", (0..50).map(|i| (i as f64 * 0.3).sin() * 4.0).collect()), rec("d", vec![7.0; 9])];
        let (out, _) = znormalize_dataset(&recs).unwrap();
        for ch in 0..CHANNELS {
            let (m, s) = pooled(&out, ch);
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
        let (again, stats) = znormalize_dataset(&out).unwrap();
        for (a, b) in again.iter().zip(&out) {
            for ch in 0..CHANNELS {
                for (x, y) in a.channels[ch].iter().zip(&b.channels[ch]) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
        assert!(stats.mean.iter().all(|m| m.abs() < 1e-9));
    }

    #[test]
    fn datasets_normalized_separately() {
        let a = vec![rec("a", vec![1.0, 2.0, 3.0, 4.0])];
        let b = vec![rec("b", vec![100.0, 300.0, 200.0])];
        let (na, _) = znormalize_dataset(&a).unwrap();
        let (nb, _) = znormalize_dataset(&b).unwrap();
        for set in [&na, &nb] {
            let (m, s) = pooled(set, 2);
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
        let raw_pool: Vec<RawRecording> = a.into_iter().chain(b).collect();
        let (m, _) = pooled(&raw_pool, 0);
        assert!(m.abs() > 1.0);
    }

    #[test]
    fn constant_channel_is_an_error() {
        let r = rec("d", vec![3.0; 10]);
        assert!(matches!(znormalize_dataset(&[r]), Err(Error::ZeroVariance { channel: 0, .. })));
    }

    #[test]
    fn mixed_datasets_rejected() {
        assert!(matches!(
            znormalize_dataset(&[rec("a", vec![1.0, 2.0]), rec("b", vec![1.0, 2.0])]),
            Err(Error::MixedDatasets(_))
        ));
    }
}
