use super::{RawRecording, TARGET_RATE_HZ};
use crate::error::{Error, Result};

/// Downsample to 50 Hz by linear interpolation on a uniform time grid.
///
/// Output sample `k` sits at `t = k / 50` s; labels take the nearest source
/// sample in time. 50 Hz input is returned unchanged.
pub fn resample_to_50hz(rec: &RawRecording) -> Result<RawRecording> {
    let rate = rec.sample_rate_hz;
    if rate < TARGET_RATE_HZ {
        return Err(Error::RateTooLow(rate));
    }
    if rate == TARGET_RATE_HZ {
        return Ok(rec.clone());
    }
    let n_in = rec.len();
    let n_out = (n_in as f64 * TARGET_RATE_HZ / rate).floor() as usize;
    let step = rate / TARGET_RATE_HZ;
    let mut channels: [Vec<f64>; 6] = Default::default();
    for (out, src) in channels.iter_mut().zip(&rec.channels) {
        *out = (0..n_out)
            .map(|k| {
                let pos = k as f64 * step;
                let i = pos.floor() as usize;
                let frac = pos - i as f64;
                if i + 1 >= n_in {
                    src[n_in - 1]
                } else {
                    src[i] + (src[i + 1] - src[i]) * frac
                }
            })
            .collect();
    }
    let labels = (0..n_out)
        .map(|k| {
            let nearest = (k as f64 * step).round() as usize;
            rec.labels[nearest.min(n_in - 1)]
        })
        .collect();
    Ok(RawRecording { channels, labels, sample_rate_hz: TARGET_RATE_HZ, ..rec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rate: f64, ch0: Vec<f64>) -> RawRecording {
        let n = ch0.len();
        RawRecording {
            dataset_id: "d".into(),
            subject_id: "s".into(),
            channels: [ch0.clone(), ch0.clone(), ch0.clone(), ch0.clone(), ch0.clone(), ch0],
            sample_rate_hz: rate,
            labels: (0..n).map(|i| Some((i % 3) as u16)).collect(),
            vocabulary: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    /// Brute force: scan the source timestamps for the bracketing pair.
    fn oracle(src: &[f64], rate: f64, t: f64) -> f64 {
        let times: Vec<f64> = (0..src.len()).map(|i| i as f64 / rate).collect();
        for i in 0..src.len() - 1 {
            if times[i] <= t + 1e-12 && t < times[i + 1] - 1e-12 {
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                return src[i] * (1.0 - w) + src[i + 1] * w;
            }
        }
        *src.last().unwrap()
    }

    #[test]
    fn hundred_hz_ramp_matches_oracle() {
        let src: Vec<f64> = (0..256).map(|i| i as f64).collect();
        let out = resample_to_50hz(&rec(100.0, src.clone())).unwrap();
        assert_eq!(out.len(), 128);
        assert_eq!(out.sample_rate_hz, 50.0);
        for k in 0..128 {
            let expect = oracle(&src, 100.0, k as f64 / 50.0);
            assert!((out.channels[0][k] - expect).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn irregular_rate_matches_oracle() {
        let src: Vec<f64> = (0..331).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.01).collect();
        for rate in [64.0, 87.5, 200.0] {
            let out = resample_to_50hz(&rec(rate, src.clone())).unwrap();
            assert_eq!(out.len(), (331.0 * 50.0 / rate) as usize);
            for k in 0..out.len() {
                let expect = oracle(&src, rate, k as f64 / 50.0);
                assert!((out.channels[3][k] - expect).abs() < 1e-9, "rate {rate} k={k}");
            }
        }
    }

    #[test]
    fn fifty_hz_is_identity() {
        let r = rec(50.0, (0..77).map(|i| (i as f64).sqrt()).collect());
        assert_eq!(resample_to_50hz(&r).unwrap(), r);
    }

    #[test]
    fn constant_stays_constant() {
        let out = resample_to_50hz(&rec(120.0, vec![2.5; 500])).unwrap();
        assert!(out.channels.iter().all(|c| c.iter().all(|&v| v == 2.5)));
    }

    #[test]
    fn upsampling_refused() {
        assert!(matches!(resample_to_50hz(&rec(25.0, vec![0.0; 10])), Err(Error::RateTooLow(_))));
    }
}
