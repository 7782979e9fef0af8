use std::collections::BTreeMap;

use super::{ActivityClass, RawRecording, SensorWindow, CHANNELS};

/// Window start offsets for a series of length `n`.
pub fn window_offsets(n: usize, size: usize, stride: usize) -> Vec<usize> {
    assert!(size > 0 && stride > 0);
    if n < size {
        return Vec::new();
    }
    (0..=(n - size) / stride).map(|i| i * stride).collect()
}

/// `floor((n - size) / stride) + 1` for `n >= size`, else 0.
pub fn window_count(n: usize, size: usize, stride: usize) -> usize {
    if n < size {
        0
    } else {
        (n - size) / stride + 1
    }
}

/// Strict-majority label of a span; `None` for ties or an unlabeled majority.
pub fn majority_label(labels: &[Option<u8>]) -> Option<u8> {
    let mut counts: BTreeMap<Option<u8>, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == best);
    let (&label, _) = winners.next()?;
    if winners.next().is_some() {
        return None;
    }
    label
}

/// Cut a normalized 50 Hz recording with unified labels into windows.
///
/// Labels are read through `rec.vocabulary`; entries that are not unified
/// class names count as unlabeled. Windows whose majority is a tie or is
/// unlabeled are dropped.
pub fn segment_windows(rec: &RawRecording, rec_index: usize, size: usize, overlap: f64) -> Vec<SensorWindow> {
    let stride = ((size as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let classes: Vec<Option<u8>> =
        rec.vocabulary.iter().map(|name| ActivityClass::from_name(name).map(ActivityClass::id)).collect();
    let labels: Vec<Option<u8>> = rec.labels.iter().map(|l| l.and_then(|i| classes[i as usize])).collect();
    window_offsets(rec.len(), size, stride)
        .into_iter()
        .filter_map(|off| {
            let label = majority_label(&labels[off..off + size])?;
            let mut values = Vec::with_capacity(size * CHANNELS);
            for t in off..off + size {
                for ch in &rec.channels {
                    values.push(ch[t]);
                }
            }
            Some(SensorWindow {
                id: format!("{}/{}/{}/{}", rec.dataset_id, rec.subject_id, rec_index, off),
                values,
                label,
                subject_id: rec.subject_id.clone(),
                dataset_id: rec.dataset_id.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonize::{WINDOW_LEN, WINDOW_OVERLAP};

    fn rec(n: usize, label_of: impl Fn(usize) -> Option<u16>) -> RawRecording {
        RawRecording {
            dataset_id: "d".into(),
            subject_id: "s1".into(),
            channels: std::array::from_fn(|c| (0..n).map(|t| (t * 10 + c) as f64).collect()),
            sample_rate_hz: 50.0,
            labels: (0..n).map(label_of).collect(),
            vocabulary: ActivityClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        }
    }

    /// Enumerate every start position and keep those that fit.
    fn brute_offsets(n: usize, size: usize, stride: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        while off < n {
            if off + size <= n {
                out.push(off);
            }
            off += stride;
        }
        out
    }

    #[test]
    fn count_formula_matches_enumeration() {
        for n in 0..=2000 {
            let brute = brute_offsets(n, 128, 64);
            assert_eq!(window_offsets(n, 128, 64), brute, "n={n}");
            assert_eq!(window_count(n, 128, 64), brute.len(), "n={n}");
        }
    }

    #[test]
    fn six_forty_gives_nine() {
        let w = segment_windows(&rec(640, |_| Some(5)), 0, WINDOW_LEN, WINDOW_OVERLAP);
        assert_eq!(w.len(), 9);
        let offs: Vec<usize> = w.iter().map(|w| w.id.rsplit('/').next().unwrap().parse().unwrap()).collect();
        assert_eq!(offs, (0..9).map(|i| i * 64).collect::<Vec<_>>());
        assert_eq!(w[1].at(0, 2), (64 * 10 + 2) as f64);
        assert!(w.iter().all(|w| w.values.len() == 768 && w.label == 5));
    }

    #[test]
    fn boundaries() {
        assert_eq!(segment_windows(&rec(128, |_| Some(0)), 0, 128, 0.5).len(), 1);
        assert_eq!(segment_windows(&rec(127, |_| Some(0)), 0, 128, 0.5).len(), 0);
    }

    #[test]
    fn majority_and_ties() {
        // 100 samples of class 1 then class 2: first window 64/64 tie is dropped
        let r = rec(256, |t| Some(if t < 64 { 1 } else { 2 }));
        let w = segment_windows(&r, 0, 128, 0.5);
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.label == 2));
        let r = rec(256, |t| Some(if t < 100 { 1 } else { 2 }));
        let w = segment_windows(&r, 0, 128, 0.5);
        assert_eq!(w.iter().map(|w| w.label).collect::<Vec<_>>(), vec![1, 2, 2]);
        assert_eq!(majority_label(&[None, None, Some(1)]), None);
        assert_eq!(majority_label(&[None, Some(1), Some(1)]), Some(1));
    }
}
