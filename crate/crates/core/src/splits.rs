//! Leave-One-Dataset-Out folds, subject-wise partitions and nested
//! labeled-data scarcity subsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonize::{Corpus, SensorWindow};
use crate::seed::rng_for;

pub const PRETRAIN_FRACTIONS: [f64; 2] = [0.9, 0.1];
pub const TARGET_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];
pub const SCARCITY_COUNTS: [usize; 7] = [1, 2, 5, 10, 20, 50, 100];

/// Labeled-data regime used for fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Full,
    PerClass(usize),
}

impl Scenario {
    pub fn is_scarce(self) -> bool {
        matches!(self, Scenario::PerClass(_))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Full => f.write_str("full"),
            Scenario::PerClass(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Scenario::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Scenario::PerClass(n)),
            _ => Err(Error::InvalidArgument(format!("scenario must be `full` or a positive count, got {s:?}"))),
        }
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        let s = match raw {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(serde::de::Error::custom(format!("bad scenario {other}"))),
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Subjects per partition under largest-remainder rounding of `fractions * n`.
///
/// Remainder ties go to the earlier partition. Every partition with a nonzero
/// fraction receives at least one subject, taken from the largest partition.
pub fn subject_counts(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(total));
    }
    let need = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < need {
        return Err(Error::TooFewSubjects { have: n, need });
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    for i in 0..counts.len() {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Partition windows subject-wise. Returns window ids per partition in input order.
pub fn subject_split<'a>(
    windows: impl IntoIterator<Item = &'a SensorWindow>,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let windows: Vec<&SensorWindow> = windows.into_iter().collect();
    let subjects: BTreeSet<&str> = windows.iter().map(|w| w.subject_id.as_str()).collect();
    let mut subjects: Vec<&str> = subjects.into_iter().collect();
    let counts = subject_counts(subjects.len(), fractions)?;
    subjects.shuffle(&mut rng_for(seed, "subject_split"));
    let mut part_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut it = subjects.into_iter();
    for (p, &c) in counts.iter().enumerate() {
        for s in it.by_ref().take(c) {
            part_of.insert(s, p);
        }
    }
    let mut out = vec![Vec::new(); fractions.len()];
    for w in windows {
        out[part_of[w.subject_id.as_str()]].push(w.id.clone());
    }
    Ok(out)
}

/// A class that could not supply the requested number of windows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub per_class: usize,
    pub class: u8,
    pub available: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScarcitySubsets {
    pub subsets: BTreeMap<usize, Vec<String>>,
    pub shortfalls: Vec<Shortfall>,
}

/// Nested per-class subsets: one seeded permutation per class, of which each
/// count takes a prefix.
pub fn scarcity_subsets<'a>(
    windows: impl IntoIterator<Item = &'a SensorWindow>,
    classes: &[u8],
    counts: &[usize],
    seed: u64,
) -> Result<ScarcitySubsets> {
    if counts.windows(2).any(|p| p[0] >= p[1]) || counts.first() == Some(&0) {
        return Err(Error::InvalidArgument(format!("scarcity counts must be positive and strictly increasing: {counts:?}")));
    }
    let mut by_class: BTreeMap<u8, Vec<&SensorWindow>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    for w in windows {
        by_class.entry(w.label).or_default().push(w);
    }
    let mut perms: BTreeMap<u8, Vec<&SensorWindow>> = BTreeMap::new();
    for (c, mut ws) in by_class {
        if ws.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        ws.sort_by(|a, b| a.id.cmp(&b.id));
        ws.shuffle(&mut rng_for(seed, &format!("scarcity/{c}")));
        perms.insert(c, ws);
    }
    let mut out = ScarcitySubsets::default();
    for &n in counts {
        let mut picked = Vec::new();
        for (&c, ws) in &perms {
            if ws.len() < n {
                out.shortfalls.push(Shortfall { per_class: n, class: c, available: ws.len() });
            }
            picked.extend(ws.iter().take(n).map(|w| w.id.clone()));
        }
        out.subsets.insert(n, picked);
    }
    Ok(out)
}

/// One fold: pretraining data from every dataset but `leftout_dataset`, and
/// the target partitions of `leftout_dataset`. Windows are referenced by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LodoSplit {
    pub fold_id: String,
    pub leftout_dataset: String,
    pub seed: u64,
    pub pretrain_train: Vec<String>,
    pub pretrain_val: Vec<String>,
    pub target_train: Vec<String>,
    pub target_val: Vec<String>,
    pub target_test: Vec<String>,
    pub scarcity: BTreeMap<usize, Vec<String>>,
    pub shortfalls: Vec<Shortfall>,
}

impl LodoSplit {
    pub fn train_ids(&self, scenario: Scenario) -> Result<&[String]> {
        let ids = match scenario {
            Scenario::Full => &self.target_train,
            Scenario::PerClass(n) => {
                self.scarcity.get(&n).ok_or_else(|| Error::EmptyScenario(scenario.to_string()))?
            }
        };
        if ids.is_empty() {
            return Err(Error::EmptyScenario(scenario.to_string()));
        }
        Ok(ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::fsutil::read_json(path)
    }
}

/// Map window ids to corpus positions.
pub fn resolve(corpus: &Corpus, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| corpus.position(id).ok_or_else(|| Error::InvalidArgument(format!("window {id:?} not in corpus"))))
        .collect()
}

pub fn build_lodo(corpus: &Corpus, leftout_id: &str, seed: u64) -> Result<LodoSplit> {
    build_lodo_with(corpus, leftout_id, seed, &SCARCITY_COUNTS)
}

pub fn build_lodo_with(corpus: &Corpus, leftout_id: &str, seed: u64, counts: &[usize]) -> Result<LodoSplit> {
    let datasets = corpus.dataset_ids();
    if !datasets.iter().any(|d| d == leftout_id) {
        return Err(Error::MissingDataset(leftout_id.to_string()));
    }
    if datasets.len() < 2 {
        return Err(Error::InvalidArgument("a fold needs at least two datasets".into()));
    }
    let mut split = LodoSplit {
        fold_id: leftout_id.to_string(),
        leftout_dataset: leftout_id.to_string(),
        seed,
        pretrain_train: Vec::new(),
        pretrain_val: Vec::new(),
        target_train: Vec::new(),
        target_val: Vec::new(),
        target_test: Vec::new(),
        scarcity: BTreeMap::new(),
        shortfalls: Vec::new(),
    };
    for ds in &datasets {
        let windows: Vec<&SensorWindow> = corpus.indices_of(ds).into_iter().map(|i| corpus.window(i)).collect();
        let ds_seed = crate::seed::derive_seed(seed, ds);
        if ds == leftout_id {
            let mut parts = subject_split(windows.iter().copied(), &TARGET_FRACTIONS, ds_seed)?.into_iter();
            split.target_train = parts.next().unwrap();
            split.target_val = parts.next().unwrap();
            split.target_test = parts.next().unwrap();
            let classes: BTreeSet<u8> = windows.iter().map(|w| w.label).collect();
            let classes: Vec<u8> = classes.into_iter().collect();
            let train: Vec<&SensorWindow> =
                resolve(corpus, &split.target_train)?.into_iter().map(|i| corpus.window(i)).collect();
            let sc = scarcity_subsets(train, &classes, counts, ds_seed)?;
            split.scarcity = sc.subsets;
            split.shortfalls = sc.shortfalls;
        } else {
            let mut parts = subject_split(windows, &PRETRAIN_FRACTIONS, ds_seed)?.into_iter();
            split.pretrain_train.extend(parts.next().unwrap());
            split.pretrain_val.extend(parts.next().unwrap());
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn windows(subjects: usize, per_subject: usize, classes: u8) -> Vec<SensorWindow> {
        let mut out = Vec::new();
        for s in 0..subjects {
            for k in 0..per_subject {
                out.push(SensorWindow {
                    id: format!("d/s{s:02}/0/{k}"),
                    values: vec![0.0; 768],
                    label: (k % classes as usize) as u8,
                    subject_id: format!("s{s:02}"),
                    dataset_id: "d".into(),
                });
            }
        }
        out
    }

    #[test]
    fn reference_counts() {
        assert_eq!(subject_counts(10, &[0.9, 0.1]).unwrap(), vec![9, 1]);
        assert_eq!(subject_counts(10, &[0.7, 0.1, 0.2]).unwrap(), vec![7, 1, 2]);
        assert_eq!(subject_counts(10, &[1.0]).unwrap(), vec![10]);
        assert_eq!(subject_counts(5, &[0.9, 0.1]).unwrap(), vec![4, 1]);
        assert_eq!(subject_counts(5, &[0.7, 0.1, 0.2]).unwrap(), vec![3, 1, 1]);
        assert_eq!(subject_counts(3, &[0.7, 0.1, 0.2]).unwrap(), vec![1, 1, 1]);
        assert!(matches!(subject_counts(2, &[0.7, 0.1, 0.2]), Err(Error::TooFewSubjects { have: 2, need: 3 })));
        assert!(matches!(subject_counts(10, &[0.5, 0.4]), Err(Error::BadFractions(_))));
    }

    #[test]
    fn split_is_subject_disjoint_and_seeded() {
        let ws = windows(10, 4, 2);
        let a = subject_split(&ws, &[0.7, 0.1, 0.2], 1).unwrap();
        assert_eq!(a, subject_split(&ws, &[0.7, 0.1, 0.2], 1).unwrap());
        let subj = |ids: &Vec<String>| ids.iter().map(|i| i.split('/').nth(1).unwrap().to_string()).collect::<BTreeSet<_>>();
        assert_eq!(a.iter().map(|p| subj(p).len()).collect::<Vec<_>>(), vec![7, 1, 2]);
        assert!(subj(&a[0]).is_disjoint(&subj(&a[2])));
        let differs = (2..10).any(|s| subject_split(&ws, &[0.7, 0.1, 0.2], s).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn scarcity_nesting_and_sizes() {
        let ws = windows(3, 40, 4);
        let sc = scarcity_subsets(&ws, &[0, 1, 2, 3], &[1, 2, 5], 9).unwrap();
        let s1: BTreeSet<_> = sc.subsets[&1].iter().collect();
        let s2: BTreeSet<_> = sc.subsets[&2].iter().collect();
        assert_eq!(s1.len(), 4);
        assert_eq!(s2.len(), 8);
        assert!(s1.is_subset(&s2));
        assert_eq!(sc.subsets[&5].len(), 20);
        assert!(sc.shortfalls.is_empty());

        let sc = scarcity_subsets(&ws, &[0, 1, 2, 3], &[30, 31], 9).unwrap();
        assert_eq!(sc.subsets[&30].len(), 120);
        assert_eq!(sc.subsets[&31].len(), 120);
        assert_eq!(sc.shortfalls.len(), 4);
        assert!(matches!(scarcity_subsets(&ws, &[0, 7], &[1], 0), Err(Error::EmptyClass(7))));
        assert!(scarcity_subsets(&ws, &[0], &[2, 2], 0).is_err());
        assert!(scarcity_subsets(&ws, &[0], &[], 0).unwrap().subsets.is_empty());
    }

    #[test]
    fn scenario_round_trip() {
        for s in ["full", "1", "100"] {
            assert_eq!(s.parse::<Scenario>().unwrap().to_string(), s);
        }
        assert!("0".parse::<Scenario>().is_err());
        let j = serde_json::to_string(&Scenario::PerClass(10)).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&j).unwrap(), Scenario::PerClass(10));
        assert_eq!(serde_json::from_str::<Scenario>("10").unwrap(), Scenario::PerClass(10));
    }

    proptest! {
        #[test]
        fn counts_cover_all_subjects(n in 3usize..60, a in 1u32..98, b in 1u32..98) {
            prop_assume!(a + b < 100);
            let f = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
            let c = subject_counts(n, &f).unwrap();
            prop_assert_eq!(c.iter().sum::<usize>(), n);
            prop_assert!(c.iter().all(|&x| x >= 1));
        }

        #[test]
        fn nesting_holds_for_any_seed(seed in any::<u64>()) {
            let ws = windows(2, 30, 3);
            let sc = scarcity_subsets(&ws, &[0, 1, 2], &SCARCITY_COUNTS, seed).unwrap();
            let sets: Vec<BTreeSet<&String>> = SCARCITY_COUNTS.iter().map(|n| sc.subsets[n].iter().collect()).collect();
            for p in sets.windows(2) {
                prop_assert!(p[0].is_subset(&p[1]));
            }
        }
    }
}
