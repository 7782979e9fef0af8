use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten activities shared across all harmonized datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityClass {
    Downstairs,
    Upstairs,
    Running,
    Sitting,
    Standing,
    Walking,
    Lying,
    Cycling,
    NordicWalking,
    Jumping,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; 10] = [
        Self::Downstairs,
        Self::Upstairs,
        Self::Running,
        Self::Sitting,
        Self::Standing,
        Self::Walking,
        Self::Lying,
        Self::Cycling,
        Self::NordicWalking,
        Self::Jumping,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Downstairs => "Downstairs",
            Self::Upstairs => "Upstairs",
            Self::Running => "Running",
            Self::Sitting => "Sitting",
            Self::Standing => "Standing",
            Self::Walking => "Walking",
            Self::Lying => "Lying",
            Self::Cycling => "Cycling",
            Self::NordicWalking => "Nordic Walking",
            Self::Jumping => "Jumping",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Curated `source label -> class` pairs for one reader. Matching is
/// case-insensitive.
pub type AliasTable = Vec<(String, ActivityClass)>;

/// A dataset's source label names and the alias table that accompanies them.
#[derive(Clone, Debug)]
pub struct SourceVocabulary {
    pub dataset_id: String,
    pub labels: Vec<String>,
    pub aliases: AliasTable,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    /// dataset -> source label -> class
    forward: BTreeMap<String, BTreeMap<String, ActivityClass>>,
    /// dataset -> source labels outside the union
    dropped: BTreeMap<String, Vec<String>>,
}

impl LabelMap {
    pub fn class_of(&self, dataset_id: &str, label: &str) -> Option<ActivityClass> {
        self.forward.get(dataset_id)?.get(label).copied()
    }

    /// All `(dataset, source label)` pairs mapped to `class`.
    pub fn sources_of(&self, class: ActivityClass) -> Vec<(String, String)> {
        self.forward
            .iter()
            .flat_map(|(ds, m)| m.iter().filter(|(_, &c)| c == class).map(move |(l, _)| (ds.clone(), l.clone())))
            .collect()
    }

    pub fn dropped(&self, dataset_id: &str) -> &[String] {
        self.dropped.get(dataset_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mapping(&self, dataset_id: &str) -> BTreeMap<String, ActivityClass> {
        self.forward.get(dataset_id).cloned().unwrap_or_default()
    }

    pub fn classes(&self) -> &'static [ActivityClass; 10] {
        &ActivityClass::ALL
    }
}

/// Align every vocabulary to the unified classes via its alias table.
pub fn unify_labels(vocabularies: &[SourceVocabulary]) -> Result<LabelMap> {
    let mut map = LabelMap::default();
    for vocab in vocabularies {
        let mut aliases: BTreeMap<String, ActivityClass> = BTreeMap::new();
        for (label, class) in &vocab.aliases {
            let key = label.to_lowercase();
            if let Some(prev) = aliases.insert(key, *class) {
                if prev != *class {
                    return Err(Error::AliasConflict {
                        label: label.clone(),
                        first: prev.name().to_string(),
                        second: class.name().to_string(),
                    });
                }
            }
        }
        let fwd = map.forward.entry(vocab.dataset_id.clone()).or_default();
        let dropped = map.dropped.entry(vocab.dataset_id.clone()).or_default();
        for label in &vocab.labels {
            match aliases.get(&label.to_lowercase()) {
                Some(&c) => {
                    fwd.insert(label.clone(), c);
                }
                None => {
                    if !dropped.contains(label) {
                        dropped.push(label.clone());
                    }
                }
            }
        }
    }
    Ok(map)
}
