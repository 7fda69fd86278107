use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::EmotionLabel;
use crate::rng;

/// Smallest class size that still admits an 8:2 split.
pub const MIN_PER_CLASS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub label: EmotionLabel,
}

/// Entries with a train/test assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
    pub is_test: Vec<bool>,
}

impl DatasetIndex {
    pub fn train(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().zip(&self.is_test).filter(|(_, t)| !**t).map(|(e, _)| e)
    }

    pub fn test(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().zip(&self.is_test).filter(|(_, t)| **t).map(|(e, _)| e)
    }
}

/// Stratified 80/20 split: each class is shuffled with a seeded RNG and the
/// first `round(n/5)` of it go to test. Entry order is preserved.
pub fn split_dataset(entries: Vec<DatasetEntry>, seed: u64) -> Result<DatasetIndex> {
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut is_test = vec![false; entries.len()];
    let mut r = rng::seeded(seed);
    for label in EmotionLabel::ALL {
        let mut members: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].label == label).collect();
        if members.len() < MIN_PER_CLASS {
            return Err(Error::EmptyClass { class: label.name().to_string(), count: members.len() });
        }
        members.shuffle(&mut r);
        let n_test = (members.len() as f64 / 5.0).round() as usize;
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    Ok(DatasetIndex { entries, is_test })
}
