//! On-disk instance store.
//!
//! A single JSON document:
//!
//! ```text
//! {
//!   "format": "recap-instances",
//!   "version": 1,
//!   "options":    { ratios, gap_threshold_seconds, suffix_len },
//!   "vocabulary": { pois, users, categories, poi_meta, coord_mean, coord_std },
//!   "split_sizes": [train, val, test],
//!   "sequences":  [ { user, user_id, checkins: [{poi, timestamp, split}], trajectory_boundaries } ],
//!   "train" | "val" | "test": { "instances": [...], "dropped": {...} }
//! }
//! ```
//!
//! POI indices refer to `vocabulary.pois`; the pad index equals its length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Dataset, DatasetOptions, DropCounts, InstanceSet, Mode, PredictionInstance, Split,
    UserSequence, Vocabulary,
};
use crate::error::{Error, Result};

pub const STORE_FORMAT: &str = "recap-instances";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredSplit {
    pub instances: Vec<PredictionInstance>,
    pub dropped: DropCounts,
}

impl From<InstanceSet> for StoredSplit {
    fn from(s: InstanceSet) -> Self {
        StoredSplit {
            instances: s.instances,
            dropped: s.dropped,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceStore {
    pub format: String,
    pub version: u32,
    pub options: DatasetOptions,
    pub vocabulary: Vocabulary,
    pub split_sizes: [usize; 3],
    pub sequences: Vec<UserSequence>,
    pub train: StoredSplit,
    pub val: StoredSplit,
    pub test: StoredSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub checkins: usize,
    pub train_instances: usize,
    pub val_instances: usize,
    pub test_instances: usize,
    pub test_dropped: DropCounts,
}

impl InstanceStore {
    pub fn from_dataset(ds: Dataset) -> Self {
        let train = ds.instances(Mode::Train).into();
        let val = ds.instances(Mode::Eval(Split::Val)).into();
        let test = ds.instances(Mode::Eval(Split::Test)).into();
        InstanceStore {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            options: ds.options,
            vocabulary: ds.vocabulary,
            split_sizes: ds.split_sizes,
            sequences: ds.sequences,
            train,
            val,
            test,
        }
    }

    pub fn split(&self, split: Split) -> &[PredictionInstance] {
        match split {
            Split::Train => &self.train.instances,
            Split::Val => &self.val.instances,
            Split::Test => &self.test.instances,
        }
    }

    /// Users seen across all splits, including those unseen in training.
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            users: self.sequences.len(),
            pois: self.vocabulary.num_pois(),
            categories: self.vocabulary.num_categories(),
            checkins: self.split_sizes.iter().sum(),
            train_instances: self.train.instances.len(),
            val_instances: self.val.instances.len(),
            test_instances: self.test.instances.len(),
            test_dropped: self.test.dropped,
        }
    }

    pub fn dataset(&self) -> Dataset {
        Dataset {
            vocabulary: self.vocabulary.clone(),
            sequences: self.sequences.clone(),
            options: self.options,
            split_sizes: self.split_sizes,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store: InstanceStore =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if store.format != STORE_FORMAT || store.version != STORE_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!(
                    "expected {STORE_FORMAT} v{STORE_VERSION}, found {} v{}",
                    store.format, store.version
                ),
            });
        }
        store.vocabulary.rebuild_index();
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::ck;
    use super::*;

    #[test]
    fn save_load_roundtrip() {
        let recs = (0..40)
            .map(|i| ck(["u", "v"][i % 2], ["a", "b", "c", "d"][i % 4], (i as i64 + 1) * 3600))
            .collect();
        let ds = Dataset::build(recs, DatasetOptions::default()).unwrap();
        let store = InstanceStore::from_dataset(ds);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        store.save(&path).unwrap();
        let back = InstanceStore::load(&path).unwrap();
        assert_eq!(back.train.instances, store.train.instances);
        assert_eq!(back.test.instances, store.test.instances);
        assert_eq!(back.vocabulary.poi("c"), store.vocabulary.poi("c"));
        assert_eq!(back.summary(), store.summary());
    }

    #[test]
    fn wrong_format_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
        assert!(matches!(InstanceStore::load(&path), Err(Error::Format { .. })));
    }
}
