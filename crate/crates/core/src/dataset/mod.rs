//! Check-in ingestion, chronological splitting, trajectory segmentation and
//! prediction-instance construction.

mod instances;
mod load;
mod split;
mod store;
pub mod time;

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use instances::{build_instances, DropCounts, InstanceSet, Mode, PredictionInstance};
pub use load::{
    load_checkins, read_checkins, CheckIn, LoadOptions, LoadReport, RowWarning, TimestampFormat,
    COLUMNS,
};
pub use split::{chronological_split, segment_trajectories, Split, SplitRatios, Splits};
pub use store::{DatasetSummary, InstanceStore, STORE_FORMAT, STORE_VERSION};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoiMeta {
    pub category: u32,
    pub lat: f64,
    pub lon: f64,
}

/// Index spaces for POIs, users and categories, built from the training split.
///
/// POI indices live in `0..num_pois()`; `pad_poi()` is the extra index used for
/// suffix padding. Users unseen in training map to `unknown_user()`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub pois: Vec<String>,
    pub users: Vec<String>,
    pub categories: Vec<String>,
    pub poi_meta: Vec<PoiMeta>,
    pub coord_mean: [f64; 2],
    pub coord_std: [f64; 2],
    #[serde(skip)]
    poi_index: HashMap<String, u32>,
    #[serde(skip)]
    user_index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Indices follow first appearance in the (time-sorted) training records.
    pub fn from_training(train: &[CheckIn]) -> Self {
        let mut vocab = Vocabulary::default();
        let mut category_index: HashMap<String, u32> = HashMap::new();
        for c in train {
            if !vocab.user_index.contains_key(&c.user_id) {
                vocab
                    .user_index
                    .insert(c.user_id.clone(), vocab.users.len() as u32);
                vocab.users.push(c.user_id.clone());
            }
            if !vocab.poi_index.contains_key(&c.poi_id) {
                let next = category_index.len() as u32;
                let category = *category_index.entry(c.category_id.clone()).or_insert_with(|| {
                    vocab.categories.push(c.category_id.clone());
                    next
                });
                vocab
                    .poi_index
                    .insert(c.poi_id.clone(), vocab.pois.len() as u32);
                vocab.pois.push(c.poi_id.clone());
                vocab.poi_meta.push(PoiMeta {
                    category,
                    lat: c.lat,
                    lon: c.lon,
                });
            }
        }
        vocab.fit_coordinate_scaling();
        vocab
    }

    fn fit_coordinate_scaling(&mut self) {
        let n = self.poi_meta.len().max(1) as f64;
        let mean_lat = self.poi_meta.iter().map(|m| m.lat).sum::<f64>() / n;
        let mean_lon = self.poi_meta.iter().map(|m| m.lon).sum::<f64>() / n;
        let var = |f: &dyn Fn(&PoiMeta) -> f64, mean: f64| {
            self.poi_meta.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / n
        };
        let std_lat = var(&|m| m.lat, mean_lat).sqrt();
        let std_lon = var(&|m| m.lon, mean_lon).sqrt();
        self.coord_mean = [mean_lat, mean_lon];
        self.coord_std = [
            if std_lat > 1e-12 { std_lat } else { 1.0 },
            if std_lon > 1e-12 { std_lon } else { 1.0 },
        ];
    }

    /// Restores the lookup maps after deserialization.
    pub fn rebuild_index(&mut self) {
        self.poi_index = self
            .pois
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        self.user_index = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect();
    }

    pub fn poi(&self, id: &str) -> Option<u32> {
        self.poi_index.get(id).copied()
    }

    pub fn user(&self, id: &str) -> Option<u32> {
        self.user_index.get(id).copied()
    }

    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn pad_poi(&self) -> u32 {
        self.pois.len() as u32
    }

    pub fn pad_category(&self) -> u32 {
        self.categories.len() as u32
    }

    pub fn unknown_user(&self) -> u32 {
        self.users.len() as u32
    }

    /// Category of a POI index; the pad index maps to the pad category.
    pub fn category_of(&self, poi: u32) -> u32 {
        self.poi_meta
            .get(poi as usize)
            .map_or(self.pad_category(), |m| m.category)
    }

    /// Train-split z-scored (lat, lon); zeros for the pad index.
    pub fn standardized_coords(&self, poi: u32) -> [f64; 2] {
        match self.poi_meta.get(poi as usize) {
            Some(m) => [
                (m.lat - self.coord_mean[0]) / self.coord_std[0],
                (m.lon - self.coord_mean[1]) / self.coord_std[1],
            ],
            None => [0.0, 0.0],
        }
    }
}

/// One check-in of a user's full chronological sequence. `poi` is `None`
/// for venues outside the training vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqCheckIn {
    pub poi: Option<u32>,
    pub timestamp: i64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: u32,
    pub user_id: String,
    pub checkins: Vec<SeqCheckIn>,
    /// Start positions of every gap-separated trajectory after the first.
    pub trajectory_boundaries: Vec<usize>,
}

impl UserSequence {
    pub fn timestamps(&self) -> Vec<i64> {
        self.checkins.iter().map(|c| c.timestamp).collect()
    }

    pub fn segment(&mut self, gap_threshold: i64) {
        self.trajectory_boundaries = segment_trajectories(&self.timestamps(), gap_threshold);
    }

    /// Trajectories as position ranges. A trajectory never spans two splits,
    /// so split changes cut as well as time gaps.
    pub fn trajectories(&self) -> Vec<Range<usize>> {
        let mut cuts: Vec<usize> = self.trajectory_boundaries.clone();
        cuts.extend(
            self.checkins
                .windows(2)
                .enumerate()
                .filter(|(_, w)| w[0].split != w[1].split)
                .map(|(i, _)| i + 1),
        );
        cuts.sort_unstable();
        cuts.dedup();
        let mut out = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for c in cuts {
            out.push(start..c);
            start = c;
        }
        if start < self.checkins.len() {
            out.push(start..self.checkins.len());
        }
        out
    }

    pub fn split_of(&self, range: &Range<usize>) -> Option<Split> {
        self.checkins.get(range.start).map(|c| c.split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    pub ratios: SplitRatios,
    pub gap_threshold_seconds: i64,
    pub suffix_len: usize,
    /// Count transitions over each user's whole training sequence instead of per trajectory.
    pub count_across_trajectories: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            ratios: SplitRatios::default(),
            gap_threshold_seconds: 24 * 3600,
            suffix_len: 10,
            count_across_trajectories: false,
        }
    }
}

/// Vocabulary plus every user's segmented full sequence.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub sequences: Vec<UserSequence>,
    pub options: DatasetOptions,
    pub split_sizes: [usize; 3],
}

impl Dataset {
    pub fn build(checkins: Vec<CheckIn>, options: DatasetOptions) -> Result<Self> {
        let splits = chronological_split(checkins, options.ratios)?;
        Ok(Self::from_splits(&splits, options))
    }

    pub fn from_splits(splits: &Splits, options: DatasetOptions) -> Self {
        let vocabulary = Vocabulary::from_training(&splits.train);
        let mut by_user: std::collections::BTreeMap<&str, Vec<SeqCheckIn>> = Default::default();
        for (split, c) in splits.iter() {
            by_user.entry(&c.user_id).or_default().push(SeqCheckIn {
                poi: vocabulary.poi(&c.poi_id),
                timestamp: c.timestamp,
                split,
            });
        }
        let sequences = by_user
            .into_iter()
            .map(|(user_id, checkins)| {
                let mut seq = UserSequence {
                    user: vocabulary.user(user_id).unwrap_or(vocabulary.unknown_user()),
                    user_id: user_id.to_string(),
                    checkins,
                    trajectory_boundaries: Vec::new(),
                };
                seq.segment(options.gap_threshold_seconds);
                seq
            })
            .collect();
        Dataset {
            vocabulary,
            sequences,
            options,
            split_sizes: [splits.train.len(), splits.val.len(), splits.test.len()],
        }
    }

    pub fn instances(&self, mode: Mode) -> InstanceSet {
        build_instances(&self.sequences, &self.vocabulary, self.options.suffix_len, mode)
    }

    /// Training trajectories as POI index lists.
    pub fn train_trajectories(&self) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        for seq in &self.sequences {
            for r in seq.trajectories() {
                if seq.split_of(&r) == Some(Split::Train) {
                    out.push(seq.checkins[r].iter().filter_map(|c| c.poi).collect());
                }
            }
        }
        out
    }

    /// Sequences the transition counts are taken over.
    pub fn count_sequences(&self) -> Vec<Vec<u32>> {
        if self.options.count_across_trajectories {
            self.train_sequences()
        } else {
            self.train_trajectories()
        }
    }

    /// Per-user training sequences ignoring gap boundaries.
    pub fn train_sequences(&self) -> Vec<Vec<u32>> {
        self.sequences
            .iter()
            .map(|s| {
                s.checkins
                    .iter()
                    .filter(|c| c.split == Split::Train)
                    .filter_map(|c| c.poi)
                    .collect::<Vec<_>>()
            })
            .filter(|v: &Vec<u32>| !v.is_empty())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ck(user: &str, poi: &str, ts: i64) -> CheckIn {
        CheckIn {
            user_id: user.into(),
            poi_id: poi.into(),
            category_id: format!("cat-{}", &poi[..1]),
            lat: 40.0 + ts as f64 * 1e-6,
            lon: -73.0,
            timestamp: ts,
        }
    }

    #[test]
    fn vocabulary_follows_first_appearance() {
        let v = Vocabulary::from_training(&[ck("u2", "b", 1), ck("u1", "a", 2), ck("u2", "a", 3)]);
        assert_eq!(v.pois, vec!["b", "a"]);
        assert_eq!(v.users, vec!["u2", "u1"]);
        assert_eq!(v.poi("a"), Some(1));
        assert_eq!(v.pad_poi(), 2);
        assert_eq!(v.category_of(v.pad_poi()), v.pad_category());
        assert_eq!(v.standardized_coords(v.pad_poi()), [0.0, 0.0]);
    }

    #[test]
    fn vocabulary_index_survives_serde() {
        let v = Vocabulary::from_training(&[ck("u", "a", 1), ck("u", "b", 2)]);
        let mut back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back.poi("b"), None);
        back.rebuild_index();
        assert_eq!(back.poi("b"), Some(1));
        assert_eq!(back.user("u"), Some(0));
    }

    #[test]
    fn trajectories_cut_at_split_changes() {
        let seq = UserSequence {
            user: 0,
            user_id: "u".into(),
            checkins: vec![
                SeqCheckIn { poi: Some(0), timestamp: 1, split: Split::Train },
                SeqCheckIn { poi: Some(1), timestamp: 2, split: Split::Train },
                SeqCheckIn { poi: Some(2), timestamp: 3, split: Split::Val },
                SeqCheckIn { poi: Some(0), timestamp: 100_000, split: Split::Val },
            ],
            trajectory_boundaries: vec![3],
        };
        assert_eq!(seq.trajectories(), vec![0..2, 2..3, 3..4]);
    }

    #[test]
    fn count_scope_follows_option() {
        let tr = |poi, timestamp| SeqCheckIn { poi: Some(poi), timestamp, split: Split::Train };
        let mut ds = Dataset {
            vocabulary: Vocabulary::from_training(&[ck("u", "a", 1), ck("u", "b", 2), ck("u", "c", 3)]),
            sequences: vec![UserSequence {
                user: 0,
                user_id: "u".into(),
                checkins: vec![tr(0, 1), tr(1, 2), tr(2, 200_000), tr(0, 200_001)],
                trajectory_boundaries: vec![2],
            }],
            options: DatasetOptions::default(),
            split_sizes: [4, 0, 0],
        };
        assert_eq!(ds.count_sequences(), vec![vec![0, 1], vec![2, 0]]);
        ds.options.count_across_trajectories = true;
        assert_eq!(ds.count_sequences(), vec![vec![0, 1, 2, 0]]);
    }
}
