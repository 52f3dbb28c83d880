use serde::{Deserialize, Serialize};

use super::load::CheckIn;
use crate::error::{Error, Result};

pub const MIN_SPLIT_RECORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("split ratios must be positive: {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {all:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<CheckIn>,
    pub val: Vec<CheckIn>,
    pub test: Vec<CheckIn>,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = (Split, &CheckIn)> {
        self.train
            .iter()
            .map(|c| (Split::Train, c))
            .chain(self.val.iter().map(|c| (Split::Val, c)))
            .chain(self.test.iter().map(|c| (Split::Test, c)))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Global stable sort by timestamp, then contiguous cuts at `⌊train·n⌋` and
/// `⌊(train+val)·n⌋`.
pub fn chronological_split(mut checkins: Vec<CheckIn>, ratios: SplitRatios) -> Result<Splits> {
    ratios.validate()?;
    let n = checkins.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::TooFewRecords {
            needed: MIN_SPLIT_RECORDS,
            got: n,
        });
    }
    checkins.sort_by_key(|c| c.timestamp);
    // Small epsilon keeps 0.8 * 10 from landing at 7.999...
    let cut1 = ((ratios.train * n as f64) + 1e-9).floor() as usize;
    let cut2 = (((ratios.train + ratios.val) * n as f64) + 1e-9).floor() as usize;
    let test = checkins.split_off(cut2.min(n));
    let val = checkins.split_off(cut1.min(checkins.len()));
    Ok(Splits {
        train: checkins,
        val,
        test,
    })
}

/// Start indices of every trajectory after the first: position `i` is a
/// boundary iff `timestamps[i] - timestamps[i-1] > gap_threshold`.
pub fn segment_trajectories(timestamps: &[i64], gap_threshold: i64) -> Vec<usize> {
    timestamps
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] - w[0] > gap_threshold)
        .map(|(i, _)| i + 1)
        .collect()
}
