use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{SeqCheckIn, Split, UserSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every within-trajectory successor over training trajectories.
    Train,
    /// Last check-in of each trajectory of the given split.
    Eval(Split),
}

/// One supervised step: predict `target` at position `step` of a user's full
/// sequence from everything before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInstance {
    pub user: u32,
    /// Index into the dataset's sequence list.
    pub sequence: u32,
    /// Position of the target; the observed history is `[0, step)`.
    pub step: u32,
    pub source: u32,
    pub target: u32,
    /// Last `k` history POIs, left-padded (and OOV-masked) with the pad index.
    pub suffix: Vec<u32>,
    pub suffix_len: u32,
    /// Timestamp of the source check-in.
    pub query_time: i64,
    pub split: Split,
}

impl PredictionInstance {
    pub fn history<'a>(&self, sequences: &'a [UserSequence]) -> &'a [SeqCheckIn] {
        &sequences[self.sequence as usize].checkins[..self.step as usize]
    }

    pub fn transition(&self) -> (u32, u32) {
        (self.source, self.target)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    /// Target POI outside the training vocabulary.
    pub oov_target: usize,
    /// Source POI outside the training vocabulary.
    pub oov_source: usize,
    /// Eval trajectories with a single check-in.
    pub single_checkin: usize,
}

#[derive(Debug, Clone, Default)]
pub struct InstanceSet {
    pub instances: Vec<PredictionInstance>,
    pub dropped: DropCounts,
}

pub fn build_instances(
    sequences: &[UserSequence],
    vocab: &Vocabulary,
    k: usize,
    mode: Mode,
) -> InstanceSet {
    let mut set = InstanceSet::default();
    for (seq_idx, seq) in sequences.iter().enumerate() {
        for traj in seq.trajectories() {
            let split = match seq.split_of(&traj) {
                Some(s) => s,
                None => continue,
            };
            match mode {
                Mode::Train if split == Split::Train => {
                    for step in traj.start + 1..traj.end {
                        push_instance(&mut set, seq_idx, seq, step, vocab, k);
                    }
                }
                Mode::Eval(target) if split == target => {
                    if traj.len() < 2 {
                        set.dropped.single_checkin += 1;
                        continue;
                    }
                    push_instance(&mut set, seq_idx, seq, traj.end - 1, vocab, k);
                }
                _ => {}
            }
        }
    }
    set
}

fn push_instance(
    set: &mut InstanceSet,
    seq_idx: usize,
    seq: &UserSequence,
    step: usize,
    vocab: &Vocabulary,
    k: usize,
) {
    let (Some(target), prev) = (seq.checkins[step].poi, seq.checkins[step - 1]) else {
        set.dropped.oov_target += 1;
        return;
    };
    let Some(source) = prev.poi else {
        set.dropped.oov_source += 1;
        return;
    };
    let (suffix, suffix_len) = suffix_tokens(&seq.checkins, step.saturating_sub(k)..step, vocab, k);
    set.instances.push(PredictionInstance {
        user: seq.user,
        sequence: seq_idx as u32,
        step: step as u32,
        source,
        target,
        suffix,
        suffix_len,
        query_time: prev.timestamp,
        split: seq.checkins[step].split,
    });
}

fn suffix_tokens(
    checkins: &[SeqCheckIn],
    window: Range<usize>,
    vocab: &Vocabulary,
    k: usize,
) -> (Vec<u32>, u32) {
    let pad = vocab.pad_poi();
    let mut suffix = vec![pad; k - window.len()];
    suffix.extend(checkins[window].iter().map(|c| c.poi.unwrap_or(pad)));
    let real = suffix.iter().filter(|&&p| p != pad).count() as u32;
    (suffix, real)
}
