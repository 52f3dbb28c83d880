//! Ranking metrics and the head/tail and frequency-bin breakdowns.

mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use candle_core::DType;
use serde::{Deserialize, Serialize};

pub use metrics::{metrics, ndcg_term, rank_target, CutoffMetrics, GroupMetrics};

use crate::dataset::PredictionInstance;
use crate::error::Result;
use crate::graph::TransitionStore;
use crate::model::{Batch, BatchContext, Dropout, RecapModel, Stages};

/// Number of exact-count frequency bins before the open `10+` bin.
pub const FREQUENCY_BINS: u32 = 10;

/// Target ranks under the final logits, in instance order. Dropout is off.
pub fn score_ranks(
    model: &RecapModel,
    instances: &[PredictionInstance],
    ctx: &BatchContext,
    stages: Stages,
    batch_size: usize,
) -> Result<Vec<u32>> {
    let mut ranks = Vec::with_capacity(instances.len());
    let mut drop = Dropout::eval();
    let refs: Vec<&PredictionInstance> = instances.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = Batch::build(chunk, ctx)?;
        let out = model.forward(&batch, stages, &mut drop)?;
        let logits = out.logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        for (row, &t) in logits.iter().zip(&batch.targets) {
            ranks.push(rank_target(row, t as usize));
        }
    }
    Ok(ranks)
}

/// Indices of head and tail instances: tail iff `m ≤ eta`.
pub fn head_tail_split(
    instances: &[PredictionInstance],
    store: &TransitionStore,
    eta: u32,
) -> (Vec<usize>, Vec<usize>) {
    let mut head = Vec::new();
    let mut tail = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if store.is_tail(inst.source, inst.target, eta) {
            tail.push(i);
        } else {
            head.push(i);
        }
    }
    (head, tail)
}

pub fn frequency_bin(count: u32) -> u32 {
    count.min(FREQUENCY_BINS)
}

pub fn bin_label(bin: u32) -> String {
    if bin >= FREQUENCY_BINS {
        format!("{FREQUENCY_BINS}+")
    } else {
        bin.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: String,
    pub count: usize,
    pub hr1: Option<f64>,
    pub hr20: Option<f64>,
}

/// Head/tail shares over distinct `(source, target)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShares {
    pub pairs: usize,
    pub head: usize,
    pub tail: usize,
    pub unseen: usize,
    pub tail_share: Option<f64>,
}

pub fn unique_pair_shares(instances: &[PredictionInstance], store: &TransitionStore, eta: u32) -> PairShares {
    let pairs: BTreeSet<(u32, u32)> = instances.iter().map(|i| i.transition()).collect();
    let tail = pairs.iter().filter(|&&(s, d)| store.is_tail(s, d, eta)).count();
    let unseen = pairs.iter().filter(|&&(s, d)| store.count_of(s, d) == 0).count();
    PairShares {
        pairs: pairs.len(),
        head: pairs.len() - tail,
        tail,
        unseen,
        tail_share: (!pairs.is_empty()).then(|| tail as f64 / pairs.len() as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eta: u32,
    pub overall: GroupMetrics,
    /// Over evaluated instances.
    pub head: GroupMetrics,
    /// Over evaluated instances.
    pub tail: GroupMetrics,
    pub unseen: GroupMetrics,
    /// Metrics averaged per distinct pair first, then over pairs.
    pub head_by_pair: GroupMetrics,
    pub tail_by_pair: GroupMetrics,
    pub pair_shares: PairShares,
    pub bins: Vec<BinRow>,
}

fn select(ranks: &[u32], idx: &[usize]) -> Vec<u32> {
    idx.iter().map(|&i| ranks[i]).collect()
}

/// Pair-level metrics: each distinct pair contributes the mean of its
/// instances' per-instance metric values.
fn by_pair(instances: &[PredictionInstance], ranks: &[u32], idx: &[usize]) -> GroupMetrics {
    let mut groups: std::collections::BTreeMap<(u32, u32), Vec<u32>> = Default::default();
    for &i in idx {
        groups.entry(instances[i].transition()).or_default().push(ranks[i]);
    }
    if groups.is_empty() {
        return GroupMetrics::from_ranks(&[]);
    }
    let n = groups.len() as f64;
    let (mut hr1, mut hr20, mut ndcg, mut mrr) = (0.0, 0.0, 0.0, 0.0);
    for r in groups.values() {
        let a = metrics(r, 1).expect("non-empty");
        let b = metrics(r, 20).expect("non-empty");
        hr1 += a.hr;
        hr20 += b.hr;
        ndcg += b.ndcg;
        mrr += b.mrr;
    }
    GroupMetrics {
        count: groups.len(),
        empty: false,
        hr1: Some(hr1 / n),
        hr20: Some(hr20 / n),
        ndcg20: Some(ndcg / n),
        mrr: Some(mrr / n),
    }
}

impl EvalReport {
    pub fn build(instances: &[PredictionInstance], ranks: &[u32], store: &TransitionStore, eta: u32) -> Self {
        assert_eq!(instances.len(), ranks.len());
        let (head, tail) = head_tail_split(instances, store, eta);
        let unseen: Vec<usize> = (0..instances.len())
            .filter(|&i| store.count_of(instances[i].source, instances[i].target) == 0)
            .collect();
        let mut bin_ranks: Vec<Vec<u32>> = vec![Vec::new(); FREQUENCY_BINS as usize + 1];
        for (inst, &r) in instances.iter().zip(ranks) {
            bin_ranks[frequency_bin(store.count_of(inst.source, inst.target)) as usize].push(r);
        }
        let bins = bin_ranks
            .iter()
            .enumerate()
            .map(|(b, r)| {
                let g = GroupMetrics::from_ranks(r);
                BinRow {
                    bin: bin_label(b as u32),
                    count: g.count,
                    hr1: g.hr1,
                    hr20: g.hr20,
                }
            })
            .collect();
        EvalReport {
            eta,
            overall: GroupMetrics::from_ranks(ranks),
            head: GroupMetrics::from_ranks(&select(ranks, &head)),
            tail: GroupMetrics::from_ranks(&select(ranks, &tail)),
            unseen: GroupMetrics::from_ranks(&select(ranks, &unseen)),
            head_by_pair: by_pair(instances, ranks, &head),
            tail_by_pair: by_pair(instances, ranks, &tail),
            pair_shares: unique_pair_shares(instances, store, eta),
            bins,
        }
    }

    /// Aligned-column text tables.
    pub fn to_text(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
        }
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}", "Group", "Count", "H@1", "H@20", "N@20", "MRR");
        let rows = [
            ("Overall", &self.overall),
            ("Head (inst.)", &self.head),
            ("Tail (inst.)", &self.tail),
            ("Unseen (inst.)", &self.unseen),
            ("Head (pairs)", &self.head_by_pair),
            ("Tail (pairs)", &self.tail_by_pair),
        ];
        for (name, g) in rows {
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}",
                name,
                g.count,
                cell(g.hr1),
                cell(g.hr20),
                cell(g.ndcg20),
                cell(g.mrr)
            );
        }
        let p = &self.pair_shares;
        let _ = writeln!(
            s,
            "\nUnique test pairs: {} (head {}, tail {}, unseen {}), tail share {} (eta = {})",
            p.pairs,
            p.head,
            p.tail,
            p.unseen,
            p.tail_share.map_or_else(|| "-".into(), |x| format!("{:.1}%", 100.0 * x)),
            self.eta
        );
        let _ = writeln!(s, "\n{:<6} {:>7} {:>7} {:>7}", "m", "Count", "H@1", "H@20");
        for b in &self.bins {
            let _ = writeln!(s, "{:<6} {:>7} {:>7} {:>7}", b.bin, b.count, cell(b.hr1), cell(b.hr20));
        }
        s
    }

    /// Frequency bins as tab-separated values with a header row.
    pub fn bins_tsv(&self) -> String {
        let mut s = String::from("bin\tcount\thr1\thr20\n");
        for b in &self.bins {
            let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
            let _ = writeln!(s, "{}\t{}\t{}\t{}", b.bin, b.count, f(b.hr1), f(b.hr20));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    fn inst(source: u32, target: u32) -> PredictionInstance {
        PredictionInstance {
            user: 0,
            sequence: 0,
            step: 1,
            source,
            target,
            suffix: vec![source],
            suffix_len: 1,
            query_time: 0,
            split: Split::Test,
        }
    }

    fn store() -> TransitionStore {
        // m(0,1) = 3, m(1,2) = 1, m(2,3) = 12
        let mut seqs = vec![vec![0u32, 1, 0, 1, 0, 1, 2]];
        seqs.extend(std::iter::repeat_n(vec![2u32, 3], 12));
        TransitionStore::count(&seqs, 5)
    }

    #[test]
    fn head_tail_definition() {
        let s = store();
        let xs = vec![inst(0, 1), inst(1, 2), inst(4, 0), inst(2, 3)];
        let (head, tail) = head_tail_split(&xs, &s, 1);
        assert_eq!((head, tail), (vec![0, 3], vec![1, 2]));
        let (head0, tail0) = head_tail_split(&xs, &s, 0);
        assert_eq!((head0.len(), tail0), (3, vec![2]));
    }

    #[test]
    fn bins_partition_and_match_lookup() {
        let s = store();
        let xs = vec![inst(0, 1), inst(1, 2), inst(4, 0), inst(2, 3), inst(4, 0)];
        let ranks = vec![1, 2, 30, 1, 5];
        let r = EvalReport::build(&xs, &ranks, &s, 1);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), xs.len());
        assert_eq!(r.bins[0].count, 2);
        assert_eq!(r.bins[1].count, 1);
        assert_eq!(r.bins[3].count, 1);
        assert_eq!(r.bins[10].bin, "10+");
        assert_eq!(r.bins[10].count, 1);
        assert!(r.bins[5].hr20.is_none());
        assert_eq!(r.head.count + r.tail.count, r.overall.count);
        assert_eq!(r.pair_shares.pairs, 4);
        assert_eq!(r.pair_shares.tail, 2);
        assert_eq!(r.tail_by_pair.count, 2);
        // unseen pair (4,0): ranks 30 and 5 -> HR@20 0.5; pair (1,2): 1.0
        assert!((r.tail_by_pair.hr20.unwrap() - 0.75).abs() < 1e-12);
        assert!((r.tail.hr20.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.to_text().contains("10+"));
        assert!(r.bins_tsv().starts_with("bin\tcount"));
    }

    #[test]
    fn perfect_oracle_logits_score_one_everywhere() {
        let s = store();
        let xs = vec![inst(0, 1), inst(1, 2), inst(4, 0), inst(2, 3), inst(3, 4)];
        let ranks: Vec<u32> = xs
            .iter()
            .map(|i| {
                let mut logits = vec![0.0; 5];
                logits[i.target as usize] = 10.0;
                rank_target(&logits, i.target as usize)
            })
            .collect();
        let r = EvalReport::build(&xs, &ranks, &s, 1);
        for g in [&r.overall, &r.head, &r.tail, &r.head_by_pair, &r.tail_by_pair] {
            for v in [g.hr1, g.hr20, g.ndcg20, g.mrr] {
                assert_eq!(v, Some(1.0));
            }
        }
    }
}
