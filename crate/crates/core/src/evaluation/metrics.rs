use serde::{Deserialize, Serialize};

/// 1-based rank of `target` in descending logit order; ties go to the lower
/// POI index.
pub fn rank_target(logits: &[f64], target: usize) -> u32 {
    let t = logits[target];
    let mut rank = 1u32;
    for (i, &l) in logits.iter().enumerate() {
        if l > t || (l == t && i < target) {
            rank += 1;
        }
    }
    rank
}

pub fn ndcg_term(rank: u32, k: u32) -> f64 {
    if rank <= k {
        1.0 / ((rank as f64) + 1.0).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

/// HR@K, NDCG@K and MRR over a rank list; `None` for an empty list.
pub fn metrics(ranks: &[u32], k: u32) -> Option<CutoffMetrics> {
    if ranks.is_empty() {
        return None;
    }
    let n = ranks.len() as f64;
    let mut m = CutoffMetrics { hr: 0.0, ndcg: 0.0, mrr: 0.0 };
    for &r in ranks {
        assert!(r >= 1, "ranks start at 1");
        if r <= k {
            m.hr += 1.0;
        }
        m.ndcg += ndcg_term(r, k);
        m.mrr += 1.0 / r as f64;
    }
    m.hr /= n;
    m.ndcg /= n;
    m.mrr /= n;
    Some(m)
}

/// The reported metric set for one group of instances. Metric fields are
/// null when the group is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub count: usize,
    pub empty: bool,
    pub hr1: Option<f64>,
    pub hr20: Option<f64>,
    pub ndcg20: Option<f64>,
    pub mrr: Option<f64>,
}

impl GroupMetrics {
    pub fn from_ranks(ranks: &[u32]) -> Self {
        let at1 = metrics(ranks, 1);
        let at20 = metrics(ranks, 20);
        GroupMetrics {
            count: ranks.len(),
            empty: ranks.is_empty(),
            hr1: at1.map(|m| m.hr),
            hr20: at20.map(|m| m.hr),
            ndcg20: at20.map(|m| m.ndcg),
            mrr: at20.map(|m| m.mrr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sort_rank(logits: &[f64], target: usize) -> u32 {
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
        order.iter().position(|&i| i == target).unwrap() as u32 + 1
    }

    #[test]
    fn unique_max_and_all_ties() {
        assert_eq!(rank_target(&[0.1, 3.0, -2.0], 1), 1);
        assert_eq!(rank_target(&[0.5; 6], 0), 1);
        assert_eq!(rank_target(&[0.5; 6], 4), 5);
    }

    #[test]
    fn closed_forms() {
        let m = metrics(&[1, 1, 1], 20).unwrap();
        assert_eq!((m.hr, m.ndcg, m.mrr), (1.0, 1.0, 1.0));
        let m = metrics(&[2], 20).unwrap();
        assert!((m.ndcg - 0.6309297535714575).abs() < 1e-12);
        assert_eq!(m.mrr, 0.5);
        let m = metrics(&[21], 20).unwrap();
        assert_eq!((m.hr, m.ndcg), (0.0, 0.0));
        assert!((m.mrr - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn empty_group_is_marked() {
        assert!(metrics(&[], 20).is_none());
        let g = GroupMetrics::from_ranks(&[]);
        assert!(g.empty && g.hr20.is_none() && g.count == 0);
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("\"hr20\":null"));
    }

    proptest! {
        #[test]
        fn rank_matches_sort(logits in prop::collection::vec(-3i32..3, 1..=10), pick in 0usize..10) {
            let logits: Vec<f64> = logits.into_iter().map(f64::from).collect();
            let t = pick % logits.len();
            prop_assert_eq!(rank_target(&logits, t), sort_rank(&logits, t));
        }

        #[test]
        fn bound_chain(ranks in prop::collection::vec(1u32..60, 1..50)) {
            let at1 = metrics(&ranks, 1).unwrap();
            prop_assert!(at1.mrr >= at1.hr);
            let mut prev = 0.0;
            for k in [1, 5, 10, 20, 50] {
                let m = metrics(&ranks, k).unwrap();
                prop_assert!(m.hr >= prev);
                prop_assert!(m.ndcg <= m.hr + 1e-12);
                prop_assert!(m.ndcg >= m.hr / ((k as f64) + 1.0).log2() - 1e-12);
                prop_assert!((0.0..=1.0).contains(&m.mrr));
                prev = m.hr;
            }
        }
    }
}
