//! Training transition counts, the row-normalized adjacency, differentiable
//! N-hop propagation and hop coverage diagnostics.

mod hops;
mod propagate;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use hops::{coverage_snr, hop_candidates, HopAnalysis, HopRecord};
pub use propagate::{GraphPropagator, PropagationState};

/// Sparse `m_sd` counts over training transitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionStore {
    num_pois: usize,
    counts: HashMap<(u32, u32), u32>,
    out_degree_mass: Vec<u64>,
    warm_edges: BTreeSet<(u32, u32)>,
}

/// Pairs with at least this many training occurrences are warm.
pub const WARM_MIN_COUNT: u32 = 2;

impl TransitionStore {
    /// Counts ordered consecutive pairs within each sequence.
    pub fn count<S: AsRef<[u32]>>(sequences: &[S], num_pois: usize) -> Self {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        let mut out_degree_mass = vec![0u64; num_pois];
        for seq in sequences {
            for w in seq.as_ref().windows(2) {
                *counts.entry((w[0], w[1])).or_default() += 1;
                out_degree_mass[w[0] as usize] += 1;
            }
        }
        let warm_edges = counts
            .iter()
            .filter(|(_, &m)| m >= WARM_MIN_COUNT)
            .map(|(&k, _)| k)
            .collect();
        TransitionStore {
            num_pois,
            counts,
            out_degree_mass,
            warm_edges,
        }
    }

    pub fn num_pois(&self) -> usize {
        self.num_pois
    }

    /// `m_sd`, zero when never observed.
    pub fn count_of(&self, source: u32, dest: u32) -> u32 {
        self.counts.get(&(source, dest)).copied().unwrap_or(0)
    }

    pub fn out_degree_mass(&self, source: u32) -> u64 {
        self.out_degree_mass.get(source as usize).copied().unwrap_or(0)
    }

    pub fn is_warm(&self, source: u32, dest: u32) -> bool {
        self.warm_edges.contains(&(source, dest))
    }

    pub fn warm_edges(&self) -> &BTreeSet<(u32, u32)> {
        &self.warm_edges
    }

    pub fn num_edges(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Edges sorted by (source, dest).
    pub fn edges(&self) -> Vec<((u32, u32), u32)> {
        let mut e: Vec<_> = self.counts.iter().map(|(&k, &v)| (k, v)).collect();
        e.sort_unstable();
        e
    }

    /// Sorted out-neighbour lists over edges with `m > 0`.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.num_pois];
        for ((s, d), _) in self.edges() {
            adj[s as usize].push(d);
        }
        adj
    }

    /// Whether a pair counts as a tail transition under threshold `eta`.
    pub fn is_tail(&self, source: u32, dest: u32, eta: u32) -> bool {
        self.count_of(source, dest) <= eta
    }
}

/// Row-stochastic CSR adjacency `A_sd = m_sd / Σ_d' m_sd'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl TransitionMatrix {
    /// Zero-out-degree rows stay all-zero.
    pub fn normalize(store: &TransitionStore) -> Self {
        let n = store.num_pois();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(store.num_edges());
        let mut vals = Vec::with_capacity(store.num_edges());
        row_ptr.push(0);
        let edges = store.edges();
        let mut it = edges.iter().peekable();
        for s in 0..n as u32 {
            let mass = store.out_degree_mass(s) as f64;
            while let Some(&&((src, d), m)) = it.peek() {
                if src != s {
                    break;
                }
                cols.push(d);
                vals.push(m as f64 / mass);
                it.next();
            }
            row_ptr.push(cols.len());
        }
        TransitionMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, s: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = self.row_ptr[s]..self.row_ptr[s + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_sum(&self, s: usize) -> f64 {
        self.row(s).map(|(_, v)| v).sum()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for s in 0..self.n {
            for (d, v) in self.row(s) {
                out[s * self.n + d as usize] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_abab() {
        let (a, b) = (0, 1);
        let s = TransitionStore::count(&[vec![a, b, a, b]], 2);
        assert_eq!(s.count_of(a, b), 2);
        assert_eq!(s.count_of(b, a), 1);
        assert_eq!(s.count_of(a, a), 0);
        assert_eq!(s.warm_edges().iter().copied().collect::<Vec<_>>(), vec![(a, b)]);
        assert_eq!(s.out_degree_mass(a), 2);
    }

    #[test]
    fn empty_store() {
        let s = TransitionStore::count::<Vec<u32>>(&[], 5);
        assert!(s.is_empty());
        let m = TransitionMatrix::normalize(&s);
        assert_eq!(m.nnz(), 0);
        assert!((0..5).all(|r| m.row_sum(r) == 0.0));
    }

    #[test]
    fn counts_match_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30u32;
        let trajs: Vec<Vec<u32>> = (0..1000)
            .map(|_| {
                let len = rng.random_range(1..8);
                (0..len).map(|_| rng.random_range(0..n)).collect()
            })
            .collect();
        let store = TransitionStore::count(&trajs, n as usize);
        for s in 0..n {
            for d in 0..n {
                let mut expected = 0;
                for t in &trajs {
                    for i in 1..t.len() {
                        if t[i - 1] == s && t[i] == d {
                            expected += 1;
                        }
                    }
                }
                assert_eq!(store.count_of(s, d), expected);
                assert_eq!(store.is_warm(s, d), expected >= 2);
            }
        }
    }

    #[test]
    fn normalize_single_edge_and_ratio() {
        // a -> b seven times; c -> b three times, c -> d once
        let mut seqs = vec![vec![0u32, 1]; 7];
        seqs.extend(vec![vec![2u32, 1]; 3]);
        seqs.push(vec![2, 3]);
        let m = TransitionMatrix::normalize(&TransitionStore::count(&seqs, 4));
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(1, 1.0)]);
        assert_eq!(m.row(2).collect::<Vec<_>>(), vec![(1, 0.75), (3, 0.25)]);
        assert_eq!(m.row(1).count(), 0);
    }

    #[test]
    fn tail_predicate() {
        let s = TransitionStore::count(&[vec![0u32, 1, 0, 1], vec![1, 2]], 3);
        assert!(s.is_tail(0, 2, 1)); // unseen
        assert!(s.is_tail(1, 2, 1)); // singleton
        assert!(!s.is_tail(0, 1, 1)); // m = 2
        assert!(s.is_tail(0, 1, 2));
    }
}
