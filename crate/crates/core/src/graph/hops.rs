use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize, Serializer};

use super::TransitionStore;

/// `C_N(s)`: destinations reachable from `source` by a walk of length 1..=N
/// over edges with `m > 0`.
pub fn hop_candidates(adjacency: &[Vec<u32>], source: u32, hops: usize) -> BTreeSet<u32> {
    let mut seen = vec![false; adjacency.len()];
    let mut out = BTreeSet::new();
    let mut frontier: Vec<u32> = Vec::new();
    expand(adjacency, &[source], &mut seen, &mut frontier);
    for depth in 1..=hops {
        out.extend(frontier.iter().copied());
        if depth == hops || frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        expand(adjacency, &frontier, &mut seen, &mut next);
        frontier = next;
    }
    out
}

fn expand(adjacency: &[Vec<u32>], from: &[u32], seen: &mut [bool], into: &mut Vec<u32>) {
    for &u in from {
        for &v in &adjacency[u as usize] {
            if !seen[v as usize] {
                seen[v as usize] = true;
                into.push(v);
            }
        }
    }
}

/// Number of new destinations first reached at each depth `1..=max_hops`.
fn layer_sizes(adjacency: &[Vec<u32>], source: u32, max_hops: usize, seen: &mut [bool], touched: &mut Vec<u32>) -> Vec<Vec<u32>> {
    let mut layers = Vec::with_capacity(max_hops);
    let mut frontier = Vec::new();
    expand(adjacency, &[source], seen, &mut frontier);
    for depth in 1..=max_hops {
        touched.extend(frontier.iter().copied());
        let current = std::mem::take(&mut frontier);
        if depth < max_hops {
            expand(adjacency, &current, seen, &mut frontier);
        }
        layers.push(current);
    }
    layers
}

fn serialize_snr<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub hops: usize,
    /// Distinct sources of unseen transitions.
    pub sources: usize,
    /// `M_N / |sources|`.
    pub avg_candidates: f64,
    /// `S_N`.
    pub covered: usize,
    /// `M_N`.
    pub candidates: usize,
    /// `S_N / |unseen|`, in `[0, 1]`.
    pub coverage: f64,
    /// `S_N / (M_N - S_N)`; infinite when every candidate is covered.
    #[serde(serialize_with = "serialize_snr", skip_deserializing)]
    pub snr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HopAnalysis {
    pub unseen: usize,
    pub records: Vec<HopRecord>,
}

impl HopAnalysis {
    /// Aligned text table: N, avg candidates, coverage %, 10³×SNR.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "unseen test transitions: {}\n{:>3}  {:>12}  {:>10}  {:>10}\n",
            self.unseen, "N", "Avg. cand.", "Coverage", "1e3*SNR"
        );
        for r in &self.records {
            let snr = if r.snr.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.3}", 1e3 * r.snr)
            };
            out.push_str(&format!(
                "{:>3}  {:>12.1}  {:>10.2}  {:>10}\n",
                r.hops,
                r.avg_candidates,
                100.0 * r.coverage,
                snr
            ));
        }
        out
    }
}

/// Coverage and SNR of cumulative hop candidate sets over the unseen pairs.
/// Pairs with `m_sd > 0` are ignored.
pub fn coverage_snr(
    unseen: &BTreeSet<(u32, u32)>,
    store: &TransitionStore,
    hop_values: &[usize],
) -> HopAnalysis {
    let unseen: BTreeSet<(u32, u32)> = unseen
        .iter()
        .copied()
        .filter(|&(s, d)| store.count_of(s, d) == 0)
        .collect();
    let adjacency = store.adjacency();
    let mut by_source: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(s, d) in &unseen {
        by_source.entry(s).or_default().push(d);
    }
    let max_hops = hop_values.iter().copied().max().unwrap_or(0);
    let mut covered = vec![0usize; max_hops + 1];
    let mut candidates = vec![0usize; max_hops + 1];
    let mut seen = vec![false; store.num_pois()];
    let mut depth_of = vec![usize::MAX; store.num_pois()];
    let mut touched = Vec::new();
    for (&s, dests) in &by_source {
        let layers = layer_sizes(&adjacency, s, max_hops, &mut seen, &mut touched);
        for (i, layer) in layers.iter().enumerate() {
            for &v in layer {
                depth_of[v as usize] = i + 1;
            }
        }
        let mut cum = 0;
        for depth in 1..=max_hops {
            cum += layers[depth - 1].len();
            candidates[depth] += cum;
        }
        for &d in dests {
            let dd = depth_of[d as usize];
            if dd != usize::MAX {
                for slot in covered.iter_mut().skip(dd) {
                    *slot += 1;
                }
            }
        }
        for v in touched.drain(..) {
            seen[v as usize] = false;
            depth_of[v as usize] = usize::MAX;
        }
    }
    let sources = by_source.len();
    let records = hop_values
        .iter()
        .map(|&n| {
            let (s_n, m_n) = (covered[n], candidates[n]);
            HopRecord {
                hops: n,
                sources,
                avg_candidates: if sources == 0 { 0.0 } else { m_n as f64 / sources as f64 },
                covered: s_n,
                candidates: m_n,
                coverage: if unseen.is_empty() { 0.0 } else { s_n as f64 / unseen.len() as f64 },
                snr: if m_n == s_n {
                    f64::INFINITY
                } else {
                    s_n as f64 / (m_n - s_n) as f64
                },
            }
        })
        .collect();
    HopAnalysis {
        unseen: unseen.len(),
        records,
    }
}
