use std::collections::HashMap;

use crate::dataset::time::{day_fraction, day_of_week, hour_of_day};
use crate::dataset::SeqCheckIn;

/// Per-candidate revisit statistics at step `t` (the history length).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateStats {
    pub poi: u32,
    /// `n_t(d) ≥ 1`.
    pub count: u32,
    /// `r_t(d) = t - q*_t(d) ≥ 1`, in check-in steps.
    pub recency: u32,
    /// `d` appears among the last `L_win` check-ins.
    pub in_window: bool,
    /// `q*_t(d)`.
    pub last_step: u32,
    pub last_time: i64,
}

impl CandidateStats {
    pub fn last_hour(&self) -> usize {
        hour_of_day(self.last_time)
    }

    pub fn last_dow(&self) -> usize {
        day_of_week(self.last_time)
    }

    /// `ψ`: cos/sin of the time-of-day difference and the day-of-week match bit.
    pub fn pair_features(&self, query_time: i64) -> [f64; 3] {
        let diff = std::f64::consts::TAU * (day_fraction(query_time) - day_fraction(self.last_time));
        let same_dow = day_of_week(query_time) == self.last_dow();
        [diff.cos(), diff.sin(), if same_dow { 1.0 } else { 0.0 }]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RevisitStats {
    pub step: usize,
    /// Most recently visited first.
    pub candidates: Vec<CandidateStats>,
}

impl RevisitStats {
    pub fn get(&self, poi: u32) -> Option<&CandidateStats> {
        self.candidates.iter().find(|c| c.poi == poi)
    }
}

/// Statistics over the whole prefix, keeping the `cap` most recently visited
/// distinct POIs. Out-of-vocabulary entries count as steps but never as
/// candidates.
pub fn compute_history_stats(history: &[SeqCheckIn], window: usize, cap: usize) -> RevisitStats {
    let t = history.len();
    let mut slots: HashMap<u32, usize> = HashMap::new();
    let mut candidates: Vec<CandidateStats> = Vec::new();
    for q in (0..t).rev() {
        let Some(poi) = history[q].poi else { continue };
        match slots.get(&poi) {
            Some(&i) => candidates[i].count += 1,
            None if candidates.len() < cap => {
                let recency = (t - q) as u32;
                slots.insert(poi, candidates.len());
                candidates.push(CandidateStats {
                    poi,
                    count: 1,
                    recency,
                    in_window: (recency as usize) <= window,
                    last_step: q as u32,
                    last_time: history[q].timestamp,
                });
            }
            None => {}
        }
    }
    RevisitStats { step: t, candidates }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist(pois: &[u32]) -> Vec<SeqCheckIn> {
        pois.iter()
            .enumerate()
            .map(|(i, &p)| SeqCheckIn {
                poi: Some(p),
                timestamp: 1_000_000 + 3600 * i as i64,
                split: Split::Train,
            })
            .collect()
    }

    #[test]
    fn empty_history() {
        assert!(compute_history_stats(&[], 10, 256).candidates.is_empty());
    }

    #[test]
    fn aba_counts_and_recency() {
        let (a, b) = (0, 1);
        let s = compute_history_stats(&hist(&[a, b, a]), 10, 256);
        assert_eq!(s.step, 3);
        let sa = s.get(a).unwrap();
        let sb = s.get(b).unwrap();
        assert_eq!((sa.count, sa.recency), (2, 1));
        assert_eq!((sb.count, sb.recency), (1, 2));
        assert_eq!(s.candidates[0].poi, a);
    }

    #[test]
    fn cap_keeps_most_recent() {
        let pois: Vec<u32> = (0..300).collect();
        let s = compute_history_stats(&hist(&pois), 10, 256);
        assert_eq!(s.candidates.len(), 256);
        let mut kept: Vec<u32> = s.candidates.iter().map(|c| c.poi).collect();
        kept.sort_unstable();
        assert_eq!(kept, (44..300).collect::<Vec<_>>());
    }

    #[test]
    fn same_and_opposite_time_of_day() {
        let c = CandidateStats {
            poi: 0,
            count: 1,
            recency: 1,
            in_window: true,
            last_step: 0,
            last_time: 86_400 * 10 + 3600 * 9,
        };
        let same = c.pair_features(c.last_time + 7 * 86_400);
        assert_eq!(same, [1.0, 0.0, 1.0]);
        let half = c.pair_features(c.last_time + 36 * 3600);
        assert!((half[0] + 1.0).abs() < 1e-9 && half[1].abs() < 1e-9);
        assert_eq!(half[2], 0.0);
    }

    /// Forward linear scan over the whole history.
    fn oracle(history: &[SeqCheckIn], window: usize, cap: usize) -> Vec<CandidateStats> {
        let t = history.len();
        let mut pois: Vec<u32> = history.iter().filter_map(|c| c.poi).collect();
        pois.sort_unstable();
        pois.dedup();
        let mut all: Vec<CandidateStats> = pois
            .into_iter()
            .map(|d| {
                let count = history.iter().filter(|c| c.poi == Some(d)).count() as u32;
                let last = (0..t).filter(|&q| history[q].poi == Some(d)).max().unwrap();
                let in_window = history[t.saturating_sub(window)..].iter().any(|c| c.poi == Some(d));
                CandidateStats {
                    poi: d,
                    count,
                    recency: (t - last) as u32,
                    in_window,
                    last_step: last as u32,
                    last_time: history[last].timestamp,
                }
            })
            .collect();
        all.sort_by_key(|c| std::cmp::Reverse(c.last_step));
        all.truncate(cap);
        all
    }

    #[test]
    fn matches_linear_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let len = rng.random_range(1..500);
            let mut ts = 1_300_000_000i64;
            let history: Vec<SeqCheckIn> = (0..len)
                .map(|_| {
                    ts += rng.random_range(0..50_000);
                    SeqCheckIn {
                        poi: if rng.random_bool(0.05) { None } else { Some(rng.random_range(0..80)) },
                        timestamp: ts,
                        split: Split::Train,
                    }
                })
                .collect();
            let cap = rng.random_range(1..100);
            let got = compute_history_stats(&history, 10, cap);
            assert_eq!(got.candidates, oracle(&history, 10, cap));
            for c in &got.candidates {
                assert!(c.count >= 1 && c.recency >= 1);
                assert!(!c.in_window || c.recency <= 10);
            }
        }
    }
}
