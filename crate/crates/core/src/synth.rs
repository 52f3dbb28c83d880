//! Planted synthetic check-in worlds.
//!
//! A world is a sparse random successor graph over POIs with skewed edge
//! weights. Users walk it in short daily trajectories, jump back to a personal
//! habit set, and occasionally collapse two hops into one step. A set of
//! withheld pairs `(s, d)` is reachable only through a planted intermediate
//! `s → p' → d` and is never emitted as an adjacent pair, except that some
//! test-period trajectories are rewritten to end on one.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CheckIn, COLUMNS};
use crate::error::{Error, Result};

/// Midnight UTC, 2021-01-04 (a Monday).
const START_TIME: i64 = 1_609_718_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldSpec {
    pub num_users: usize,
    pub num_pois: usize,
    pub num_categories: usize,
    pub num_checkins: usize,
    /// Successors per POI in the base graph.
    pub out_degree: usize,
    /// Edge weight decay across a POI's successor list; the first edges are
    /// the high-repeat head edges.
    pub edge_skew: f64,
    pub withheld_pairs: usize,
    /// Per-step probability of jumping to one of the user's habit POIs.
    pub habit_strength: f64,
    pub habit_size: usize,
    /// Per-trajectory probability that one habit POI is swapped for a new one.
    pub habit_drift: f64,
    /// Per-step probability of collapsing a two-hop move into one step.
    pub skip_prob: f64,
    pub min_trajectory: usize,
    pub max_trajectory: usize,
    /// Probability that an eligible test-period trajectory is rewritten to
    /// end on a withheld pair.
    pub test_injection: f64,
    /// Fraction of check-ins before the test period (for picking rewrite
    /// candidates).
    pub test_start_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            num_users: 50,
            num_pois: 200,
            num_categories: 10,
            num_checkins: 20_000,
            out_degree: 4,
            edge_skew: 0.6,
            withheld_pairs: 100,
            habit_strength: 0.3,
            habit_size: 6,
            habit_drift: 0.5,
            skip_prob: 0.3,
            min_trajectory: 3,
            max_trajectory: 8,
            test_injection: 0.5,
            test_start_fraction: 0.9,
            seed: 7,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_users == 0 || self.num_pois < 3 || self.num_categories == 0 {
            return bad("need at least 1 user, 3 POIs and 1 category");
        }
        if self.out_degree == 0 || self.out_degree >= self.num_pois {
            return bad("out_degree must be in [1, num_pois)");
        }
        if self.min_trajectory < 2 || self.max_trajectory < self.min_trajectory {
            return bad("trajectory lengths must satisfy 2 <= min <= max");
        }
        if self.habit_size == 0 || self.habit_size > self.num_pois {
            return bad("habit_size must be in [1, num_pois]");
        }
        for (name, p) in [
            ("habit_strength", self.habit_strength),
            ("habit_drift", self.habit_drift),
            ("skip_prob", self.skip_prob),
            ("test_injection", self.test_injection),
            ("test_start_fraction", self.test_start_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("synthetic spec: {name} must be in [0, 1]")));
            }
        }
        if !(self.edge_skew > 0.0 && self.edge_skew <= 1.0) {
            return bad("edge_skew must be in (0, 1]");
        }
        if self.num_checkins < self.num_users * 2 {
            return bad("num_checkins must allow at least two check-ins per user");
        }
        Ok(())
    }
}

/// A withheld pair and the intermediate that connects it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlantedTriple {
    pub source: usize,
    pub intermediate: usize,
    pub dest: usize,
}

/// Ground truth written next to the generated file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticWorldSpec,
    pub triples: Vec<PlantedTriple>,
    /// Raw POI ids of each withheld pair, in `triples` order.
    pub withheld: Vec<(String, String)>,
    pub successors: Vec<Vec<usize>>,
    /// Initial habit sets.
    pub habits: Vec<Vec<usize>>,
    /// Test-period trajectories rewritten to end on a withheld pair.
    pub injected: usize,
}

pub struct SyntheticWorld {
    pub checkins: Vec<CheckIn>,
    pub truth: GroundTruth,
}

pub fn poi_id(i: usize) -> String {
    format!("p{i:04}")
}

pub fn user_id(i: usize) -> String {
    format!("u{i:03}")
}

struct Walker<'a> {
    succ: &'a [Vec<usize>],
    weights: Vec<f64>,
    withheld: &'a HashSet<(usize, usize)>,
    spec: &'a SyntheticWorldSpec,
}

impl Walker<'_> {
    fn weighted_successor(&self, c: usize, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = self.weights.iter().sum();
        let mut x = rng.random_range(0.0..total);
        for (j, w) in self.weights.iter().enumerate() {
            if x < *w {
                return self.succ[c][j];
            }
            x -= w;
        }
        self.succ[c][self.weights.len() - 1]
    }

    fn allowed(&self, c: usize, d: usize) -> bool {
        c != d && !self.withheld.contains(&(c, d))
    }

    fn step(&self, c: usize, habits: &[usize], rng: &mut ChaCha8Rng) -> usize {
        for _ in 0..8 {
            let u: f64 = rng.random();
            let next = if u < self.spec.habit_strength {
                *habits.choose(rng).expect("non-empty habits")
            } else if u < self.spec.habit_strength + self.spec.skip_prob {
                let mid = self.weighted_successor(c, rng);
                self.weighted_successor(mid, rng)
            } else {
                self.weighted_successor(c, rng)
            };
            if self.allowed(c, next) {
                return next;
            }
        }
        self.weighted_successor(c, rng)
    }
}

fn plant_triples(
    succ: &[Vec<usize>],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PlantedTriple>> {
    let n = succ.len();
    let mut candidates = Vec::new();
    for s in 0..n {
        for &p in succ[s].iter().take(2) {
            for &d in succ[p].iter().take(2) {
                if d != s && !succ[s].contains(&d) {
                    candidates.push(PlantedTriple {
                        source: s,
                        intermediate: p,
                        dest: d,
                    });
                }
            }
        }
    }
    candidates.shuffle(rng);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in candidates {
        if out.len() == count {
            break;
        }
        if seen.insert((t.source, t.dest)) {
            out.push(t);
        }
    }
    if out.len() < count {
        return Err(Error::InfeasibleSpec(format!(
            "requested {count} withheld pairs but only {} have a two-hop intermediate",
            out.len()
        )));
    }
    Ok(out)
}

struct Visit {
    user: usize,
    poi: usize,
    time: i64,
    trajectory: usize,
}

pub fn generate(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_pois;
    let all: Vec<usize> = (0..n).collect();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let others: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
            others.choose_multiple(&mut rng, spec.out_degree).copied().collect()
        })
        .collect();
    let categories: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.num_categories)).collect();
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(40.55..40.90), rng.random_range(-74.10..-73.75)))
        .collect();
    let triples = plant_triples(&succ, spec.withheld_pairs, &mut rng)?;
    let withheld: HashSet<(usize, usize)> = triples.iter().map(|t| (t.source, t.dest)).collect();
    let habits: Vec<Vec<usize>> = (0..spec.num_users)
        .map(|_| all.choose_multiple(&mut rng, spec.habit_size).copied().collect())
        .collect();
    let walker = Walker {
        succ: &succ,
        weights: (0..spec.out_degree).map(|j| spec.edge_skew.powi(j as i32)).collect(),
        withheld: &withheld,
        spec,
    };

    let mut visits = Vec::with_capacity(spec.num_checkins);
    let mut trajectories = 0usize;
    let mut current = habits.clone();
    for u in 0..spec.num_users {
        let quota = spec.num_checkins / spec.num_users + usize::from(u < spec.num_checkins % spec.num_users);
        let mut day = rng.random_range(0..3i64);
        let mut emitted = 0;
        while emitted < quota {
            let len = rng.random_range(spec.min_trajectory..=spec.max_trajectory).min(quota - emitted);
            if rng.random_bool(spec.habit_drift) {
                let slot = rng.random_range(0..spec.habit_size);
                current[u][slot] = rng.random_range(0..n);
            }
            let mut time = START_TIME + day * 86_400 + rng.random_range(7..12i64) * 3600;
            let mut poi = if rng.random_bool(0.5) {
                *current[u].choose(&mut rng).expect("non-empty habits")
            } else {
                rng.random_range(0..n)
            };
            for j in 0..len {
                if j > 0 {
                    poi = walker.step(poi, &current[u], &mut rng);
                    time += rng.random_range(1..=2i64) * 3600;
                }
                visits.push(Visit {
                    user: u,
                    poi,
                    time,
                    trajectory: trajectories,
                });
            }
            trajectories += 1;
            emitted += len;
            day += rng.random_range(3..=4i64);
        }
    }

    // Rewrite trajectory endings that lie entirely in the test period.
    let mut times: Vec<i64> = visits.iter().map(|v| v.time).collect();
    times.sort_unstable();
    let cut = ((spec.test_start_fraction * times.len() as f64) as usize).min(times.len() - 1);
    let boundary = times[cut];
    let mut injected = 0;
    if !triples.is_empty() {
        let mut last_two: Vec<Option<(usize, usize)>> = vec![None; trajectories];
        for (i, v) in visits.iter().enumerate() {
            let e = &mut last_two[v.trajectory];
            *e = Some(match *e {
                Some((_, b)) => (b, i),
                None => (usize::MAX, i),
            });
        }
        for (a, b) in last_two.into_iter().flatten() {
            if a == usize::MAX || visits[a].time <= boundary || !rng.random_bool(spec.test_injection) {
                continue;
            }
            let t = triples.choose(&mut rng).expect("non-empty triples");
            visits[a].poi = t.source;
            visits[b].poi = t.dest;
            injected += 1;
        }
    }

    let checkins = visits
        .iter()
        .map(|v| CheckIn {
            user_id: user_id(v.user),
            poi_id: poi_id(v.poi),
            category_id: format!("c{:02}", categories[v.poi]),
            lat: coords[v.poi].0,
            lon: coords[v.poi].1,
            timestamp: v.time,
        })
        .collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        withheld: triples.iter().map(|t| (poi_id(t.source), poi_id(t.dest))).collect(),
        triples,
        successors: succ,
        habits,
        injected,
    };
    Ok(SyntheticWorld { checkins, truth })
}

/// Writes check-ins in the raw comma-separated format with a header row.
pub fn write_checkins(path: impl AsRef<Path>, checkins: &[CheckIn]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", COLUMNS.join(","))?;
        for c in checkins {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{}",
                c.user_id, c.poi_id, c.category_id, c.lat, c.lon, c.timestamp
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticWorldSpec {
        SyntheticWorldSpec {
            num_users: 10,
            num_pois: 60,
            num_checkins: 3000,
            withheld_pairs: 20,
            ..SyntheticWorldSpec::default()
        }
    }

    #[test]
    fn withheld_pairs_are_two_hop_and_never_adjacent_before_test() {
        let w = generate(&small()).unwrap();
        assert_eq!(w.checkins.len(), 3000);
        let t = &w.truth;
        for p in &t.triples {
            assert!(t.successors[p.source].contains(&p.intermediate));
            assert!(t.successors[p.intermediate].contains(&p.dest));
            assert!(!t.successors[p.source].contains(&p.dest));
        }
        let withheld: HashSet<(String, String)> = t.withheld.iter().cloned().collect();
        let mut sorted: Vec<&CheckIn> = w.checkins.iter().collect();
        sorted.sort_by_key(|c| c.timestamp);
        let boundary = sorted[(0.9 * sorted.len() as f64) as usize].timestamp;
        let mut by_user: std::collections::BTreeMap<&str, Vec<&CheckIn>> = Default::default();
        for c in &w.checkins {
            by_user.entry(&c.user_id).or_default().push(c);
        }
        for seq in by_user.values() {
            for pair in seq.windows(2) {
                if pair[1].timestamp - pair[0].timestamp <= 86_400 && pair[1].timestamp <= boundary {
                    assert!(!withheld.contains(&(pair[0].poi_id.clone(), pair[1].poi_id.clone())));
                }
            }
        }
        assert!(t.injected > 0);
    }

    #[test]
    fn no_withheld_pairs_is_plain_markov() {
        let spec = SyntheticWorldSpec {
            withheld_pairs: 0,
            ..small()
        };
        let w = generate(&spec).unwrap();
        assert!(w.truth.triples.is_empty());
        assert_eq!(w.truth.injected, 0);
    }

    #[test]
    fn infeasible_request_is_reported() {
        let spec = SyntheticWorldSpec {
            num_pois: 5,
            out_degree: 4,
            withheld_pairs: 3,
            habit_size: 2,
            ..small()
        };
        let err = generate(&spec).err().unwrap();
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn fixed_seed_gives_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_checkins(&a, &generate(&small()).unwrap().checkins).unwrap();
        write_checkins(&b, &generate(&small()).unwrap().checkins).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
