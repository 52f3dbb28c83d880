use candle_core::{DType, Device, Tensor};

use crate::dataset::time::{day_fraction, day_of_week};
use crate::dataset::{PredictionInstance, UserSequence, Vocabulary};
use crate::error::Result;
use crate::graph::TransitionStore;
use crate::revisit::{compute_history_stats, PairInputs, RevisitConfig, QUERY_TIME_FEATURES};

/// Everything a batch needs besides the instances themselves.
#[derive(Clone, Copy)]
pub struct BatchContext<'a> {
    pub sequences: &'a [UserSequence],
    pub vocabulary: &'a Vocabulary,
    pub store: &'a TransitionStore,
    pub revisit: &'a RevisitConfig,
    pub dtype: DType,
    pub device: &'a Device,
}

/// Device-side inputs for a mini-batch of prediction instances.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub suffix_len: usize,
    pub users: Tensor,
    /// `(B·k)` POI indices, pad where masked.
    pub suffix: Tensor,
    /// `(B, k)`, 1 for real tokens.
    pub token_mask: Tensor,
    pub sources: Tensor,
    pub source_ids: Vec<u32>,
    pub targets: Vec<u32>,
    pub target_tensor: Tensor,
    /// `(B, 9)`: sin/cos of the query time-of-day and one-hot day-of-week.
    pub time_features: Tensor,
    pub pairs: PairInputs,
    /// Rows whose `(source, target)` is a warm edge.
    pub warm: Vec<u32>,
}

pub fn query_time_features(query_time: i64) -> [f64; QUERY_TIME_FEATURES] {
    let angle = std::f64::consts::TAU * day_fraction(query_time);
    let mut f = [0.0; QUERY_TIME_FEATURES];
    f[0] = angle.sin();
    f[1] = angle.cos();
    f[2 + day_of_week(query_time)] = 1.0;
    f
}

impl Batch {
    pub fn build(instances: &[&PredictionInstance], ctx: &BatchContext) -> Result<Self> {
        let b = instances.len();
        let k = instances.first().map_or(0, |i| i.suffix.len());
        let pad = ctx.vocabulary.pad_poi();
        let num_pois = ctx.vocabulary.num_pois() as u32;
        let dev = ctx.device;
        let float = |v: Vec<f64>, shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, shape, dev)?.to_dtype(ctx.dtype)?)
        };

        let mut suffix = Vec::with_capacity(b * k);
        let mut mask = Vec::with_capacity(b * k);
        let mut time = Vec::with_capacity(b * QUERY_TIME_FEATURES);
        let mut warm = Vec::new();
        let mut pair_instance = Vec::new();
        let mut pair_poi = Vec::new();
        let mut flat = Vec::new();
        let (mut log_count, mut recency, mut in_window) = (Vec::new(), Vec::new(), Vec::new());
        let (mut last_hour, mut last_dow, mut psi) = (Vec::new(), Vec::new(), Vec::new());

        for (row, inst) in instances.iter().enumerate() {
            for &p in &inst.suffix {
                suffix.push(p);
                mask.push(if p == pad { 0.0 } else { 1.0 });
            }
            time.extend(query_time_features(inst.query_time));
            if ctx.store.is_warm(inst.source, inst.target) {
                warm.push(row as u32);
            }
            let stats = compute_history_stats(
                inst.history(ctx.sequences),
                ctx.revisit.window,
                ctx.revisit.candidate_cap,
            );
            for c in &stats.candidates {
                pair_instance.push(row as u32);
                pair_poi.push(c.poi);
                flat.push(row as u32 * num_pois + c.poi);
                log_count.push((c.count as f64).ln_1p());
                recency.push(c.recency as f64);
                in_window.push(if c.in_window { 1.0 } else { 0.0 });
                last_hour.push(c.last_hour() as u32);
                last_dow.push(c.last_dow() as u32);
                psi.extend(c.pair_features(inst.query_time));
            }
        }
        let m = pair_instance.len();
        let pairs = PairInputs {
            len: m,
            instance_t: Tensor::from_vec(pair_instance.clone(), m, dev)?,
            poi_t: Tensor::from_vec(pair_poi.clone(), m, dev)?,
            instance: pair_instance,
            poi: pair_poi,
            flat_index: Tensor::from_vec(flat, m, dev)?,
            log_count: float(log_count, &[m])?,
            recency: float(recency, &[m])?,
            in_window: float(in_window, &[m])?,
            last_hour: Tensor::from_vec(last_hour, m, dev)?,
            last_dow: Tensor::from_vec(last_dow, m, dev)?,
            pair_features: float(psi, &[m, 3])?,
        };
        let source_ids: Vec<u32> = instances.iter().map(|i| i.source).collect();
        let targets: Vec<u32> = instances.iter().map(|i| i.target).collect();
        Ok(Batch {
            size: b,
            suffix_len: k,
            users: Tensor::from_vec(instances.iter().map(|i| i.user).collect::<Vec<_>>(), b, dev)?,
            suffix: Tensor::from_vec(suffix, b * k, dev)?,
            token_mask: float(mask, &[b, k])?,
            sources: Tensor::from_vec(source_ids.clone(), b, dev)?,
            source_ids,
            target_tensor: Tensor::from_vec(targets.clone(), b, dev)?,
            targets,
            time_features: float(time, &[b, QUERY_TIME_FEATURES])?,
            pairs,
            warm,
        })
    }
}
