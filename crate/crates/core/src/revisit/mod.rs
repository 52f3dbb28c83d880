//! User-history revisit prior and its contextual calibration.

mod stats;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

pub use stats::{compute_history_stats, CandidateStats, RevisitStats};

use crate::error::Result;
use crate::model::nn::{Mlp, ParamGroup, ParamStore};

/// Width of the query time features: sin/cos time-of-day plus one-hot day-of-week.
pub const QUERY_TIME_FEATURES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RevisitConfig {
    /// `L_win`.
    pub window: usize,
    pub candidate_cap: usize,
    /// Clip bound of the prior.
    pub b_max: f64,
    pub calibration_hidden: usize,
    pub time_embedding_dim: usize,
    /// Initial `λ_prior`, `w_cnt`, `w_rec` and `w_win`.
    pub init_weight: f64,
    /// Initial `τ_rec`, in check-in steps.
    pub init_tau: f64,
    /// Initial `λ_corr`.
    pub init_correction_scale: f64,
}

impl Default for RevisitConfig {
    fn default() -> Self {
        RevisitConfig {
            window: 10,
            candidate_cap: 256,
            b_max: 5.0,
            calibration_hidden: 128,
            time_embedding_dim: 16,
            init_weight: 0.1,
            init_tau: 5.0,
            init_correction_scale: 0.0,
        }
    }
}

/// Per (instance, candidate) pair inputs, flattened over a batch.
#[derive(Debug, Clone)]
pub struct PairInputs {
    pub len: usize,
    /// Host copy of the owning instance (row in the batch) per pair.
    pub instance: Vec<u32>,
    pub poi: Vec<u32>,
    pub instance_t: Tensor,
    pub poi_t: Tensor,
    /// `instance · |P| + poi`, for scattering into a flat logit buffer.
    pub flat_index: Tensor,
    /// `log(1 + n)`.
    pub log_count: Tensor,
    pub recency: Tensor,
    pub in_window: Tensor,
    pub last_hour: Tensor,
    pub last_dow: Tensor,
    /// `ψ`, `(M, 3)`.
    pub pair_features: Tensor,
}

/// Learnable revisit prior weights and calibration MLPs.
#[derive(Debug, Clone)]
pub struct RevisitHead {
    pub cfg: RevisitConfig,
    pub lambda_prior: Var,
    pub w_count: Var,
    pub w_recency: Var,
    pub w_window: Var,
    /// `log τ_rec`; keeps `τ_rec > 0`.
    pub log_tau: Var,
    pub lambda_corr: Var,
    pub tod_embeddings: Var,
    pub dow_embeddings: Var,
    hist_mlp: Mlp,
    query_mlp: Mlp,
    cand_mlp: Mlp,
    gate_mlp: Mlp,
}

impl RevisitHead {
    pub fn new(ps: &mut ParamStore, cfg: &RevisitConfig, hidden: usize, poi_dim: usize) -> Result<Self> {
        ps.set_group(ParamGroup::Revisit);
        ps.push_prefix("revisit");
        let c = cfg.calibration_hidden;
        let te = cfg.time_embedding_dim;
        let head = RevisitHead {
            cfg: cfg.clone(),
            lambda_prior: ps.constant("lambda_prior", 1, cfg.init_weight)?,
            w_count: ps.constant("w_count", 1, cfg.init_weight)?,
            w_recency: ps.constant("w_recency", 1, cfg.init_weight)?,
            w_window: ps.constant("w_window", 1, cfg.init_weight)?,
            log_tau: ps.constant("log_tau", 1, cfg.init_tau.ln())?,
            lambda_corr: ps.constant("lambda_corr", 1, cfg.init_correction_scale)?,
            tod_embeddings: ps.normal("tod_embeddings", (24, te), 0.1)?,
            dow_embeddings: ps.normal("dow_embeddings", (7, te), 0.1)?,
            hist_mlp: Mlp::new(ps, "hist_mlp", 3 + 2 * te + 3, c, c)?,
            query_mlp: Mlp::new(ps, "query_mlp", hidden + QUERY_TIME_FEATURES, c, c)?,
            cand_mlp: Mlp::new(ps, "cand_mlp", poi_dim + c, c, c)?,
            gate_mlp: Mlp::new(ps, "gate_mlp", 3 * c, c, 1)?,
        };
        ps.pop_prefix();
        ps.set_group(ParamGroup::Backbone);
        Ok(head)
    }

    pub fn tau(&self) -> Result<f64> {
        let t = self.log_tau.as_tensor().to_dtype(candle_core::DType::F64)?.exp()?;
        Ok(t.to_vec1::<f64>()?[0])
    }

    /// `α = [log(1+n); exp(-r/τ_rec); 1[in window]]`, `(M, 3)`.
    pub fn stat_vector(&self, pairs: &PairInputs) -> Result<Tensor> {
        let inv_tau = self.log_tau.as_tensor().neg()?.exp()?;
        let decay = pairs.recency.broadcast_mul(&inv_tau)?.neg()?.exp()?;
        Ok(Tensor::stack(&[&pairs.log_count, &decay, &pairs.in_window], 1)?)
    }

    /// `R = clip_[0, b_max](λ_prior [w_cnt α₀ + w_rec α₁ + w_win α₂])`, `(M)`.
    pub fn prior(&self, alpha: &Tensor) -> Result<Tensor> {
        let w = Tensor::cat(
            &[self.w_count.as_tensor(), self.w_recency.as_tensor(), self.w_window.as_tensor()],
            0,
        )?;
        let mixed = alpha.broadcast_mul(&w)?.sum(1)?;
        let raw = mixed.broadcast_mul(self.lambda_prior.as_tensor())?;
        Ok(raw.clamp(0.0, self.cfg.b_max)?)
    }

    /// `φ = MLP_hist([α; e_tod(last); e_dow(last); ψ])`, `(M, C)`.
    pub fn history_feature(&self, alpha: &Tensor, pairs: &PairInputs) -> Result<Tensor> {
        let tod = self.tod_embeddings.as_tensor().index_select(&pairs.last_hour, 0)?;
        let dow = self.dow_embeddings.as_tensor().index_select(&pairs.last_dow, 0)?;
        let x = Tensor::cat(&[alpha, &tod, &dow, &pairs.pair_features], 1)?;
        self.hist_mlp.forward(&x)
    }

    /// `q = MLP_q([h; t])`, `(B, C)`.
    pub fn query(&self, state: &Tensor, time_features: &Tensor) -> Result<Tensor> {
        self.query_mlp.forward(&Tensor::cat(&[state, time_features], 1)?)
    }

    /// `v = MLP_v([e_d; φ])`, `(M, C)`.
    pub fn candidate_state(&self, poi_embeddings: &Tensor, history: &Tensor) -> Result<Tensor> {
        self.cand_mlp.forward(&Tensor::cat(&[poi_embeddings, history], 1)?)
    }

    /// `γ = tanh(MLP_g([q; v; q⊙v]))`, `(M)`.
    pub fn gate(&self, query: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        let x = Tensor::cat(&[query, candidate, &(query * candidate)?], 1)?;
        Ok(self.gate_mlp.forward(&x)?.squeeze(1)?.tanh()?)
    }

    /// `Δ = λ_corr · γ · R`.
    pub fn correction(&self, gate: &Tensor, prior: &Tensor) -> Result<Tensor> {
        Ok((gate * prior)?.broadcast_mul(self.lambda_corr.as_tensor())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(cfg: RevisitConfig) -> RevisitHead {
        let mut ps = ParamStore::new(DType::F64, &Device::Cpu, ChaCha8Rng::seed_from_u64(0));
        RevisitHead::new(&mut ps, &cfg, 8, 4).unwrap()
    }

    fn scalar(v: &Var, x: f64) {
        v.set(&Tensor::new(&[x], &Device::Cpu).unwrap()).unwrap();
    }

    fn alpha(rows: &[[f64; 3]]) -> Tensor {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (rows.len(), 3), &Device::Cpu).unwrap()
    }

    #[test]
    fn prior_hand_evaluation() {
        let h = head(RevisitConfig::default());
        scalar(&h.lambda_prior, 1.0);
        scalar(&h.w_count, 1.0);
        scalar(&h.w_recency, 0.0);
        scalar(&h.w_window, 0.0);
        let r = h.prior(&alpha(&[[4f64.ln(), 0.3, 1.0]])).unwrap().to_vec1::<f64>().unwrap();
        assert!((r[0] - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn prior_clips_both_ends() {
        let h = head(RevisitConfig::default());
        scalar(&h.lambda_prior, 1.0);
        scalar(&h.w_count, -0.7);
        scalar(&h.w_recency, 0.0);
        scalar(&h.w_window, 10.0);
        let r = h
            .prior(&alpha(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert_eq!(r, vec![0.0, 5.0]);
    }

    #[test]
    fn tau_stays_positive() {
        let h = head(RevisitConfig::default());
        scalar(&h.log_tau, -40.0);
        assert!(h.tau().unwrap() > 0.0);
        assert!((head(RevisitConfig::default()).tau().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_gives_zero_correction() {
        let h = head(RevisitConfig::default());
        scalar(&h.lambda_corr, 3.0);
        let gate = Tensor::new(&[0.9f64, -0.4], &Device::Cpu).unwrap();
        let prior = Tensor::new(&[0.0f64, 0.0], &Device::Cpu).unwrap();
        let d = h.correction(&gate, &prior).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }
}
