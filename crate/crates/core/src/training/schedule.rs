use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::model::Stages;

/// Component flags and scales active at a (1-based) epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub graph_scale: f64,
    pub prior_active: bool,
    pub corr_active: bool,
    pub warm_active: bool,
    pub backbone_lr_scale: f64,
}

impl CurriculumState {
    pub fn stages(&self) -> Stages {
        Stages {
            graph_scale: self.graph_scale,
            prior: self.prior_active,
            calibration: self.corr_active,
        }
    }
}

fn ramp(epoch: usize, start: usize, length: usize, top: f64) -> f64 {
    if epoch < start {
        return 0.0;
    }
    if length == 0 {
        return top;
    }
    (top * (epoch - start) as f64 / length as f64).min(top)
}

/// `λ_warm(e)`: zero before `e_warm`, then linear up to `warm_weight` over
/// `warm_ramp` epochs.
pub fn lambda_warm(epoch: usize, cfg: &TrainingConfig) -> f64 {
    ramp(epoch, cfg.e_warm, cfg.warm_ramp, cfg.warm_weight)
}

pub fn curriculum_state(epoch: usize, cfg: &TrainingConfig) -> CurriculumState {
    CurriculumState {
        graph_scale: ramp(epoch, cfg.e_graph, cfg.graph_ramp, 1.0),
        prior_active: epoch >= cfg.e_prior,
        corr_active: epoch >= cfg.e_corr,
        warm_active: epoch >= cfg.e_warm,
        backbone_lr_scale: if epoch >= cfg.e_corr { cfg.backbone_lr_scale } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn warm_weight_schedule() {
        let cfg = TrainingConfig::default();
        assert_eq!(lambda_warm(cfg.e_warm - 1, &cfg), 0.0);
        assert_eq!(lambda_warm(cfg.e_warm, &cfg), 0.0);
        assert_eq!(lambda_warm(cfg.e_warm + 5, &cfg), 0.25);
        assert_eq!(lambda_warm(cfg.e_warm + 10, &cfg), 0.5);
        assert_eq!(lambda_warm(cfg.epochs, &cfg), 0.5);
    }

    #[test]
    fn stage_examples() {
        let cfg = TrainingConfig::default();
        let s = curriculum_state(1, &cfg);
        assert_eq!(s.graph_scale, 0.0);
        assert!(!s.prior_active && !s.corr_active && !s.warm_active);
        assert_eq!(s.backbone_lr_scale, 1.0);
        assert_eq!(curriculum_state(70, &cfg).graph_scale, 0.5);
        let s = curriculum_state(125, &cfg);
        assert!(s.prior_active && s.corr_active && s.warm_active);
        assert_eq!(s.graph_scale, 1.0);
        assert_eq!(s.backbone_lr_scale, 0.1);
    }

    proptest! {
        #[test]
        fn warm_weight_monotone_and_bounded(e_warm in 1usize..50, ramp_len in 0usize..20, e in 1usize..100) {
            let cfg = TrainingConfig { e_warm, warm_ramp: ramp_len, ..TrainingConfig::default() };
            let a = lambda_warm(e, &cfg);
            let b = lambda_warm(e + 1, &cfg);
            prop_assert!(a <= b && (0.0..=0.5).contains(&b));
        }
    }
}
