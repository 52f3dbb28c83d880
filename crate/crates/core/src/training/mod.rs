//! Losses, the staged curriculum and the optimization loop.

mod loss;
mod optim;
mod schedule;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{cross_entropy, main_loss, total_loss, warm_loss};
pub use optim::{clip_grad_norm, AdamW};
pub use schedule::{curriculum_state, lambda_warm, CurriculumState};

use crate::dataset::PredictionInstance;
use crate::error::{Error, Result};
use crate::evaluation::{metrics, score_ranks};
use crate::model::{Batch, BatchContext, Dropout, RecapModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// First epoch of the graph-token ramp.
    pub e_graph: usize,
    pub graph_ramp: usize,
    pub e_prior: usize,
    pub e_corr: usize,
    pub e_warm: usize,
    pub warm_ramp: usize,
    /// Plateau of `λ_warm`.
    pub warm_weight: f64,
    /// Backbone learning-rate multiplier once calibration is active.
    pub backbone_lr_scale: f64,
    pub grad_clip: bool,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 130,
            batch_size: 512,
            eval_batch_size: 512,
            learning_rate: 3e-5,
            weight_decay: 5e-6,
            e_graph: 60,
            graph_ramp: 20,
            e_prior: 80,
            e_corr: 120,
            e_warm: 120,
            warm_ramp: 10,
            warm_weight: 0.5,
            backbone_lr_scale: 0.1,
            grad_clip: true,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(1 <= self.e_graph && self.e_graph <= self.e_prior && self.e_prior <= self.e_corr && self.e_corr <= self.e_warm) {
            return bad(format!(
                "stage epochs must satisfy 1 <= e_graph ({}) <= e_prior ({}) <= e_corr ({}) <= e_warm ({})",
                self.e_graph, self.e_prior, self.e_corr, self.e_warm
            ));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) || !(self.warm_weight >= 0.0) {
            return bad("weight_decay and warm_weight must be non-negative".into());
        }
        if !(self.backbone_lr_scale > 0.0) {
            return bad("backbone_lr_scale must be positive".into());
        }
        if self.grad_clip && !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main_loss: f64,
    /// Mean over batches that had warm rows; null when none did.
    pub warm_loss: Option<f64>,
    pub lambda_warm: f64,
    pub graph_scale: f64,
    pub prior_active: bool,
    pub corr_active: bool,
    pub backbone_lr_scale: f64,
    pub warm_instances: usize,
    pub val_hr1: Option<f64>,
    pub val_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    /// Epoch whose parameters the model holds after [`fit`].
    pub best_epoch: usize,
    pub best_val_mrr: Option<f64>,
    pub records: Vec<EpochRecord>,
}

pub struct TrainData<'a> {
    pub ctx: BatchContext<'a>,
    pub train: &'a [PredictionInstance],
    pub val: &'a [PredictionInstance],
}

fn snapshot(model: &RecapModel) -> Result<Vec<Tensor>> {
    Ok(model
        .params()
        .iter()
        .map(|p| p.var.as_tensor().copy())
        .collect::<candle_core::Result<_>>()?)
}

fn restore(model: &RecapModel, values: &[Tensor]) -> Result<()> {
    for (p, v) in model.params().iter().zip(values) {
        p.var.set(v)?;
    }
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Trains under the staged curriculum, evaluating validation MRR after every
/// epoch and leaving the best epoch's parameters in `model`. `on_epoch` sees
/// each record as soon as it is complete.
pub fn fit(
    model: &mut RecapModel,
    data: &TrainData,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidInput("no training instances".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut opt = AdamW::new(model.params().len(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut records = Vec::new();
    let mut best: Option<(usize, Option<f64>, Vec<Tensor>)> = None;
    let mut last_good = None;

    for epoch in 1..=cfg.epochs {
        let state = curriculum_state(epoch, cfg);
        let stages = state.stages();
        let lw = lambda_warm(epoch, cfg);
        order.shuffle(&mut shuffle_rng);
        let (mut main_sum, mut warm_sum) = (0.0, 0.0);
        let (mut warm_batches, mut warm_instances) = (0usize, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&PredictionInstance> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = Batch::build(&refs, &data.ctx)?;
            let mut drop = Dropout::train(&mut dropout_rng);
            let out = model.forward(&batch, stages, &mut drop)?;
            let main = main_loss(&out.logits, &batch.targets)?;
            let warm = if state.warm_active && lw > 0.0 {
                warm_loss(model.warm_logits(&batch, &out)?.as_ref())?
            } else {
                None
            };
            let total = total_loss(&main, warm.as_ref(), lw)?;
            let main_v = scalar(&main)?;
            let total_v = scalar(&total)?;
            if !main_v.is_finite() || !total_v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    last_good_epoch: last_good,
                });
            }
            main_sum += main_v * refs.len() as f64;
            if let Some(w) = &warm {
                warm_sum += scalar(w)?;
                warm_batches += 1;
                warm_instances += batch.warm.len();
            }
            let mut grads = total.backward()?;
            if cfg.grad_clip {
                clip_grad_norm(model.params(), &mut grads, cfg.grad_clip_norm)?;
            }
            opt.step(model.params(), &grads, state.backbone_lr_scale)?;
        }
        last_good = Some(epoch);

        let (val_hr1, val_mrr) = if data.val.is_empty() {
            (None, None)
        } else {
            let ranks = score_ranks(model, data.val, &data.ctx, stages, cfg.eval_batch_size)?;
            let m1 = metrics(&ranks, 1).expect("non-empty");
            (Some(m1.hr), Some(m1.mrr))
        };
        let record = EpochRecord {
            epoch,
            main_loss: main_sum / data.train.len() as f64,
            warm_loss: (warm_batches > 0).then(|| warm_sum / warm_batches as f64),
            lambda_warm: lw,
            graph_scale: state.graph_scale,
            prior_active: state.prior_active,
            corr_active: state.corr_active,
            backbone_lr_scale: state.backbone_lr_scale,
            warm_instances,
            val_hr1,
            val_mrr,
        };
        log::info!(
            "epoch {epoch}: main {:.4} warm {:?} val MRR {:?}",
            record.main_loss,
            record.warm_loss,
            record.val_mrr
        );
        on_epoch(&record)?;
        let improves = match (&best, val_mrr) {
            (None, _) => true,
            (Some((_, Some(b), _)), Some(m)) => m > *b,
            (Some(_), None) => true,
            (Some((_, None, _)), Some(_)) => true,
        };
        if improves {
            best = Some((epoch, val_mrr, snapshot(model)?));
        }
        records.push(record);
    }

    let (best_epoch, best_val_mrr, values) = best.expect("at least one epoch");
    restore(model, &values)?;
    Ok(FitOutcome {
        best_epoch,
        best_val_mrr,
        records,
    })
}
