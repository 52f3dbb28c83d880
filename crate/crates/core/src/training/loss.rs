use candle_core::{Tensor, D};

use crate::error::{Error, Result};

/// Mean cross-entropy of `targets` under `(B, |P|)` logits.
pub fn cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let (b, p) = logits.dims2()?;
    if targets.len() != b {
        return Err(Error::Shape(format!("{} targets for {b} logit rows", targets.len())));
    }
    if let Some(t) = targets.iter().find(|&&t| t as usize >= p) {
        return Err(Error::InvalidInput(format!("target index {t} is padding or out of range (|P| = {p})")));
    }
    let idx = Tensor::from_vec(targets.to_vec(), (b, 1), logits.device())?;
    let picked = logits.gather(&idx, 1)?.squeeze(1)?;
    let lse = logits.log_sum_exp(D::Minus1)?;
    Ok((lse - picked)?.mean_all()?)
}

/// `L_main` over the final logits.
pub fn main_loss(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    cross_entropy(logits, targets)
}

/// `L_warm` over warm-holdout logits; `None` when there are no warm rows.
pub fn warm_loss(warm_logits: Option<&(Tensor, Vec<u32>)>) -> Result<Option<Tensor>> {
    match warm_logits {
        Some((logits, targets)) if !targets.is_empty() => Ok(Some(cross_entropy(logits, targets)?)),
        _ => Ok(None),
    }
}

/// `L = L_main + λ_warm·L_warm`.
pub fn total_loss(main: &Tensor, warm: Option<&Tensor>, lambda_warm: f64) -> Result<Tensor> {
    match warm {
        Some(w) if lambda_warm > 0.0 => Ok((main + (w * lambda_warm)?)?),
        _ => Ok(main.clone()),
    }
}
