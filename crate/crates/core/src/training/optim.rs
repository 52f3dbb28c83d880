use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::Result;
use crate::model::{Param, ParamGroup};

/// Adam with decoupled weight decay and a learning-rate multiplier per
/// parameter group. Parameters without a gradient in a step are left alone.
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: Vec<Option<Moments>>,
}

struct Moments {
    m: Tensor,
    v: Tensor,
    step: i32,
}

impl AdamW {
    pub fn new(num_params: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: (0..num_params).map(|_| None).collect(),
        }
    }

    pub fn step(&mut self, params: &[Param], grads: &GradStore, backbone_scale: f64) -> Result<()> {
        for (p, slot) in params.iter().zip(self.state.iter_mut()) {
            let Some(g) = grads.get(p.var.as_tensor()) else { continue };
            let lr = match p.group {
                ParamGroup::Backbone => self.lr * backbone_scale,
                ParamGroup::Revisit => self.lr,
            };
            let st = match slot {
                Some(st) => st,
                None => slot.insert(Moments {
                    m: g.zeros_like()?,
                    v: g.zeros_like()?,
                    step: 0,
                }),
            };
            st.step += 1;
            st.m = ((&st.m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            st.v = ((&st.v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let mhat = (&st.m / (1.0 - self.beta1.powi(st.step)))?;
            let vhat = (&st.v / (1.0 - self.beta2.powi(st.step)))?;
            let update = (mhat / (vhat.sqrt()? + self.eps)?)?;
            let w = p.var.as_tensor();
            let next = ((w * (1.0 - lr * self.weight_decay))? - (update * lr)?)?;
            p.var.set(&next)?;
        }
        Ok(())
    }
}

/// Rescales the gradients of `params` so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &[Param], grads: &mut GradStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for p in params {
        if let Some(g) = grads.get(p.var.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm.is_finite() && norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for p in params {
            let t = p.var.as_tensor();
            if let Some(g) = grads.remove(t) {
                grads.insert(t, (g * scale)?);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn param(values: &[f64], group: ParamGroup) -> Param {
        Param {
            name: "w".into(),
            group,
            var: Var::from_vec(values.to_vec(), values.len(), &Device::Cpu).unwrap(),
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let ps = vec![param(&[1.0, -2.0], ParamGroup::Revisit), param(&[3.0], ParamGroup::Backbone)];
        let loss = ((ps[0].var.as_tensor().sum_all().unwrap() * 2.0).unwrap()
            - ps[1].var.as_tensor().sum_all().unwrap())
        .unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = AdamW::new(2, 0.1, 0.0);
        opt.step(&ps, &grads, 0.5).unwrap();
        let a = ps[0].var.as_tensor().to_vec1::<f64>().unwrap();
        let b = ps[1].var.as_tensor().to_vec1::<f64>().unwrap();
        assert!((a[0] - 0.9).abs() < 1e-6 && (a[1] + 2.1).abs() < 1e-6);
        assert!((b[0] - 3.05).abs() < 1e-6);
    }

    #[test]
    fn missing_gradient_leaves_param() {
        let ps = vec![param(&[1.0], ParamGroup::Backbone), param(&[5.0], ParamGroup::Revisit)];
        let grads = ps[0].var.as_tensor().sum_all().unwrap().backward().unwrap();
        let mut opt = AdamW::new(2, 0.1, 0.01);
        opt.step(&ps, &grads, 1.0).unwrap();
        assert_eq!(ps[1].var.as_tensor().to_vec1::<f64>().unwrap(), vec![5.0]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let ps = vec![param(&[0.0, 0.0], ParamGroup::Backbone)];
        let w = Tensor::new(&[3.0f64, 4.0], &Device::Cpu).unwrap();
        let loss = (ps[0].var.as_tensor() * &w).unwrap().sum_all().unwrap();
        let mut grads = loss.backward().unwrap();
        let before = clip_grad_norm(&ps, &mut grads, 1.0).unwrap();
        assert!((before - 5.0).abs() < 1e-12);
        let g = grads.get(ps[0].var.as_tensor()).unwrap().to_dtype(DType::F64).unwrap();
        let g = g.to_vec1::<f64>().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-9 && (g[1] - 0.8).abs() < 1e-9);
    }
}
