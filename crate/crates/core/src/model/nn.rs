//! Small layer toolkit on top of candle tensors. Parameters are created
//! through [`ParamStore`] so that initialization is seeded and every variable
//! carries a name and an optimizer group.

use candle_core::{CpuStorage, CustomOp2, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Embeddings, encoder, token and graph MLPs, output layer.
    Backbone,
    /// Revisit prior and contextual calibration.
    Revisit,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub var: Var,
}

pub struct ParamStore {
    params: Vec<Param>,
    prefix: Vec<String>,
    group: ParamGroup,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device, rng: ChaCha8Rng) -> Self {
        ParamStore {
            params: Vec::new(),
            prefix: Vec::new(),
            group: ParamGroup::Backbone,
            dtype,
            device: device.clone(),
            rng,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn set_group(&mut self, group: ParamGroup) {
        self.group = group;
    }

    pub fn push_prefix(&mut self, p: &str) {
        self.prefix.push(p.to_string());
    }

    pub fn pop_prefix(&mut self) {
        self.prefix.pop();
    }

    pub fn into_params(self) -> Vec<Param> {
        self.params
    }

    fn register(&mut self, name: &str, data: Vec<f64>, shape: Shape) -> Result<Var> {
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.params.push(Param {
            name: full,
            group: self.group,
            var: var.clone(),
        });
        Ok(var)
    }

    pub fn normal<S: Into<Shape>>(&mut self, name: &str, shape: S, std: f64) -> Result<Var> {
        let shape = shape.into();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.elem_count()).map(|_| dist.sample(&mut self.rng)).collect();
        self.register(name, data, shape)
    }

    pub fn uniform<S: Into<Shape>>(&mut self, name: &str, shape: S, bound: f64) -> Result<Var> {
        let shape = shape.into();
        let data = (0..shape.elem_count())
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.register(name, data, shape)
    }

    pub fn constant<S: Into<Shape>>(&mut self, name: &str, shape: S, value: f64) -> Result<Var> {
        let shape = shape.into();
        let data = vec![value; shape.elem_count()];
        self.register(name, data, shape)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        ps.push_prefix(name);
        let weight = ps.uniform("weight", (output, input), bound)?;
        let bias = ps.uniform("bias", output, bound)?;
        ps.pop_prefix();
        Ok(Linear { weight, bias })
    }

    /// Applies over the last dimension; leading dimensions are flattened.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor().t()?;
        let dims = x.dims().to_vec();
        let (&input, lead) = dims.split_last().ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
        let flat = x.reshape((lead.iter().product::<usize>(), input))?;
        let y = flat.matmul(&w)?.broadcast_add(self.bias.as_tensor())?;
        let mut out = lead.to_vec();
        out.push(y.dim(1)?);
        Ok(y.reshape(out)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        ps.push_prefix(name);
        let gamma = ps.constant("gamma", dim, 1.0)?;
        let beta = ps.constant("beta", dim, 0.0)?;
        ps.pop_prefix();
        Ok(LayerNorm {
            gamma,
            beta,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = normalize_last(x, self.eps)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// Zero-mean, unit-variance over the last dimension, before any affine map.
pub fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// `Linear → GELU → Linear`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize) -> Result<Self> {
        ps.push_prefix(name);
        let first = Linear::new(ps, "fc1", input, hidden)?;
        let second = Linear::new(ps, "fc2", hidden, output)?;
        ps.pop_prefix();
        Ok(Mlp { first, second })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.second.forward(&self.first.forward(x)?.gelu_erf()?)
    }
}

/// Seeded inverted dropout. Inactive (identity) when built without an RNG.
pub struct Dropout<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Dropout { rng: Some(rng) }
    }

    pub fn eval() -> Self {
        Dropout { rng: None }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

/// `C[i] = A[i] · B[i]` over many small matrices, as a plain loop kernel.
struct SmallBatchMatmul;

fn small_bmm<T>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T>
where
    T: Copy + Default + std::ops::Mul<Output = T> + std::ops::AddAssign,
{
    let mut out = vec![T::default(); batch * m * n];
    for i in 0..batch {
        let (a, b) = (&a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n]);
        let c = &mut out[i * m * n..(i + 1) * m * n];
        for r in 0..m {
            let row = &mut c[r * n..(r + 1) * n];
            for (j, &x) in a[r * k..(r + 1) * k].iter().enumerate() {
                for (dst, &y) in row.iter_mut().zip(&b[j * n..(j + 1) * n]) {
                    *dst += x * y;
                }
            }
        }
    }
    out
}

impl CustomOp2 for SmallBatchMatmul {
    fn name(&self) -> &'static str {
        "small-batch-matmul"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, m, k) = l1.shape().dims3()?;
        let (batch2, k2, n) = l2.shape().dims3()?;
        if batch != batch2 || k != k2 {
            candle_core::bail!("small-batch-matmul shape mismatch {:?} x {:?}", l1.shape(), l2.shape());
        }
        let (Some((o1, e1)), Some((o2, e2))) = (l1.contiguous_offsets(), l2.contiguous_offsets()) else {
            candle_core::bail!("small-batch-matmul needs contiguous inputs");
        };
        let out = match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => CpuStorage::F32(small_bmm(&a[o1..e1], &b[o2..e2], batch, m, k, n)),
            (CpuStorage::F64(a), CpuStorage::F64(b)) => CpuStorage::F64(small_bmm(&a[o1..e1], &b[o2..e2], batch, m, k, n)),
            _ => candle_core::bail!("small-batch-matmul supports f32 and f64 only"),
        };
        Ok((out, Shape::from((batch, m, n))))
    }

    fn bwd(&self, a: &Tensor, b: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let bt = b.transpose(1, 2)?.contiguous()?;
        let at = a.transpose(1, 2)?.contiguous()?;
        Ok((Some(grad.apply_op2(&bt, SmallBatchMatmul)?), Some(at.apply_op2(&grad, SmallBatchMatmul)?)))
    }
}

/// Batched matmul over the last two dimensions for many small matrices.
pub fn batched_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ad, bd) = (a.dims(), b.dims());
    if ad.len() < 3 || ad.len() != bd.len() {
        return Err(Error::Shape(format!("batched matmul of {ad:?} and {bd:?}")));
    }
    let lead = &ad[..ad.len() - 2];
    let batch: usize = lead.iter().product();
    let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
    let n = bd[bd.len() - 1];
    let a3 = a.contiguous()?.reshape((batch, m, k))?;
    let b3 = b.contiguous()?.reshape((batch, bd[bd.len() - 2], n))?;
    let mut shape = lead.to_vec();
    shape.extend([m, n]);
    Ok(a3.apply_op2(&b3, SmallBatchMatmul)?.reshape(shape)?)
}

/// Softmax over the last dimension built from primitive ops.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store() -> ParamStore {
        ParamStore::new(DType::F64, &Device::Cpu, ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn names_are_prefixed() {
        let mut ps = store();
        ps.push_prefix("enc");
        Mlp::new(&mut ps, "ffn", 3, 4, 2).unwrap();
        ps.pop_prefix();
        ps.set_group(ParamGroup::Revisit);
        ps.constant("scale", 1, 0.5).unwrap();
        let params = ps.into_params();
        let names: Vec<_> = params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            ["enc.ffn.fc1.weight", "enc.ffn.fc1.bias", "enc.ffn.fc2.weight", "enc.ffn.fc2.bias", "scale"]
        );
        assert_eq!(params[4].group, ParamGroup::Revisit);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut ps = store();
        let ln = LayerNorm::new(&mut ps, "ln", 6).unwrap();
        let x = Tensor::new(&[[1f64, 2., 3., 4., 5., 60.], [-3., 0., 0., 0., 0., 9.]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in y {
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_ignores_masked_logits_exactly() {
        let x = Tensor::new(&[[0.3f64, -1e9, 1.2]], &Device::Cpu).unwrap();
        let y = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(y[0][1], 0.0);
        assert!((y[0][0] + y[0][2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dropout_is_seeded_and_identity_in_eval() {
        let x = Tensor::ones((4, 8), DType::F64, &Device::Cpu).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let a = Dropout::train(&mut r1).apply(&x, 0.5).unwrap().to_vec2::<f64>().unwrap();
        let b = Dropout::train(&mut r2).apply(&x, 0.5).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&v| v == 0.0 || v == 2.0));
        let c = Dropout::eval().apply(&x, 0.5).unwrap().to_vec2::<f64>().unwrap();
        assert!(c.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn batched_matmul_matches_candle() {
        let dev = Device::Cpu;
        let mut ps = store();
        let a = ps.normal("a", (2, 3, 4, 5), 1.0).unwrap();
        let b = ps.normal("b", (2, 3, 5, 6), 1.0).unwrap();
        let mine = batched_matmul(a.as_tensor(), b.as_tensor()).unwrap();
        let theirs = a.as_tensor().matmul(b.as_tensor()).unwrap();
        let diff = (&mine - &theirs).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
        let probe = Tensor::randn(0f64, 1.0, (2, 3, 4, 6), &dev).unwrap();
        let g1 = (mine * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&a, &b] {
            let d = (g1.get(v.as_tensor()).unwrap() - g2.get(v.as_tensor()).unwrap())
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!(d < 1e-12);
        }
    }
}
