use candle_core::{DType, Device, Tensor, Var};

use super::nn::{batched_matmul, softmax_last, Dropout, LayerNorm, Linear, Mlp, ParamStore};
use super::{ModelConfig, ModelDims};
use crate::dataset::Vocabulary;
use crate::error::{Error, Result};
use crate::graph::GraphPropagator;

/// Additive attention bias for masked keys. Large enough that `exp` of it
/// underflows to exactly zero after max-subtraction.
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    norm_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ff: LayerNorm,
    ff: Mlp,
}

impl EncoderLayer {
    fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.hidden;
        ps.push_prefix(name);
        let layer = EncoderLayer {
            norm_attn: LayerNorm::new(ps, "norm_attn", h)?,
            query: Linear::new(ps, "query", h, h)?,
            key: Linear::new(ps, "key", h, h)?,
            value: Linear::new(ps, "value", h, h)?,
            out: Linear::new(ps, "out", h, h)?,
            norm_ff: LayerNorm::new(ps, "norm_ff", h)?,
            ff: Mlp::new(ps, "ff", h, cfg.ff_dim, h)?,
        };
        ps.pop_prefix();
        Ok(layer)
    }

    /// Pre-norm block. `bias` is `(B, 1, 1, T)`.
    fn forward(&self, x: &Tensor, bias: &Tensor, heads: usize, p: f64, drop: &mut Dropout) -> Result<Tensor> {
        let (b, t, h) = x.dims3()?;
        let dh = h / heads;
        let y = self.norm_attn.forward(x)?;
        let split = |l: &Linear| -> Result<Tensor> {
            Ok(l.forward(&y)?.reshape((b, t, heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let (q, k, v) = (split(&self.query)?, split(&self.key)?, split(&self.value)?);
        let scores = (batched_matmul(&q, &k.t()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let attn = drop.apply(&softmax_last(&scores)?, p)?;
        let ctx = batched_matmul(&attn, &v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, h))?;
        let x = (x + drop.apply(&self.out.forward(&ctx)?, p)?)?;
        let ff = self.ff.forward(&self.norm_ff.forward(&x)?)?;
        Ok((&x + drop.apply(&ff, p)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `Z_t`, `(B, k+2, H)`.
    pub input_sequence: Tensor,
    /// `h_t`, read at the final (graph-token) position, `(B, H)`.
    pub state: Tensor,
}

/// Token MLP, user/positional embeddings, transformer encoder, graph-token
/// MLP and the per-POI output layer.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: ModelConfig,
    pub dims: ModelDims,
    pub poi_embeddings: Var,
    pub category_embeddings: Var,
    pub user_embeddings: Var,
    token_mlp: Mlp,
    pub positional: Var,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    graph_mlp: Mlp,
    graph_norm: LayerNorm,
    pub output_weights: Var,
    pub output_bias: Var,
    poi_category: Tensor,
    poi_coords: Tensor,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, dims: &ModelDims, vocab: &Vocabulary) -> Result<Self> {
        if cfg.hidden % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "hidden dimension {} is not divisible by {} heads",
                cfg.hidden, cfg.heads
            )));
        }
        let (p, h) = (dims.num_pois, cfg.hidden);
        let poi_embeddings = ps.normal("poi_embeddings", (p + 1, cfg.poi_dim), 0.1)?;
        let category_embeddings = ps.normal("category_embeddings", (dims.num_categories + 1, cfg.cat_dim), 0.1)?;
        let user_embeddings = ps.normal("user_embeddings", (dims.num_users + 1, h), 0.1)?;
        let token_mlp = Mlp::new(ps, "token_mlp", cfg.poi_dim + cfg.cat_dim + 2, h, h)?;
        let positional = ps.normal("positional", (dims.suffix_len + 2, h), 0.02)?;
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(ps, &format!("encoder.{i}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(ps, "encoder.final_norm", h)?;
        let graph_mlp = Mlp::new(ps, "graph_mlp", cfg.poi_dim, cfg.graph_hidden, h)?;
        let graph_norm = LayerNorm::new(ps, "graph_norm", h)?;
        let bound = 1.0 / (h as f64).sqrt();
        let output_weights = ps.uniform("output.weight", (p, h), bound)?;
        let output_bias = ps.constant("output.bias", p, 0.0)?;

        let device = ps.device().clone();
        let mut cats: Vec<u32> = (0..p as u32).map(|i| vocab.category_of(i)).collect();
        cats.push(vocab.pad_category());
        let poi_category = Tensor::from_vec(cats, p + 1, &device)?;
        let mut coords: Vec<f64> = Vec::with_capacity(2 * (p + 1));
        for i in 0..=p as u32 {
            coords.extend(vocab.standardized_coords(i));
        }
        let poi_coords = Tensor::from_vec(coords, (p + 1, 2), &device)?.to_dtype(ps.dtype())?;
        Ok(Backbone {
            cfg: cfg.clone(),
            dims: dims.clone(),
            poi_embeddings,
            category_embeddings,
            user_embeddings,
            token_mlp,
            positional,
            layers,
            final_norm,
            graph_mlp,
            graph_norm,
            output_weights,
            output_bias,
            poi_category,
            poi_coords,
        })
    }

    pub fn dtype(&self) -> DType {
        self.poi_embeddings.dtype()
    }

    pub fn device(&self) -> &Device {
        self.poi_embeddings.device()
    }

    /// `x_j = MLP_tok([e; a; lat; lon])` for a `(B·k)` index tensor, returned
    /// as `(B, k, H)`. Pad indices embed through the pad rows.
    pub fn tokenize(&self, suffix: &Tensor, batch: usize, drop: &mut Dropout) -> Result<Tensor> {
        let n = suffix.dims1()?;
        let max = suffix.max_all()?.to_scalar::<u32>()? as usize;
        if n > 0 && max > self.dims.num_pois {
            return Err(Error::InvalidInput(format!("POI index {max} outside vocabulary")));
        }
        let e = drop.apply(&self.poi_embeddings.as_tensor().index_select(suffix, 0)?, self.cfg.embedding_dropout)?;
        let cats = self.poi_category.index_select(suffix, 0)?;
        let a = drop.apply(&self.category_embeddings.as_tensor().index_select(&cats, 0)?, self.cfg.embedding_dropout)?;
        let coords = self.poi_coords.index_select(suffix, 0)?;
        let feats = Tensor::cat(&[&e, &a, &coords], 1)?;
        Ok(self.token_mlp.forward(&feats)?.reshape((batch, n / batch, self.cfg.hidden))?)
    }

    /// `g_t = LN(MLP_graph(G^(N)[s_t]))`, scaled by the curriculum ramp.
    /// A scale of zero yields the zero vector without touching the graph.
    pub fn graph_token(
        &self,
        propagator: &GraphPropagator,
        sources: &Tensor,
        scale: f64,
        drop: &mut Dropout,
    ) -> Result<Tensor> {
        let b = sources.dims1()?;
        if scale <= 0.0 || !self.cfg.use_graph {
            return Ok(Tensor::zeros((b, self.cfg.hidden), self.dtype(), self.device())?);
        }
        let table = self.poi_embeddings.as_tensor().narrow(0, 0, self.dims.num_pois)?;
        let g = propagator.propagate(&table, self.cfg.hops)?.propagated;
        let rows = g.index_select(sources, 0)?;
        let token = self.graph_norm.forward(&self.graph_mlp.forward(&rows)?)?;
        let token = drop.apply(&token, self.cfg.graph_dropout)?;
        Ok(if scale == 1.0 { token } else { (token * scale)? })
    }

    /// Encodes `[z_u; x_1..x_k; g_t] + P` with pad positions masked from
    /// attention. `token_mask` is `(B, k)` with 1 for real tokens.
    pub fn encode(
        &self,
        users: &Tensor,
        tokens: &Tensor,
        token_mask: &Tensor,
        graph_token: &Tensor,
        drop: &mut Dropout,
    ) -> Result<EncoderOutput> {
        let (b, k, h) = tokens.dims3()?;
        let user = self.user_embeddings.as_tensor().index_select(users, 0)?.unsqueeze(1)?;
        let z = Tensor::cat(&[&user, tokens, &graph_token.unsqueeze(1)?], 1)?
            .broadcast_add(self.positional.as_tensor())?;
        let ones = Tensor::ones((b, 1), self.dtype(), self.device())?;
        let keep = Tensor::cat(&[&ones, &token_mask.to_dtype(self.dtype())?, &ones], 1)?;
        let bias = ((keep - 1.0)? * -MASK_BIAS)?.reshape((b, 1, 1, k + 2))?;
        let mut x = z.clone();
        for layer in &self.layers {
            x = layer.forward(&x, &bias, self.cfg.heads, self.cfg.dropout, drop)?;
        }
        let x = self.final_norm.forward(&x)?;
        let state = x.narrow(1, k + 1, 1)?.squeeze(1)?.contiguous()?;
        debug_assert_eq!(state.dims2()?, (b, h));
        Ok(EncoderOutput {
            input_sequence: z,
            state,
        })
    }

    /// `ℓ^core(d) = w_d·h + b_d` over all training POIs (pad excluded).
    pub fn core_score(&self, state: &Tensor) -> Result<Tensor> {
        Ok(state
            .matmul(&self.output_weights.as_tensor().t()?)?
            .broadcast_add(self.output_bias.as_tensor())?)
    }

    pub fn output_dropout(&self, state: &Tensor, drop: &mut Dropout) -> Result<Tensor> {
        drop.apply(state, self.cfg.output_dropout)
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.poi_dim
    }

    pub fn hidden(&self) -> usize {
        self.cfg.hidden
    }

    pub fn poi_table(&self) -> &Tensor {
        self.poi_embeddings.as_tensor()
    }
}
