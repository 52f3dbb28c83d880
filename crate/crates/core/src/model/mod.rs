//! The full scorer: backbone core logits plus the revisit adjustment.

mod backbone;
mod batch;
pub mod nn;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, EncoderOutput};
pub use batch::{query_time_features, Batch, BatchContext};
pub use nn::{Dropout, Param, ParamGroup};

use crate::dataset::Vocabulary;
use crate::error::Result;
use crate::graph::{GraphPropagator, TransitionMatrix, TransitionStore};
use crate::revisit::{RevisitConfig, RevisitHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub poi_dim: usize,
    pub cat_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub embedding_dropout: f64,
    pub output_dropout: f64,
    pub graph_hidden: usize,
    pub graph_dropout: f64,
    /// Propagation hops `N`.
    pub hops: usize,
    /// Disable to ablate the graph token (always zero).
    pub use_graph: bool,
    /// Disable to ablate the revisit prior and calibration.
    pub use_history: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            poi_dim: 128,
            cat_dim: 32,
            hidden: 256,
            layers: 2,
            heads: 4,
            ff_dim: 512,
            dropout: 0.1,
            embedding_dropout: 0.3,
            output_dropout: 0.2,
            graph_hidden: 256,
            graph_dropout: 0.1,
            hops: 2,
            use_graph: true,
            use_history: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_pois: usize,
    pub num_users: usize,
    pub num_categories: usize,
    pub suffix_len: usize,
}

impl ModelDims {
    pub fn from_vocabulary(vocab: &Vocabulary, suffix_len: usize) -> Self {
        ModelDims {
            num_pois: vocab.num_pois(),
            num_users: vocab.num_users(),
            num_categories: vocab.num_categories(),
            suffix_len,
        }
    }
}

/// Which components are live for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stages {
    /// Graph-token multiplier in `[0, 1]`; zero substitutes the zero token.
    pub graph_scale: f64,
    pub prior: bool,
    pub calibration: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        graph_scale: 1.0,
        prior: true,
        calibration: true,
    };
    pub const BACKBONE: Stages = Stages {
        graph_scale: 0.0,
        prior: false,
        calibration: false,
    };
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `h_t` before output dropout.
    pub state: Tensor,
    /// `ℓ^core`, `(B, |P|)`.
    pub core: Tensor,
    /// Per-pair `R`, `(M)`.
    pub prior: Option<Tensor>,
    /// Per-pair `φ`, `(M, C)`.
    pub history: Option<Tensor>,
    pub gate: Option<Tensor>,
    pub correction: Option<Tensor>,
    /// `ℓ = ℓ^core + R + Δ`.
    pub logits: Tensor,
}

pub struct RecapModel {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub backbone: Backbone,
    pub revisit: RevisitHead,
    pub propagator: GraphPropagator,
    params: Vec<Param>,
}

impl RecapModel {
    pub fn new(
        config: &ModelConfig,
        revisit: &RevisitConfig,
        vocab: &Vocabulary,
        suffix_len: usize,
        store: &TransitionStore,
        dtype: DType,
        device: &Device,
        seed: u64,
    ) -> Result<Self> {
        let dims = ModelDims::from_vocabulary(vocab, suffix_len);
        let mut ps = nn::ParamStore::new(dtype, device, ChaCha8Rng::seed_from_u64(seed));
        let backbone = Backbone::new(&mut ps, config, &dims, vocab)?;
        let head = RevisitHead::new(&mut ps, revisit, config.hidden, config.poi_dim)?;
        let propagator = GraphPropagator::new(&TransitionMatrix::normalize(store), dtype, device)?;
        Ok(RecapModel {
            config: config.clone(),
            dims,
            backbone,
            revisit: head,
            propagator,
            params: ps.into_params(),
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.backbone.dtype()
    }

    pub fn device(&self) -> &Device {
        self.backbone.device()
    }

    pub fn forward(&self, batch: &Batch, stages: Stages, drop: &mut Dropout) -> Result<ForwardOutput> {
        let bb = &self.backbone;
        let tokens = bb.tokenize(&batch.suffix, batch.size, drop)?;
        let graph = bb.graph_token(&self.propagator, &batch.sources, stages.graph_scale, drop)?;
        let enc = bb.encode(&batch.users, &tokens, &batch.token_mask, &graph, drop)?;
        let core = bb.core_score(&bb.output_dropout(&enc.state, drop)?)?;

        let mut out = ForwardOutput {
            state: enc.state,
            logits: core.clone(),
            core,
            prior: None,
            history: None,
            gate: None,
            correction: None,
        };
        if !self.config.use_history || !stages.prior || batch.pairs.len == 0 {
            return Ok(out);
        }
        let pairs = &batch.pairs;
        let head = &self.revisit;
        let alpha = head.stat_vector(pairs)?;
        let prior = head.prior(&alpha)?;
        let mut adjust = prior.clone();
        if stages.calibration {
            let history = head.history_feature(&alpha, pairs)?;
            let query = head.query(&out.state, &batch.time_features)?;
            let cand_emb = bb.poi_table().index_select(&pairs.poi_t, 0)?;
            let cand = head.candidate_state(&cand_emb, &history)?;
            let gate = head.gate(&query.index_select(&pairs.instance_t, 0)?, &cand)?;
            let correction = head.correction(&gate, &prior)?;
            adjust = (&adjust + &correction)?;
            out.history = Some(history);
            out.gate = Some(gate);
            out.correction = Some(correction);
        }
        out.logits = (&out.core + scatter_pairs(&adjust, &pairs.flat_index, batch.size, self.dims.num_pois)?)?;
        out.prior = Some(prior);
        Ok(out)
    }

    /// Warm-holdout logits `sg[ℓ^core] + R + Δ` for the warm rows of the batch,
    /// with targets. Every backbone-derived input (core scores, `h_t`, POI
    /// embeddings) enters detached, so only revisit parameters see gradient.
    /// `None` when the batch has no warm rows or the prior is inactive.
    pub fn warm_logits(&self, batch: &Batch, out: &ForwardOutput) -> Result<Option<(Tensor, Vec<u32>)>> {
        let Some(prior) = &out.prior else { return Ok(None) };
        if batch.warm.is_empty() {
            return Ok(None);
        }
        let dev = self.device();
        let n_pois = self.dims.num_pois;
        let mut row_of = vec![u32::MAX; batch.size];
        for (i, &r) in batch.warm.iter().enumerate() {
            row_of[r as usize] = i as u32;
        }
        let mut pair_idx = Vec::new();
        let mut inst = Vec::new();
        let mut flat = Vec::new();
        for (p, (&row, &poi)) in batch.pairs.instance.iter().zip(&batch.pairs.poi).enumerate() {
            let w = row_of[row as usize];
            if w != u32::MAX {
                pair_idx.push(p as u32);
                inst.push(w);
                flat.push(w * n_pois as u32 + poi);
            }
        }
        let warm_rows = Tensor::from_vec(batch.warm.clone(), batch.warm.len(), dev)?;
        let core = out.core.detach().index_select(&warm_rows, 0)?;
        let targets = batch.warm.iter().map(|&r| batch.targets[r as usize]).collect();
        if pair_idx.is_empty() {
            return Ok(Some((core, targets)));
        }
        let m = pair_idx.len();
        let pair_idx = Tensor::from_vec(pair_idx, m, dev)?;
        let prior_w = prior.index_select(&pair_idx, 0)?;
        let adjust = match &out.history {
            Some(history) => {
                let head = &self.revisit;
                let state = out.state.detach().index_select(&warm_rows, 0)?;
                let time = batch.time_features.index_select(&warm_rows, 0)?;
                let query = head.query(&state, &time)?;
                let pois = batch.pairs.poi_t.index_select(&pair_idx, 0)?;
                let cand_emb = self.backbone.poi_table().detach().index_select(&pois, 0)?;
                let cand = head.candidate_state(&cand_emb, &history.index_select(&pair_idx, 0)?)?;
                let inst = Tensor::from_vec(inst, m, dev)?;
                let gate = head.gate(&query.index_select(&inst, 0)?, &cand)?;
                (&prior_w + head.correction(&gate, &prior_w)?)?
            }
            None => prior_w,
        };
        let flat = Tensor::from_vec(flat, m, dev)?;
        let logits = (core + scatter_pairs(&adjust, &flat, batch.warm.len(), n_pois)?)?;
        Ok(Some((logits, targets)))
    }
}

/// Scatters per-pair values into a dense `(rows, n)` buffer of zeros.
fn scatter_pairs(values: &Tensor, flat_index: &Tensor, rows: usize, n: usize) -> Result<Tensor> {
    let zeros = Tensor::zeros(rows * n, values.dtype(), values.device())?;
    Ok(zeros.index_add(flat_index, values, 0)?.reshape((rows, n))?)
}
