use candle_core::{DType, Device, Tensor};

use super::TransitionMatrix;
use crate::error::{Error, Result};

/// Sparse `A·G` as a gather/scatter pair over the CSR edge list, so gradients
/// flow back into the embedding table.
#[derive(Debug, Clone)]
pub struct GraphPropagator {
    num_pois: usize,
    src: Tensor,
    dst: Tensor,
    weights: Tensor,
    nnz: usize,
}

#[derive(Debug, Clone)]
pub struct PropagationState {
    pub hops: usize,
    /// `G^(N)`, `|P| × d`.
    pub propagated: Tensor,
}

impl GraphPropagator {
    pub fn new(matrix: &TransitionMatrix, dtype: DType, device: &Device) -> Result<Self> {
        let mut src = Vec::with_capacity(matrix.nnz());
        for s in 0..matrix.n {
            src.extend(std::iter::repeat_n(s as u32, matrix.row_ptr[s + 1] - matrix.row_ptr[s]));
        }
        let nnz = matrix.nnz();
        Ok(GraphPropagator {
            num_pois: matrix.n,
            src: Tensor::from_vec(src, nnz, device)?,
            dst: Tensor::from_vec(matrix.cols.clone(), nnz, device)?,
            weights: Tensor::from_vec(matrix.vals.clone(), (nnz, 1), device)?.to_dtype(dtype)?,
            nnz,
        })
    }

    pub fn num_pois(&self) -> usize {
        self.num_pois
    }

    /// One left-multiplication by `A`.
    pub fn step(&self, g: &Tensor) -> Result<Tensor> {
        let (rows, dim) = g.dims2()?;
        if rows != self.num_pois {
            return Err(Error::Shape(format!(
                "propagation input has {rows} rows, graph has {} nodes",
                self.num_pois
            )));
        }
        let zeros = Tensor::zeros((rows, dim), g.dtype(), g.device())?;
        if self.nnz == 0 {
            return Ok(zeros);
        }
        let msgs = g.index_select(&self.dst, 0)?.broadcast_mul(&self.weights)?;
        Ok(zeros.index_add(&self.src, &msgs, 0)?)
    }

    /// `G^(N) = A^N · E`; `hops = 0` returns the embeddings unchanged.
    pub fn propagate(&self, embeddings: &Tensor, hops: usize) -> Result<PropagationState> {
        let mut g = embeddings.clone();
        if g.dims2()?.0 != self.num_pois {
            return Err(Error::Shape(format!(
                "embedding table has {} rows, graph has {} nodes",
                g.dims2()?.0,
                self.num_pois
            )));
        }
        for _ in 0..hops {
            g = self.step(&g)?;
        }
        Ok(PropagationState {
            hops,
            propagated: g,
        })
    }
}
