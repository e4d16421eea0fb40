//! Spectral graph convolution over the fixed mesh connectivity.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Bound, Dense, Graph, ParamStore, Real, SparseMatrix, Var};
use crate::error::{Error, Result};
use crate::LEAKY_SLOPE;

/// One block `P·(X·W) + b`.
pub fn gcn_layer<T: Real>(
    g: &mut Graph<T>,
    propagation: &Arc<SparseMatrix>,
    x: Var,
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let n = g.shape(x)[0];
    if propagation.n_rows() != n {
        return Err(Error::contract(
            "gcn_layer",
            format!(
                "propagation is {}x{} but features have {n} rows",
                propagation.n_rows(),
                propagation.n_cols()
            ),
        ));
    }
    let xw = g.matmul(x, weight)?;
    let pxw = g.sparse_matmul(propagation, xw)?;
    g.add(pxw, bias)
}

#[derive(Debug, Clone)]
pub struct GcnParams {
    pub blocks: Vec<Dense>,
}

impl GcnParams {
    /// `widths = [d_in, d_1, ..., d_out]`.
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        widths: &[usize],
    ) -> Self {
        let blocks = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(store, rng, &format!("{prefix}.{i}"), w[0], w[1], 1.0))
            .collect();
        Self { blocks }
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.d_out)
    }
}

/// Stacked blocks with leaky ReLU between them; the last block is activated
/// only when `activate_last` is set.
pub fn gcn_forward<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    params: &GcnParams,
    propagation: &Arc<SparseMatrix>,
    x: Var,
    activate_last: bool,
) -> Result<Var> {
    let mut h = x;
    let last = params.blocks.len().saturating_sub(1);
    for (i, block) in params.blocks.iter().enumerate() {
        h = gcn_layer(g, propagation, h, bound[block.weight], bound[block.bias])?;
        if i < last || activate_last {
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
    }
    Ok(h)
}
