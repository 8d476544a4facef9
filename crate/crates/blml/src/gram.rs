//! Kernel Gram matrix over observation nodes.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::sinc::{sinc_kernel_nd, CutoffFrequency};

/// Dense materialization refuses above this node count; the iterative solver
/// paths evaluate kernel entries on the fly instead.
pub const DENSE_NODE_LIMIT: usize = 8192;

/// Symmetric matrix of pairwise kernel values between nodes.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    values: Array2<f64>,
    nodes: SampleSet,
    cutoff: CutoffFrequency,
}

/// Builds the dense Gram matrix of `sinc_kernel_nd` over all node pairs.
///
/// The upper triangle is computed and mirrored, so the result is bitwise
/// symmetric; the diagonal is exactly the cut-off product.
pub fn build_gram(nodes: &SampleSet, cutoff: &CutoffFrequency) -> Result<GramMatrix> {
    if nodes.is_empty() {
        return Err(Error::InvalidInput("gram matrix needs at least one node".into()));
    }
    if nodes.dim() != cutoff.dim() {
        return Err(Error::DimensionMismatch(format!(
            "nodes have dim {}, cut-off has dim {}",
            nodes.dim(),
            cutoff.dim()
        )));
    }
    let n = nodes.len();
    if n > DENSE_NODE_LIMIT {
        return Err(Error::TooLarge {
            what: "dense gram matrix",
            got: n,
            max: DENSE_NODE_LIMIT,
        });
    }
    let diag = cutoff.product();
    let dim = nodes.dim();
    let mut values = Array2::zeros((n, n));
    let mut disp = vec![0.0; dim];
    for i in 0..n {
        values[(i, i)] = diag;
        let pi = nodes.point(i);
        for j in (i + 1)..n {
            let pj = nodes.point(j);
            for (k, d) in disp.iter_mut().enumerate() {
                *d = pi[k] - pj[k];
            }
            let s = sinc_kernel_nd(&disp, cutoff);
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    Ok(GramMatrix {
        values,
        nodes: nodes.clone(),
        cutoff: cutoff.clone(),
    })
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn nodes(&self) -> &SampleSet {
        &self.nodes
    }

    pub fn cutoff(&self) -> &CutoffFrequency {
        &self.cutoff
    }

    /// Kernel value at zero displacement (every diagonal entry).
    pub fn diagonal(&self) -> f64 {
        self.cutoff.product()
    }

    /// `out = S v` over the dense entries.
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(out.len(), n);
        let flat = self.values.as_slice().expect("standard layout");
        for (i, o) in out.iter_mut().enumerate() {
            let row = &flat[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (s, x) in row.iter().zip(v) {
                acc += s * x;
            }
            *o = acc;
        }
    }

    /// Quadratic form `a^T S b`.
    pub fn quadratic_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut tmp = vec![0.0; self.len()];
        self.matvec(b, &mut tmp);
        a.iter().zip(&tmp).map(|(x, y)| x * y).sum()
    }
}
