//! Observation containers.

use serde::Serialize;

use crate::error::{Error, Result};

/// Ordered collection of observation points with provenance metadata.
///
/// Coordinates are stored flat, `dim` values per observation, in insertion
/// order. Provenance is a free-form note recording where the draws came from
/// (file path, generator name and seed, ...).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    data: Vec<f64>,
    dim: usize,
    provenance: String,
}

impl SampleSet {
    pub fn new(data: Vec<f64>, dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("sample dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "flat length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate {bad}")));
        }
        Ok(Self {
            data,
            dim,
            provenance: provenance.into(),
        })
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalars(xs: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        Self::new(xs, 1, provenance)
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Coordinates of a one-dimensional set.
    pub fn scalars(&self) -> Result<&[f64]> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected one-dimensional samples, got dim {}",
                self.dim
            )));
        }
        Ok(&self.data)
    }

    /// Returns a copy with observations sorted lexicographically by coordinates.
    ///
    /// The estimators in this crate are permutation-invariant, so fits store
    /// their nodes in this canonical order.
    pub fn sorted(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.point(a)
                .partial_cmp(self.point(b))
                .expect("coordinates validated finite")
        });
        let mut data = Vec::with_capacity(self.data.len());
        for i in idx {
            data.extend_from_slice(self.point(i));
        }
        Self {
            data,
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }
}
