//! Gradient-noise statistics over a finite training set.
//!
//! All expectations are uniform over the given per-sample gradients. Sums
//! run in sample order, so results are bit-reproducible.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::params::BlockLayout;
use crate::scalar::{lit, Float};
use crate::symmetry::SymmetryDescriptor;

/// Full covariances are only assembled up to this many parameters.
pub const FULL_COVARIANCE_LIMIT: usize = 4096;

/// Per-sample flattened gradients, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T: Float> {
    layout: BlockLayout,
    rows: DMatrix<T>,
}

impl<T: Float> GradientSet<T> {
    pub fn new(layout: BlockLayout, rows: DMatrix<T>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::NoSamples);
        }
        if rows.ncols() != layout.dim() {
            return Err(Error::Dimension { expected: layout.dim(), found: rows.ncols() });
        }
        Ok(Self { layout, rows })
    }

    /// Single-block layout named `"theta"` over plain vectors.
    pub fn from_vectors(grads: &[DVector<T>]) -> Result<Self> {
        let first = grads.first().ok_or(Error::NoSamples)?;
        let p = first.len();
        if let Some(bad) = grads.iter().find(|g| g.len() != p) {
            return Err(Error::Dimension { expected: p, found: bad.len() });
        }
        let rows = DMatrix::from_fn(grads.len(), p, |i, j| grads[i][j]);
        Self::new(BlockLayout::new([("theta", p, 1)])?, rows)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn rows(&self) -> &DMatrix<T> {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<T> {
        self.rows.row(i).transpose()
    }

    pub fn mean(&self) -> DVector<T> {
        self.rows.row_mean().transpose()
    }

    /// Rows minus their mean.
    pub fn centered(&self) -> DMatrix<T> {
        let mean = self.rows.row_mean();
        let mut c = self.rows.clone();
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseStats<T: Float> {
    Full {
        sigma: DMatrix<T>,
        mean: DVector<T>,
        n: usize,
    },
    /// `Tr[ΣA]` keyed by symmetry id.
    TraceOnly { traces: BTreeMap<String, T>, n: usize },
}

impl<T: Float> NoiseStats<T> {
    pub fn n(&self) -> usize {
        match self {
            NoiseStats::Full { n, .. } | NoiseStats::TraceOnly { n, .. } => *n,
        }
    }

    pub fn trace(&self, desc: &SymmetryDescriptor<T>) -> Result<T> {
        match self {
            NoiseStats::Full { sigma, .. } => {
                if sigma.nrows() != desc.dim() {
                    return Err(Error::Dimension { expected: desc.dim(), found: sigma.nrows() });
                }
                Ok(desc.trace_with(sigma))
            }
            NoiseStats::TraceOnly { traces, .. } => traces
                .get(desc.id())
                .copied()
                .ok_or_else(|| Error::Config(format!("no noise trace recorded for symmetry {:?}", desc.id()))),
        }
    }
}

fn check_dim<T: Float>(grads: &GradientSet<T>, desc: &SymmetryDescriptor<T>) -> Result<()> {
    if grads.dim() != desc.dim() {
        return Err(Error::Dimension { expected: desc.dim(), found: grads.dim() });
    }
    Ok(())
}

/// `Σ = mean (g − ḡ)(g − ḡ)ᵀ`, symmetrized.
pub fn estimate_full_covariance<T: Float>(grads: &GradientSet<T>) -> Result<NoiseStats<T>> {
    if grads.n() < 2 {
        return Err(Error::Config("covariance needs at least two gradients".into()));
    }
    if grads.dim() > FULL_COVARIANCE_LIMIT {
        return Err(Error::Config(format!(
            "full covariance over {} parameters exceeds the limit of {FULL_COVARIANCE_LIMIT}; use trace-only statistics",
            grads.dim()
        )));
    }
    let c = grads.centered();
    let sigma = c.tr_mul(&c) / lit::<T>(grads.n() as f64);
    let sigma = (&sigma + sigma.transpose()) * lit::<T>(0.5);
    Ok(NoiseStats::Full { sigma, mean: grads.mean(), n: grads.n() })
}

/// `Tr[ΣA] = mean (g − ḡ)ᵀ A (g − ḡ)` without forming Σ.
pub fn trace_sigma_a<T: Float>(grads: &GradientSet<T>, desc: &SymmetryDescriptor<T>) -> Result<T> {
    check_dim(grads, desc)?;
    let q = desc.quad_rows(&grads.centered());
    Ok(q.sum() / lit::<T>(grads.n() as f64))
}

pub fn trace_only<T: Float>(grads: &GradientSet<T>, descs: &[SymmetryDescriptor<T>]) -> Result<NoiseStats<T>> {
    let mut traces = BTreeMap::new();
    let c = grads.centered();
    let inv_n = T::one() / lit::<T>(grads.n() as f64);
    for d in descs {
        check_dim(grads, d)?;
        traces.insert(d.id().to_string(), d.quad_rows(&c).sum() * inv_n);
    }
    Ok(NoiseStats::TraceOnly { traces, n: grads.n() })
}

/// Covariance restricted to one block's coordinates.
pub fn block_covariance<T: Float>(grads: &GradientSet<T>, block: &str) -> Result<DMatrix<T>> {
    let info = grads.layout().get(block)?;
    let c = grads.centered();
    let sub = c.columns(info.offset, info.len());
    let sigma = sub.tr_mul(&sub) / lit::<T>(grads.n() as f64);
    Ok((&sigma + sigma.transpose()) * lit::<T>(0.5))
}
