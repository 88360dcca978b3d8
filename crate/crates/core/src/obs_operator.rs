//! Column-averaging operator for total-column retrievals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Per-sounding retrieval kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalKernel {
    weights: Vec<f64>,
    averaging_kernel: Vec<f64>,
    prior_profile: Vec<f64>,
    prior_column: f64,
}

impl RetrievalKernel {
    /// `weights` must sum to one; the prior column is derived from them.
    pub fn new(weights: Vec<f64>, averaging_kernel: Vec<f64>, prior_profile: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::invalid("retrieval kernel needs at least one level"));
        }
        ensure_len("averaging kernel", n, averaging_kernel.len())?;
        ensure_len("prior profile", n, prior_profile.len())?;
        if weights
            .iter()
            .chain(&averaging_kernel)
            .chain(&prior_profile)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("retrieval kernel entries must be finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "quadrature weights sum to {total}, expected 1"
            )));
        }
        let prior_column = dot(&weights, &prior_profile);
        Ok(Self {
            weights,
            averaging_kernel,
            prior_profile,
            prior_column,
        })
    }

    /// Uniform weights and unit averaging kernel.
    pub fn identity(prior_profile: Vec<f64>) -> Result<Self> {
        let n = prior_profile.len();
        Self::new(vec![1.0 / n as f64; n], vec![1.0; n], prior_profile)
    }

    /// Rebuilds a kernel read from disk and checks the stored prior column.
    pub fn with_prior_column(
        weights: Vec<f64>,
        averaging_kernel: Vec<f64>,
        prior_profile: Vec<f64>,
        prior_column: f64,
    ) -> Result<Self> {
        let k = Self::new(weights, averaging_kernel, prior_profile)?;
        if (k.prior_column - prior_column).abs() > WEIGHT_SUM_TOL * (1.0 + prior_column.abs()) {
            return Err(Error::invalid(format!(
                "prior column {prior_column} inconsistent with weights and prior profile ({})",
                k.prior_column
            )));
        }
        Ok(k)
    }

    pub fn n_levels(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn averaging_kernel(&self) -> &[f64] {
        &self.averaging_kernel
    }

    pub fn prior_profile(&self) -> &[f64] {
        &self.prior_profile
    }

    pub fn prior_column(&self) -> f64 {
        self.prior_column
    }

    /// c ⊙ a
    pub fn gradient(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.averaging_kernel)
            .map(|(c, a)| c * a)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Y0rc + sum_k c_k a_k (profile_k - Y0r_k)
pub fn column_average(kernel: &RetrievalKernel, profile: &[f64]) -> Result<f64> {
    ensure_len("profile levels", kernel.n_levels(), profile.len())?;
    let dev: f64 = kernel
        .gradient()
        .iter()
        .zip(profile)
        .zip(&kernel.prior_profile)
        .map(|((g, y), y0)| g * (y - y0))
        .sum();
    Ok(kernel.prior_column + dev)
}

/// One row of the column-averaged response matrix from level profiles of
/// each basis response (`n_levels x r`). Responses are perturbations, so only
/// the deviation term applies.
pub fn apply_to_basis(kernel: &RetrievalKernel, basis_profiles: &DMatrix<f64>) -> Result<DVector<f64>> {
    ensure_len("basis profile levels", kernel.n_levels(), basis_profiles.nrows())?;
    let g = DVector::from_vec(kernel.gradient());
    Ok(basis_profiles.tr_mul(&g))
}
