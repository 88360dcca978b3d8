//! Correlated model–data discrepancy with an exponential temporal kernel.
//!
//! Conditioning each datum on its predecessor alone is exact for the
//! exponential kernel, so the precision of the correlated component is
//! tridiagonal with closed-form entries. The group covariance
//! `Sigma = D + Q^{-1}` (D diagonal) is then handled in O(m) through the
//! factorization of `Q + D^{-1}` and the matrix-determinant lemma.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{SymTridiagonal, TridiagCholesky};
use crate::model::{positive, ErrorParams, ObservationGroup};

/// Gaps (in units of the length scale) above which `exp(-delta)` is treated
/// as exactly zero.
pub const UNDERFLOW_GAP: f64 = 37.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// delta_k = (t_{k+1} - t_k) / (60 * ell), times in seconds and ell in minutes.
pub fn normalized_gaps(times: &[f64], ell_minutes: f64) -> Result<Vec<f64>> {
    positive("ell", ell_minutes)?;
    let scale = 60.0 * ell_minutes;
    times
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let dt = w[1] - w[0];
            if !(dt > 0.0) {
                return Err(Error::NonIncreasingTimes {
                    group: "correlated error".into(),
                    index: k + 1,
                    time: w[1],
                    previous: w[0],
                });
            }
            Ok(dt / scale)
        })
        .collect()
}

/// e^{-2d} / (1 - e^{-2d})
fn tail_ratio(delta: f64) -> f64 {
    if delta > UNDERFLOW_GAP {
        0.0
    } else {
        1.0 / (2.0 * delta).exp_m1()
    }
}

/// -e^{-d} / (1 - e^{-2d})
fn off_ratio(delta: f64) -> f64 {
    if delta > UNDERFLOW_GAP {
        0.0
    } else {
        -0.5 / delta.sinh()
    }
}

/// log(1 - e^{-2d})
fn log_one_minus_corr2(delta: f64) -> f64 {
    if delta > UNDERFLOW_GAP {
        0.0
    } else {
        (-(-2.0 * delta).exp_m1()).ln()
    }
}

/// Tridiagonal precision of the correlated error process.
#[derive(Debug, Clone)]
pub struct TridiagonalPrecision {
    matrix: SymTridiagonal,
    marginal_sds: Vec<f64>,
    log_det: f64,
}

impl TridiagonalPrecision {
    pub fn matrix(&self) -> &SymTridiagonal {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        self.matrix.diag()
    }

    pub fn subdiag(&self) -> &[f64] {
        self.matrix.sub()
    }

    pub fn marginal_sds(&self) -> &[f64] {
        &self.marginal_sds
    }

    /// Closed-form log-determinant: -sum log sigma_k^2 - sum log(1 - e^{-2 delta_k}).
    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

/// The length-scale-dependent factors of the precision for fixed times.
/// Reusing one kernel across changes of the marginal variances skips all
/// transcendental work.
#[derive(Debug, Clone)]
pub struct XiKernel {
    ell: f64,
    tail: Vec<f64>,
    off: Vec<f64>,
    /// sum_k log(1 - e^{-2 delta_k})
    log_corr: f64,
}

impl XiKernel {
    pub fn new(times: &[f64], ell_minutes: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("correlated error needs at least one time"));
        }
        let gaps = normalized_gaps(times, ell_minutes)?;
        Ok(Self {
            ell: ell_minutes,
            tail: gaps.iter().map(|&d| tail_ratio(d)).collect(),
            off: gaps.iter().map(|&d| off_ratio(d)).collect(),
            log_corr: gaps.iter().map(|&d| log_one_minus_corr2(d)).sum(),
        })
    }

    pub fn len(&self) -> usize {
        self.off.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn precision(&self, marginal_vars: &[f64]) -> Result<TridiagonalPrecision> {
        let sum_ln: f64 = marginal_vars.iter().map(|v| v.ln()).sum();
        self.precision_with_log_sum(marginal_vars, sum_ln)
    }

    /// `sum_ln_vars` must be sum_k ln marginal_vars[k].
    pub fn precision_with_log_sum(&self, marginal_vars: &[f64], sum_ln_vars: f64) -> Result<TridiagonalPrecision> {
        let n = self.len();
        ensure_len("marginal variances", n, marginal_vars.len())?;
        for &v in marginal_vars {
            positive("correlated marginal variance", v)?;
        }
        let sds: Vec<f64> = marginal_vars.iter().map(|v| v.sqrt()).collect();
        let mut diag = vec![1.0; n];
        let mut sub = Vec::with_capacity(n - 1);
        for (k, (&t, &o)) in self.tail.iter().zip(&self.off).enumerate() {
            diag[k] += t;
            diag[k + 1] += t;
            sub.push(o / (sds[k] * sds[k + 1]));
        }
        for (dk, v) in diag.iter_mut().zip(marginal_vars) {
            *dk /= v;
        }
        Ok(TridiagonalPrecision {
            matrix: SymTridiagonal::new(diag, sub)?,
            marginal_sds: sds,
            log_det: -sum_ln_vars - self.log_corr,
        })
    }
}

/// Exact inverse of `Sigma_ij = sigma_i sigma_j exp(-|t_i - t_j| / ell)`.
pub fn build_xi_precision(
    times: &[f64],
    ell_minutes: f64,
    marginal_vars: &[f64],
) -> Result<TridiagonalPrecision> {
    ensure_len("marginal variances", times.len(), marginal_vars.len())?;
    XiKernel::new(times, ell_minutes)?.precision(marginal_vars)
}

/// Draw from N(0, Q^{-1}) by back-substitution against the Cholesky factor of Q.
pub fn sample_xi<R: Rng + ?Sized>(
    times: &[f64],
    ell_minutes: f64,
    marginal_vars: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let q = build_xi_precision(times, ell_minutes, marginal_vars)?;
    let chol = q.matrix().cholesky()?;
    let mut z: Vec<f64> = (0..times.len()).map(|_| rng.sample(StandardNormal)).collect();
    chol.solve_upper_in_place(&mut z);
    Ok(z)
}

#[derive(Debug, Clone)]
enum Structure {
    /// Sigma = D
    Diagonal { var: Vec<f64> },
    /// Sigma = Q^{-1}
    Correlated { q: SymTridiagonal },
    /// Sigma = D + Q^{-1}; `chol` factors Q + D^{-1}.
    Mixed {
        inv_var: Vec<f64>,
        q: SymTridiagonal,
        chol: TridiagCholesky,
    },
}

/// Factorized group covariance: applies `Sigma_g^{-1}` in O(m) and carries
/// `log |Sigma_g|`.
#[derive(Debug, Clone)]
pub struct GroupCovariance {
    structure: Structure,
    log_det: f64,
}

impl GroupCovariance {
    /// Factorizes the covariance implied by `params` for the given times
    /// (seconds) and prescribed variances.
    pub fn new(times: &[f64], prescribed: &[f64], params: &ErrorParams) -> Result<Self> {
        ensure_len("prescribed variances", times.len(), prescribed.len())?;
        params.validate()?;
        let kernel = if has_correlated_part(params) {
            Some(XiKernel::new(times, params.ell())?)
        } else {
            None
        };
        let sum_ln: f64 = prescribed.iter().map(|v| v.ln()).sum();
        Self::with_kernel(kernel.as_ref(), prescribed, sum_ln, params)
    }

    /// As [`GroupCovariance::new`], given the kernel for `params.ell()` (only
    /// needed when a correlated component is present) and
    /// `sum_ln_prescribed = sum_k ln prescribed[k]`.
    pub fn with_kernel(
        kernel: Option<&XiKernel>,
        prescribed: &[f64],
        sum_ln_prescribed: f64,
        params: &ErrorParams,
    ) -> Result<Self> {
        params.validate()?;
        let m = prescribed.len() as f64;
        let split = params.split_variances(prescribed);
        let uncorrelated_present = split.uncorrelated.iter().all(|v| *v > 0.0);
        let (ln_unc, ln_corr) = match *params {
            ErrorParams::CaseI { gamma, tau_xi, .. } => (m * gamma.ln() + sum_ln_prescribed, -m * tau_xi.ln()),
            ErrorParams::CaseII { gamma, rho, .. } => (
                m * ((1.0 - rho) * gamma).ln() + sum_ln_prescribed,
                m * (rho * gamma).ln() + sum_ln_prescribed,
            ),
        };
        match split.correlated {
            None => {
                for &v in &split.uncorrelated {
                    positive("uncorrelated variance", v)?;
                }
                Ok(Self {
                    structure: Structure::Diagonal {
                        var: split.uncorrelated,
                    },
                    log_det: ln_unc,
                })
            }
            Some(xi_var) => {
                let kernel = kernel.ok_or_else(|| Error::invalid("correlated component needs a kernel"))?;
                ensure_len("prescribed variances", kernel.len(), prescribed.len())?;
                if kernel.ell() != params.ell() {
                    return Err(Error::invalid("kernel length scale differs from the parameters"));
                }
                let xi = kernel.precision_with_log_sum(&xi_var, ln_corr)?;
                let log_det_q = xi.log_det();
                let q = xi.matrix;
                if !uncorrelated_present {
                    return Ok(Self {
                        structure: Structure::Correlated { q },
                        log_det: -log_det_q,
                    });
                }
                let inv_var: Vec<f64> = split.uncorrelated.iter().map(|v| 1.0 / v).collect();
                let chol = q.add_diagonal(&inv_var).cholesky()?;
                let log_det = chol.log_det() + ln_unc - log_det_q;
                Ok(Self {
                    structure: Structure::Mixed { inv_var, q, chol },
                    log_det,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match &self.structure {
            Structure::Diagonal { var } => var.len(),
            Structure::Correlated { q } | Structure::Mixed { q, .. } => q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Sigma^{-1} v, overwriting `v`.
    ///
    /// The mixed case uses `(D + Q^{-1})^{-1} = D^{-1} (Q + D^{-1})^{-1} Q`,
    /// algebraically the Woodbury form but free of its cancellation when the
    /// uncorrelated variance is small.
    pub fn solve_in_place(&self, v: &mut [f64]) {
        match &self.structure {
            Structure::Diagonal { var } => {
                for (x, s) in v.iter_mut().zip(var) {
                    *x /= s;
                }
            }
            Structure::Correlated { q } => {
                let y = q.matvec(v);
                v.copy_from_slice(&y);
            }
            Structure::Mixed { inv_var, q, chol } => {
                let mut y = q.matvec(v);
                chol.solve_in_place(&mut y);
                for ((x, yk), w) in v.iter_mut().zip(&y).zip(inv_var) {
                    *x = yk * w;
                }
            }
        }
    }

    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.solve_in_place(&mut out);
        out
    }

    /// Sigma^{-1} B, column by column, O(m * ncols).
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        out
    }

    /// r' Sigma^{-1} r
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        self.solve(r).iter().zip(r).map(|(a, b)| a * b).sum()
    }

    /// Gaussian log-density of residual `r` under N(0, Sigma).
    pub fn log_density(&self, r: &[f64]) -> f64 {
        let m = r.len() as f64;
        -0.5 * m * LN_2PI - 0.5 * self.log_det - 0.5 * self.quad_form(r)
    }
}

pub fn has_correlated_part(params: &ErrorParams) -> bool {
    match *params {
        ErrorParams::CaseI { tau_xi, .. } => tau_xi.is_finite(),
        ErrorParams::CaseII { rho, .. } => rho > 0.0,
    }
}

/// Kept for callers that want the factorization and log-determinant together.
pub fn solve_and_logdet(group: &ObservationGroup, params: &ErrorParams) -> Result<(GroupCovariance, f64)> {
    let cov = GroupCovariance::new(group.times(), group.variances(), params)?;
    let ld = cov.log_det();
    Ok((cov, ld))
}

/// Z - Z0 - Psi alpha - A beta
pub fn residual(group: &ObservationGroup, alpha: &DVector<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_len("alpha", group.response().ncols(), alpha.len())?;
    ensure_len("beta", group.n_covariates(), beta.len())?;
    let mut r = group.values() - group.prior_mean() - group.response() * alpha;
    if !beta.is_empty() {
        r -= group.covariates() * beta;
    }
    Ok(r)
}

/// Group log-likelihood log p(Z_g | alpha, beta_g, theta_g).
pub fn group_loglik(
    group: &ObservationGroup,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    params: &ErrorParams,
) -> Result<f64> {
    let r = residual(group, alpha, beta)?;
    let cov = GroupCovariance::new(group.times(), group.variances(), params)?;
    Ok(cov.log_density(r.as_slice()))
}
