//! Posterior summaries: flux totals, scores, holdout predictions and chain
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::model::{BasisLibrary, ErrorParams, ModelState, ObservationGroup, RegionType};
use crate::stats::normal_cdf;

/// Nearest-rank quantile of sorted data: element ceil(p n), 1-based.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn quantile(sample: &[f64], p: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor n - 1; 0 for a single value).
fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Stacks the alpha vectors of a chain into an n_samples x r matrix.
pub fn alpha_matrix(states: &[ModelState]) -> DMatrix<f64> {
    let r = states.first().map_or(0, |s| s.alpha.len());
    DMatrix::from_fn(states.len(), r, |i, j| states[i].alpha[j])
}

/// A set of region-period cells to be totalled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluxScope {
    pub name: String,
    pub regions: Vec<usize>,
    pub periods: Vec<usize>,
}

impl FluxScope {
    pub fn global(basis: &BasisLibrary) -> Self {
        Self {
            name: "global".into(),
            regions: (0..basis.n_regions()).collect(),
            periods: (0..basis.n_periods()).collect(),
        }
    }

    pub fn of_type(basis: &BasisLibrary, kind: RegionType) -> Self {
        Self {
            name: match kind {
                RegionType::Land => "land".into(),
                RegionType::Ocean => "ocean".into(),
            },
            regions: (0..basis.n_regions()).filter(|&j| basis.region_types()[j] == kind).collect(),
            periods: (0..basis.n_periods()).collect(),
        }
    }

    pub fn cell(basis: &BasisLibrary, region: usize, period: usize) -> Self {
        Self {
            name: format!("{}_p{}", basis.region_names()[region], period + 1),
            regions: vec![region],
            periods: vec![period],
        }
    }

    /// Every single region-period cell, in basis order.
    pub fn all_cells(basis: &BasisLibrary) -> Vec<Self> {
        (0..basis.len())
            .map(|c| {
                let (j, k) = basis.region_period(c);
                Self::cell(basis, j, k)
            })
            .collect()
    }

    /// Basis columns covered by the scope.
    pub fn columns(&self, basis: &BasisLibrary) -> Result<Vec<usize>> {
        if self.regions.is_empty() || self.periods.is_empty() {
            return Err(Error::invalid(format!("flux scope '{}' is empty", self.name)));
        }
        let mut cols = Vec::new();
        for &j in &self.regions {
            for &k in &self.periods {
                if j >= basis.n_regions() || k >= basis.n_periods() {
                    return Err(Error::invalid(format!(
                        "flux scope '{}' refers to region {j}, period {k} outside the basis",
                        self.name
                    )));
                }
                cols.push(basis.index(j, k));
            }
        }
        Ok(cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxAggregate {
    pub scope: String,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

impl FluxAggregate {
    fn from_samples(scope: String, samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            scope,
            mean: mean(&samples),
            sd: sd(&samples),
            q025: quantile_sorted(&sorted, 0.025),
            q975: quantile_sorted(&sorted, 0.975),
            samples,
        }
    }
}

/// Per sample: sum over the scope of prior integral + alpha * basis integral.
pub fn aggregate_flux(alpha_samples: &DMatrix<f64>, basis: &BasisLibrary, scope: &FluxScope) -> Result<FluxAggregate> {
    ensure_len("alpha columns", basis.len(), alpha_samples.ncols())?;
    if alpha_samples.nrows() == 0 {
        return Err(Error::invalid("no samples to aggregate"));
    }
    let cols = scope.columns(basis)?;
    let prior: f64 = cols.iter().map(|&c| basis.prior_flux_integrals()[c]).sum();
    let samples = alpha_samples
        .row_iter()
        .map(|row| prior + cols.iter().map(|&c| row[c] * basis.flux_integrals()[c]).sum::<f64>())
        .collect();
    Ok(FluxAggregate::from_samples(scope.name.clone(), samples))
}

/// Sample CRPS: mean |X - y| - 0.5 mean_{i,i'} |X_i - X_i'|.
pub fn crps(samples: &[f64], y: f64) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("CRPS needs at least two samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let abs_dev = s.iter().map(|x| (x - y).abs()).sum::<f64>() / n as f64;
    // sum_{i,i'} |x_i - x_i'| = 2 sum_i (2i - n - 1) x_(i), i 1-based
    let pair: f64 = s
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x)
        .sum::<f64>()
        * 2.0
        / (n * n) as f64;
    Ok(abs_dev - 0.5 * pair)
}

pub fn rmse(estimates: &[f64], truth: &[f64]) -> f64 {
    let se: f64 = estimates.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    (se / estimates.len() as f64).sqrt()
}

/// Predictive summaries for a holdout group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutPrediction {
    pub group: String,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Group-constant error variance added to every prediction.
    pub error_variance: f64,
}

/// Mean and sample sd of (prediction - observation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrors {
    pub mean: f64,
    pub sd: f64,
    pub mse: f64,
    pub coverage: f64,
}

impl HoldoutPrediction {
    pub fn errors(&self, observed: &[f64]) -> Result<PredictionErrors> {
        ensure_len("holdout observations", self.mean.len(), observed.len())?;
        let e: Vec<f64> = self.mean.iter().zip(observed).map(|(p, o)| p - o).collect();
        let covered = observed
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(o, (l, u))| l <= o && o <= u)
            .count();
        Ok(PredictionErrors {
            mean: mean(&e),
            sd: sd(&e),
            mse: e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64,
            coverage: covered as f64 / e.len() as f64,
        })
    }
}

/// Posterior predictive for a holdout group, with its bias set to zero and
/// a fully correlated error whose variance is the mean reported variance.
/// The 2.5% and 97.5% points solve the Gaussian-mixture CDF exactly.
pub fn predict_holdout(alpha_samples: &DMatrix<f64>, group: &ObservationGroup) -> Result<HoldoutPrediction> {
    ensure_len("holdout response columns", alpha_samples.ncols(), group.response().ncols())?;
    if alpha_samples.nrows() == 0 {
        return Err(Error::invalid("no samples for prediction"));
    }
    let var = mean(group.variances());
    predict_with_variance(alpha_samples, group, var)
}

pub fn predict_with_variance(
    alpha_samples: &DMatrix<f64>,
    group: &ObservationGroup,
    error_variance: f64,
) -> Result<HoldoutPrediction> {
    crate::model::positive("predictive error variance", error_variance)?;
    let sd = error_variance.sqrt();
    // m x n_samples predicted means
    let means = group.response() * alpha_samples.transpose();
    let m = group.len();
    let mut out = HoldoutPrediction {
        group: group.id().to_string(),
        mean: Vec::with_capacity(m),
        lower: Vec::with_capacity(m),
        upper: Vec::with_capacity(m),
        error_variance,
    };
    for i in 0..m {
        let z0 = group.prior_mean()[i];
        let row: Vec<f64> = means.row(i).iter().map(|v| v + z0).collect();
        out.mean.push(mean(&row));
        out.lower.push(mixture_quantile(&row, sd, 0.025));
        out.upper.push(mixture_quantile(&row, sd, 0.975));
    }
    Ok(out)
}

/// Quantile of an equal-weight mixture of N(mu_i, sd^2) by bisection.
fn mixture_quantile(mus: &[f64], sd: f64, p: f64) -> f64 {
    let cdf = |x: f64| mus.iter().map(|mu| normal_cdf((x - mu) / sd)).sum::<f64>() / mus.len() as f64;
    let lo0 = mus.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * sd;
    let hi0 = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * sd;
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Effective sample size with Geyer's initial positive sequence: sums of
/// adjacent autocorrelation pairs are accumulated until the first negative
/// pair. `None` for a constant chain.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(var > 1e-300 * (1.0 + m * m)) {
        return None;
    }
    let acf = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 } else { acf(2 * k) } + acf(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    Some(n as f64 / tau.max(1.0 / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    /// `None` when the trace is constant.
    pub ess: Option<f64>,
}

pub fn summarize_trace(name: &str, trace: &[f64]) -> ParameterSummary {
    let mut s = trace.to_vec();
    s.sort_by(f64::total_cmp);
    ParameterSummary {
        name: name.to_string(),
        mean: mean(trace),
        sd: sd(trace),
        q025: quantile_sorted(&s, 0.025),
        q500: quantile_sorted(&s, 0.5),
        q975: quantile_sorted(&s, 0.975),
        ess: effective_sample_size(trace),
    }
}

/// Named scalar traces of every parameter in a chain.
pub fn parameter_traces(states: &[ModelState], basis: &BasisLibrary, group_ids: &[String]) -> Vec<(String, Vec<f64>)> {
    let Some(first) = states.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let trace = |f: &dyn Fn(&ModelState) -> f64| states.iter().map(f).collect::<Vec<f64>>();
    for c in 0..first.alpha.len() {
        let (j, k) = basis.region_period(c);
        out.push((format!("alpha_{}_p{}", basis.region_names()[j], k + 1), trace(&|s| s.alpha[c])));
    }
    for (g, b) in first.beta.iter().enumerate() {
        for i in 0..b.len() {
            out.push((format!("beta_{}_{}", group_ids[g], i + 1), trace(&|s| s.beta[g][i])));
        }
    }
    for j in 0..first.kappa.len() {
        out.push((format!("kappa_{}", basis.region_names()[j]), trace(&|s| s.kappa[j])));
    }
    for j in 0..first.tau_w.len() {
        out.push((format!("tau_w_{}", basis.region_names()[j]), trace(&|s| s.tau_w[j])));
    }
    for (g, p) in first.error_params.iter().enumerate() {
        let id = &group_ids[g];
        out.push((format!("gamma_{id}"), trace(&|s| s.error_params[g].gamma())));
        match p {
            ErrorParams::CaseII { .. } => out.push((
                format!("rho_{id}"),
                trace(&|s| match s.error_params[g] {
                    ErrorParams::CaseII { rho, .. } => rho,
                    ErrorParams::CaseI { .. } => f64::NAN,
                }),
            )),
            ErrorParams::CaseI { .. } => out.push((
                format!("tau_xi_{id}"),
                trace(&|s| match s.error_params[g] {
                    ErrorParams::CaseI { tau_xi, .. } => tau_xi,
                    ErrorParams::CaseII { .. } => f64::NAN,
                }),
            )),
        }
        out.push((format!("ell_{id}"), trace(&|s| s.error_params[g].ell())));
    }
    out
}

pub fn chain_diagnostics(states: &[ModelState], basis: &BasisLibrary, group_ids: &[String]) -> Vec<ParameterSummary> {
    parameter_traces(states, basis, group_ids)
        .iter()
        .map(|(name, t)| summarize_trace(name, t))
        .collect()
}

/// Posterior mean of alpha.
pub fn posterior_mean_alpha(alpha_samples: &DMatrix<f64>) -> DVector<f64> {
    alpha_samples.row_mean().transpose()
}
