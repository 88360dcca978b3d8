//! Synthetic-truth experiments on the transport surrogate: truth and data
//! simulation, the four model configurations, and flux scoring.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::markov::sample_xi;
use crate::model::{BasisLibrary, ErrorCase, ErrorParams, GroupInput, ObservationGroup, Role};
use crate::obs_operator::RetrievalKernel;
use crate::sampler::{run_chain, ChainOutput, ModelSwitches, Priors, SamplerConfig};
use crate::summary::{alpha_matrix, crps, quantile_sorted, rmse};
use crate::transport::{make_response_functions, SurrogateBasisSpec, SurrogateGrid, TrackGenerator, TrackPoint, TrackSpec, SECONDS_PER_HOUR};

/// Layout of the desk-scale experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskDesign {
    pub grid: SurrogateGrid,
    pub lon_bands: usize,
    pub lat_bands: usize,
    pub n_ocean: usize,
    pub n_periods: usize,
    pub steps_per_period: usize,
    pub track: TrackGenerator,
    pub background_ppm: f64,
    /// Mean prescribed variance; individual values vary by +-40% along passes.
    pub variance_ppm2: f64,
    /// Levels in the pseudo-retrieval kernels.
    pub n_levels: usize,
    /// Fixed-site holdout locations, in cell coordinates.
    pub holdout_sites: Vec<(f64, f64)>,
    pub holdout_cadence_s: f64,
}

impl Default for DeskDesign {
    fn default() -> Self {
        Self {
            grid: SurrogateGrid::default(),
            lon_bands: 4,
            lat_bands: 2,
            n_ocean: 2,
            n_periods: 6,
            steps_per_period: 48,
            track: TrackGenerator::default(),
            background_ppm: 400.0,
            variance_ppm2: 1.0,
            n_levels: 5,
            holdout_sites: vec![(4.5, 4.5), (22.0, 12.5), (30.5, 7.0)],
            holdout_cadence_s: 3600.0,
        }
    }
}

impl DeskDesign {
    pub fn horizon_s(&self) -> f64 {
        (self.n_periods * self.steps_per_period) as f64 * self.grid.dt_hours * SECONDS_PER_HOUR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OsseSpec {
    pub alpha_variance: f64,
    /// Bias coefficients on the standardized covariates of every training group.
    pub beta_true: Vec<f64>,
    pub gamma_true: f64,
    pub rho_true: f64,
    pub ell_true: f64,
    /// Replicate r uses seed `base_seed + r`.
    pub base_seed: u64,
    pub n_replicates: usize,
    /// Leave regions with a fixed prior at alpha = 0 in the truth.
    pub exclude_fixed_regions: bool,
    pub design: DeskDesign,
}

impl Default for OsseSpec {
    fn default() -> Self {
        Self {
            alpha_variance: 0.09,
            beta_true: vec![0.3, 0.028, 0.6],
            gamma_true: 1.25,
            rho_true: 0.8,
            ell_true: 1.0,
            base_seed: 20_240_101,
            n_replicates: 20,
            exclude_fixed_regions: false,
            design: DeskDesign::default(),
        }
    }
}

impl OsseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_variance >= 0.0 && self.alpha_variance.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "truth alpha variance",
                value: self.alpha_variance,
                reason: "must be non-negative",
            });
        }
        if !(self.gamma_true >= 0.0 && self.gamma_true.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "true gamma",
                value: self.gamma_true,
                reason: "must be non-negative",
            });
        }
        if !(0.0..=1.0).contains(&self.rho_true) {
            return Err(Error::InvalidParameter {
                name: "true rho",
                value: self.rho_true,
                reason: "must lie in [0, 1]",
            });
        }
        crate::model::positive("true ell", self.ell_true)?;
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("true bias coefficients must be finite"));
        }
        if self.design.n_levels == 0 {
            return Err(Error::invalid("retrieval kernels need at least one level"));
        }
        crate::model::positive("design variance", self.design.variance_ppm2)?;
        self.design.grid.validate()
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.base_seed.wrapping_add(replicate as u64)
    }
}

/// Basis and observation groups (values still at the prior mean) of the
/// desk design. Training groups come first, the holdout group last.
#[derive(Debug, Clone)]
pub struct OsseLayout {
    pub basis: BasisLibrary,
    pub groups: Vec<ObservationGroup>,
    pub kernels: Vec<Vec<RetrievalKernel>>,
}

fn identity_kernels(n: usize, design: &DeskDesign) -> Result<Vec<RetrievalKernel>> {
    let k = RetrievalKernel::identity(vec![design.background_ppm; design.n_levels])?;
    Ok(vec![k; n])
}

/// Raw bias covariates along a pass: a smooth surface-like field with a
/// non-zero mean, a slow time drift and the position within the pass.
fn raw_covariates(points: &[&TrackPoint], grid: &SurrogateGrid, horizon_s: f64, per_pass: usize) -> DMatrix<f64> {
    let tau = std::f64::consts::TAU;
    DMatrix::from_fn(points.len(), 3, |i, j| {
        let p = points[i];
        match j {
            0 => 2.0 + (tau * p.lon / grid.n_lon as f64).sin() + 0.5 * p.lat / grid.n_lat as f64,
            1 => (tau * p.time_s / horizon_s).cos() + 0.3 * (tau * p.lat / grid.n_lat as f64).sin(),
            _ => 0.5 + (i % per_pass) as f64 / per_pass as f64,
        }
    })
}

fn design_variances(n: usize, per_pass: usize, base: f64) -> Vec<f64> {
    (0..n)
        .map(|i| base * (0.6 + 0.8 * ((i * 7) % per_pass.max(1)) as f64 / per_pass.max(1) as f64))
        .collect()
}

pub fn build_layout(design: &DeskDesign) -> Result<OsseLayout> {
    let grid = &design.grid;
    let spec = SurrogateBasisSpec::banded(
        grid,
        design.lon_bands,
        design.lat_bands,
        design.n_ocean,
        design.n_periods,
        design.steps_per_period,
    )?;
    let horizon = design.horizon_s();
    let track = design.track.generate(horizon)?;
    let kernels = identity_kernels(track.points.len(), design)?;
    let resp = make_response_functions(grid, &spec, &track, &kernels, design.background_ppm)?;

    let mut groups = Vec::new();
    let mut group_kernels = Vec::new();
    let per_pass = design.track.observations_per_pass;
    for g in 0..track.n_groups {
        let idx = track.group_indices(g);
        let pts: Vec<&TrackPoint> = idx.iter().map(|&i| &track.points[i]).collect();
        let prior_mean: Vec<f64> = idx.iter().map(|&i| resp.prior_mean[i]).collect();
        groups.push(ObservationGroup::new(GroupInput {
            id: format!("sat{}", g + 1),
            times: pts.iter().map(|p| p.time_s).collect(),
            values: prior_mean.clone(),
            prior_mean,
            variances: design_variances(idx.len(), per_pass, design.variance_ppm2),
            covariates: raw_covariates(&pts, grid, horizon, per_pass),
            response: resp.response.select_rows(&idx),
            error_case: ErrorCase::CaseII,
            role: Role::Training,
        })?);
        group_kernels.push(idx.iter().map(|&i| kernels[i].clone()).collect());
    }

    if !design.holdout_sites.is_empty() {
        let mut points = Vec::new();
        let mut t = design.holdout_cadence_s;
        while t < horizon {
            for (s, &(lon, lat)) in design.holdout_sites.iter().enumerate() {
                // sites report a minute apart so times stay strictly increasing
                points.push(TrackPoint {
                    time_s: t + 60.0 * s as f64,
                    lon,
                    lat,
                    group: 0,
                });
            }
            t += design.holdout_cadence_s;
        }
        points.retain(|p| p.time_s <= horizon);
        let hold = TrackSpec { points, n_groups: 1 };
        let hk = identity_kernels(hold.points.len(), design)?;
        let hr = make_response_functions(grid, &spec, &hold, &hk, design.background_ppm)?;
        let m = hold.points.len();
        groups.push(ObservationGroup::new(GroupInput {
            id: "holdout".into(),
            times: hold.points.iter().map(|p| p.time_s).collect(),
            values: hr.prior_mean.iter().copied().collect(),
            prior_mean: hr.prior_mean.iter().copied().collect(),
            variances: vec![design.variance_ppm2; m],
            covariates: DMatrix::zeros(m, 0),
            response: hr.response,
            error_case: ErrorCase::CaseII,
            role: Role::Holdout,
        })?);
        group_kernels.push(hk);
    }
    Ok(OsseLayout {
        basis: resp.basis,
        groups,
        kernels: group_kernels,
    })
}

/// alpha_s ~ N(0, variance I), optionally zero on fixed-prior regions.
pub fn generate_truth<R: Rng + ?Sized>(spec: &OsseSpec, basis: &BasisLibrary, priors: &Priors, rng: &mut R) -> DVector<f64> {
    let sd = spec.alpha_variance.sqrt();
    DVector::from_fn(basis.len(), |c, _| {
        let (j, _) = basis.region_period(c);
        let z: f64 = rng.sample(StandardNormal);
        if spec.exclude_fixed_regions && priors.alpha.regions[j].kappa_is_fixed() && priors.alpha.regions[j].tau_w_is_fixed() {
            0.0
        } else {
            sd * z
        }
    })
}

/// One draw of Z = Z0 + Psi alpha + A beta + xi + eps for a single group.
pub fn simulate_group<R: Rng + ?Sized>(
    group: &ObservationGroup,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    params: &ErrorParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    ensure_len("alpha", group.response().ncols(), alpha.len())?;
    let mut z = group.prior_mean() + group.response() * alpha;
    if !beta.is_empty() {
        ensure_len("beta", group.n_covariates(), beta.len())?;
        z += group.covariates() * beta;
    }
    let split = params.split_variances(group.variances());
    if let Some(corr) = &split.correlated {
        if corr.iter().all(|v| *v > 0.0) {
            let xi = sample_xi(group.times(), params.ell(), corr, rng)?;
            z += DVector::from_vec(xi);
        }
    }
    for (zi, v) in z.iter_mut().zip(&split.uncorrelated) {
        let e: f64 = rng.sample(StandardNormal);
        *zi += v.sqrt() * e;
    }
    Ok(z)
}

/// True parameters of each group: training groups carry `spec.beta_true`,
/// holdout groups no bias.
pub fn true_parameters(spec: &OsseSpec, groups: &[ObservationGroup]) -> Result<Vec<(DVector<f64>, ErrorParams)>> {
    groups
        .iter()
        .map(|g| {
            let beta = if g.role() == Role::Training && g.n_covariates() > 0 {
                ensure_len("true bias coefficients", g.n_covariates(), spec.beta_true.len())?;
                DVector::from_column_slice(&spec.beta_true)
            } else {
                DVector::zeros(0)
            };
            let params = match g.error_case() {
                ErrorCase::CaseII => ErrorParams::CaseII {
                    gamma: spec.gamma_true,
                    rho: spec.rho_true,
                    ell: spec.ell_true,
                },
                ErrorCase::CaseI => ErrorParams::CaseI {
                    gamma: spec.gamma_true * (1.0 - spec.rho_true),
                    tau_xi: 1.0 / (spec.gamma_true * spec.rho_true),
                    ell: spec.ell_true,
                },
            };
            Ok((beta, params))
        })
        .collect()
}

/// Replaces the values of every group with a fresh simulation.
pub fn simulate_observations<R: Rng + ?Sized>(
    spec: &OsseSpec,
    alpha: &DVector<f64>,
    groups: &mut [ObservationGroup],
    rng: &mut R,
) -> Result<()> {
    let truths = true_parameters(spec, groups)?;
    for (g, (beta, params)) in groups.iter_mut().zip(truths) {
        let z = simulate_group(g, alpha, &beta, &params, rng)?;
        g.set_values(z)?;
    }
    Ok(())
}

/// One synthetic dataset.
#[derive(Debug, Clone)]
pub struct OsseData {
    pub replicate: usize,
    pub seed: u64,
    pub basis: BasisLibrary,
    pub groups: Vec<ObservationGroup>,
    pub alpha_true: DVector<f64>,
}

pub fn generate_replicate(spec: &OsseSpec, layout: &OsseLayout, priors: &Priors, replicate: usize) -> Result<OsseData> {
    let seed = spec.replicate_seed(replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha_true = generate_truth(spec, &layout.basis, priors, &mut rng);
    let mut groups = layout.groups.clone();
    simulate_observations(spec, &alpha_true, &mut groups, &mut rng)?;
    Ok(OsseData {
        replicate,
        seed,
        basis: layout.basis.clone(),
        groups,
        alpha_true,
    })
}

/// The four bias x correlated-error setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    BiasCorrelated,
    BiasOnly,
    CorrelatedOnly,
    Neither,
}

impl Configuration {
    pub const ALL: [Configuration; 4] = [
        Configuration::BiasCorrelated,
        Configuration::BiasOnly,
        Configuration::CorrelatedOnly,
        Configuration::Neither,
    ];

    pub fn switches(self, base: ModelSwitches) -> ModelSwitches {
        let (bias, correlated) = match self {
            Configuration::BiasCorrelated => (true, true),
            Configuration::BiasOnly => (true, false),
            Configuration::CorrelatedOnly => (false, true),
            Configuration::Neither => (false, false),
        };
        ModelSwitches { bias, correlated, ..base }
    }

    pub fn name(self) -> &'static str {
        match self {
            Configuration::BiasCorrelated => "bias_on_corr_on",
            Configuration::BiasOnly => "bias_on_corr_off",
            Configuration::CorrelatedOnly => "bias_off_corr_on",
            Configuration::Neither => "bias_off_corr_off",
        }
    }
}

/// Runs all four configurations on one dataset. Chain seeds are derived
/// from the replicate seed and the configuration index.
pub fn run_configurations(
    data: &OsseData,
    priors: &Priors,
    sampler: &SamplerConfig,
) -> Result<Vec<(Configuration, ChainOutput)>> {
    Configuration::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let config = SamplerConfig {
                seed: data.seed.wrapping_mul(4).wrapping_add(i as u64),
                switches: c.switches(sampler.switches),
                ..sampler.clone()
            };
            run_chain(&config, &data.groups, &data.basis, priors).map(|out| (c, out))
        })
        .collect()
}

/// Region-period fluxes implied by alpha.
pub fn cell_fluxes(alpha: &[f64], basis: &BasisLibrary) -> Vec<f64> {
    basis.fluxes(alpha)
}

fn sample_fluxes(alpha_samples: &DMatrix<f64>, basis: &BasisLibrary) -> Result<Vec<Vec<f64>>> {
    ensure_len("alpha columns", basis.len(), alpha_samples.ncols())?;
    // per cell, the samples across the chain
    let per_sample: Vec<Vec<f64>> = alpha_samples
        .row_iter()
        .map(|r| basis.fluxes(&r.iter().copied().collect::<Vec<f64>>()))
        .collect();
    Ok((0..basis.len()).map(|c| per_sample.iter().map(|s| s[c]).collect()).collect())
}

/// RMSE of posterior-mean region-period fluxes against the truth.
pub fn score_rmse(alpha_samples: &DMatrix<f64>, alpha_true: &DVector<f64>, basis: &BasisLibrary) -> Result<f64> {
    let cells = sample_fluxes(alpha_samples, basis)?;
    let means: Vec<f64> = cells.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let truth = basis.fluxes(alpha_true.as_slice());
    Ok(rmse(&means, &truth))
}

/// Sample CRPS per region-period flux, averaged over cells.
pub fn score_crps(alpha_samples: &DMatrix<f64>, alpha_true: &DVector<f64>, basis: &BasisLibrary) -> Result<f64> {
    let cells = sample_fluxes(alpha_samples, basis)?;
    let truth = basis.fluxes(alpha_true.as_slice());
    let mut total = 0.0;
    for (c, y) in cells.iter().zip(&truth) {
        total += crps(c, *y)?;
    }
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalScore {
    pub covered: usize,
    pub cells: usize,
    pub median_width: f64,
}

/// Central 95% interval coverage of region-period fluxes.
pub fn score_intervals(alpha_samples: &DMatrix<f64>, alpha_true: &DVector<f64>, basis: &BasisLibrary) -> Result<IntervalScore> {
    let cells = sample_fluxes(alpha_samples, basis)?;
    let truth = basis.fluxes(alpha_true.as_slice());
    let mut covered = 0;
    let mut widths = Vec::with_capacity(cells.len());
    for (c, y) in cells.iter().zip(&truth) {
        let mut s = c.clone();
        s.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975));
        covered += usize::from(lo <= *y && *y <= hi);
        widths.push(hi - lo);
    }
    widths.sort_by(f64::total_cmp);
    Ok(IntervalScore {
        covered,
        cells: truth.len(),
        median_width: quantile_sorted(&widths, 0.5),
    })
}

/// Per-coefficient posterior mean and sd of beta, concatenated over groups.
pub fn beta_posterior(chain: &ChainOutput) -> Vec<(f64, f64)> {
    let Some(first) = chain.states.first() else {
        return Vec::new();
    };
    let n = chain.states.len() as f64;
    let mut out = Vec::new();
    for (g, b) in first.beta.iter().enumerate() {
        for i in 0..b.len() {
            let xs: Vec<f64> = chain.states.iter().map(|s| s.beta[g][i]).collect();
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            out.push((m, v.sqrt()));
        }
    }
    out
}

/// One row of the study score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub replicate: usize,
    pub configuration: Configuration,
    pub rmse: f64,
    pub crps: f64,
    pub covered: usize,
    pub cells: usize,
    pub median_width: f64,
    /// Bias coefficients whose posterior mean lies within 3 sd of the truth,
    /// out of `beta_total` (0 of 0 when the bias model is off).
    pub beta_within_3sd: usize,
    pub beta_total: usize,
}

pub fn score_chain(
    data: &OsseData,
    spec: &OsseSpec,
    configuration: Configuration,
    chain: &ChainOutput,
) -> Result<ScoreRow> {
    let a = alpha_matrix(&chain.states);
    let iv = score_intervals(&a, &data.alpha_true, &data.basis)?;
    let beta = beta_posterior(chain);
    let truth: Vec<f64> = data
        .groups
        .iter()
        .filter(|g| g.role() == Role::Training && g.n_covariates() > 0)
        .flat_map(|_| spec.beta_true.iter().copied())
        .collect();
    let within = if beta.is_empty() {
        0
    } else {
        ensure_len("bias coefficients", truth.len(), beta.len())?;
        beta.iter().zip(&truth).filter(|((m, s), t)| (m - *t).abs() <= 3.0 * s).count()
    };
    Ok(ScoreRow {
        replicate: data.replicate,
        configuration,
        rmse: score_rmse(&a, &data.alpha_true, &data.basis)?,
        crps: score_crps(&a, &data.alpha_true, &data.basis)?,
        covered: iv.covered,
        cells: iv.cells,
        median_width: iv.median_width,
        beta_within_3sd: within,
        beta_total: beta.len(),
    })
}

/// Replicates x configurations, replicates spread over `threads` workers.
/// Rows are returned sorted by replicate, then configuration order.
pub fn run_study(spec: &OsseSpec, priors: &Priors, sampler: &SamplerConfig, threads: usize) -> Result<Vec<ScoreRow>> {
    spec.validate()?;
    let layout = build_layout(&spec.design)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<Vec<ScoreRow>>>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::SeqCst);
                if r >= spec.n_replicates {
                    break;
                }
                let rows = run_replicate(spec, &layout, priors, sampler, r);
                if let Err(e) = &rows {
                    log::error!("replicate {r}: {e}");
                }
                results.lock().expect("results lock").push(rows);
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("results lock") {
        rows.extend(r?);
    }
    rows.sort_by_key(|row| {
        (
            row.replicate,
            Configuration::ALL.iter().position(|c| *c == row.configuration),
        )
    });
    Ok(rows)
}

pub fn run_replicate(
    spec: &OsseSpec,
    layout: &OsseLayout,
    priors: &Priors,
    sampler: &SamplerConfig,
    replicate: usize,
) -> Result<Vec<ScoreRow>> {
    let data = generate_replicate(spec, layout, priors, replicate)?;
    let chains = run_configurations(&data, priors, sampler)?;
    let rows = chains
        .iter()
        .map(|(c, chain)| score_chain(&data, spec, *c, chain))
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "replicate {replicate}: rmse {}",
        rows.iter().map(|r| format!("{}={:.4}", r.configuration.name(), r.rmse)).collect::<Vec<_>>().join(" ")
    );
    Ok(rows)
}
