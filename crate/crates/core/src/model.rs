//! Domain types of the hierarchical model and the deterministic pieces of it:
//! basis bookkeeping, observation groups, priors on the scaling factors, and
//! the data-model mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::SymTridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionType {
    Land,
    Ocean,
}

/// Region-by-period flux basis. Columns are ordered region-major: all periods
/// of region 0, then all periods of region 1, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisLibrary {
    n_regions: usize,
    n_periods: usize,
    region_types: Vec<RegionType>,
    region_names: Vec<String>,
    /// Integral of each basis function over its support (PgC per period).
    flux_integrals: Vec<f64>,
    /// Integral of the prior-mean flux over each region-period (PgC per period).
    prior_flux_integrals: Vec<f64>,
}

impl BasisLibrary {
    pub fn new(
        region_types: Vec<RegionType>,
        region_names: Vec<String>,
        n_periods: usize,
        flux_integrals: Vec<f64>,
        prior_flux_integrals: Vec<f64>,
    ) -> Result<Self> {
        let n_regions = region_types.len();
        if n_regions == 0 || n_periods == 0 {
            return Err(Error::invalid("basis needs at least one region and one period"));
        }
        ensure_len("region names", n_regions, region_names.len())?;
        let r = n_regions * n_periods;
        ensure_len("flux integrals", r, flux_integrals.len())?;
        ensure_len("prior flux integrals", r, prior_flux_integrals.len())?;
        if flux_integrals
            .iter()
            .chain(&prior_flux_integrals)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("flux integrals must be finite"));
        }
        Ok(Self {
            n_regions,
            n_periods,
            region_types,
            region_names,
            flux_integrals,
            prior_flux_integrals,
        })
    }

    /// Re-validates after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::new(
            self.region_types,
            self.region_names,
            self.n_periods,
            self.flux_integrals,
            self.prior_flux_integrals,
        )
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    /// Number of basis functions r = r_s * r_t.
    pub fn len(&self) -> usize {
        self.n_regions * self.n_periods
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, region: usize, period: usize) -> usize {
        debug_assert!(region < self.n_regions && period < self.n_periods);
        region * self.n_periods + period
    }

    pub fn region_period(&self, column: usize) -> (usize, usize) {
        (column / self.n_periods, column % self.n_periods)
    }

    pub fn region_types(&self) -> &[RegionType] {
        &self.region_types
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn flux_integrals(&self) -> &[f64] {
        &self.flux_integrals
    }

    pub fn prior_flux_integrals(&self) -> &[f64] {
        &self.prior_flux_integrals
    }

    /// Flux per region-period implied by scaling factors `alpha`.
    pub fn fluxes(&self, alpha: &[f64]) -> Vec<f64> {
        self.prior_flux_integrals
            .iter()
            .zip(&self.flux_integrals)
            .zip(alpha)
            .map(|((p, f), a)| p + a * f)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCase {
    /// Prescribed variances describe measurement error only; the correlated
    /// component has its own precision.
    CaseI,
    /// Prescribed variances already include transport error; a fraction of
    /// the inflated variance is attributed to the correlated component.
    CaseII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Training,
    Holdout,
}

/// Raw description of an observation group, before validation.
#[derive(Debug, Clone)]
pub struct GroupInput {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub variances: Vec<f64>,
    /// m_g x p raw bias covariates (p may be zero).
    pub covariates: DMatrix<f64>,
    /// m_g x r rows of the response matrix.
    pub response: DMatrix<f64>,
    pub error_case: ErrorCase,
    pub role: Role,
}

/// One instrument group's observations, validated, with covariates
/// standardized to unit empirical variance.
#[derive(Debug, Clone)]
pub struct ObservationGroup {
    id: String,
    times: Vec<f64>,
    values: DVector<f64>,
    prior_mean: DVector<f64>,
    variances: Vec<f64>,
    covariates: DMatrix<f64>,
    covariate_scales: Vec<f64>,
    response: DMatrix<f64>,
    error_case: ErrorCase,
    role: Role,
}

impl ObservationGroup {
    pub fn new(input: GroupInput) -> Result<Self> {
        let m = input.times.len();
        if m == 0 {
            return Err(Error::invalid(format!("group '{}' has no observations", input.id)));
        }
        ensure_len("group values", m, input.values.len())?;
        ensure_len("group prior mean", m, input.prior_mean.len())?;
        ensure_len("group variances", m, input.variances.len())?;
        ensure_len("covariate rows", m, input.covariates.nrows())?;
        ensure_len("response rows", m, input.response.nrows())?;
        check_increasing(&input.id, &input.times)?;
        if let Some((i, v)) = input
            .variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::invalid(format!(
                "group '{}': prescribed variance at index {i} is {v}, must be strictly positive",
                input.id
            )));
        }
        if input
            .values
            .iter()
            .chain(&input.prior_mean)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid(format!("group '{}': non-finite value", input.id)));
        }
        if input.response.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "group '{}': response matrix has non-finite entries",
                input.id
            )));
        }
        let (covariates, covariate_scales) = standardize_covariates(&input.covariates)?;
        Ok(Self {
            id: input.id,
            times: input.times,
            values: DVector::from_vec(input.values),
            prior_mean: DVector::from_vec(input.prior_mean),
            variances: input.variances,
            covariates,
            covariate_scales,
            response: input.response,
            error_case: input.error_case,
            role: input.role,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
    /// Standardized covariates (m_g x p).
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }
    /// Empirical standard deviations used for standardization; a coefficient
    /// on the standardized scale divided by its scale is the raw-unit coefficient.
    pub fn covariate_scales(&self) -> &[f64] {
        &self.covariate_scales
    }
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }
    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }
    pub fn error_case(&self) -> ErrorCase {
        self.error_case
    }
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn set_values(&mut self, values: DVector<f64>) -> Result<()> {
        ensure_len("group values", self.len(), values.len())?;
        self.values = values;
        Ok(())
    }

    /// Copy of this group that carries no bias model.
    pub fn without_covariates(&self) -> Self {
        Self {
            covariates: DMatrix::zeros(self.len(), 0),
            covariate_scales: Vec::new(),
            ..self.clone()
        }
    }

    pub fn with_error_case(mut self, case: ErrorCase) -> Self {
        self.error_case = case;
        self
    }
}

fn check_increasing(group: &str, times: &[f64]) -> Result<()> {
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("group '{group}': non-finite time {t}")));
    }
    for (i, w) in times.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonIncreasingTimes {
                group: group.to_string(),
                index: i + 1,
                time: w[1],
                previous: w[0],
            });
        }
    }
    Ok(())
}

/// Scales each column to unit empirical variance (population divisor m).
/// Columns are not centred. Returns the scaled matrix and the per-column
/// standard deviations.
pub fn standardize_covariates(raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let m = raw.nrows();
    let mut out = raw.clone();
    let mut scales = Vec::with_capacity(raw.ncols());
    for (j, col) in raw.column_iter().enumerate() {
        if m == 0 {
            return Err(Error::ZeroVarianceCovariate { column: j });
        }
        let mean = col.sum() / m as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() || sd <= 1e-12 * mean.abs() {
            return Err(Error::ZeroVarianceCovariate { column: j });
        }
        out.column_mut(j).unscale_mut(sd);
        scales.push(sd);
    }
    Ok((out, scales))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KappaPrior {
    Fixed { value: f64 },
    Beta { a: f64, b: f64 },
}

/// Rate of the Gamma prior on tau_w. The rate may be tied to kappa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GammaRate {
    Constant { value: f64 },
    /// rate = factor * (1 - kappa^2). The stationary variance 1/(tau_w (1 - kappa^2))
    /// then has an inverse-gamma(shape, factor) law whatever kappa is.
    KappaScaled { factor: f64 },
}

impl GammaRate {
    pub fn at(&self, kappa: f64) -> f64 {
        match *self {
            GammaRate::Constant { value } => value,
            GammaRate::KappaScaled { factor } => factor * (1.0 - kappa * kappa),
        }
    }

    pub fn depends_on_kappa(&self) -> bool {
        matches!(self, GammaRate::KappaScaled { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TauWPrior {
    Fixed { value: f64 },
    Gamma { shape: f64, rate: GammaRate },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPrior {
    pub kappa: KappaPrior,
    pub tau_w: TauWPrior,
}

impl RegionPrior {
    /// Uniform kappa; tau_w shape 0.354 with kappa-scaled rate.
    pub fn land_default() -> Self {
        Self {
            kappa: KappaPrior::Beta { a: 1.0, b: 1.0 },
            tau_w: TauWPrior::Gamma {
                shape: 0.354,
                rate: GammaRate::KappaScaled { factor: 0.0153 },
            },
        }
    }

    /// iid N(0, 0.5^2) scalings.
    pub fn ocean_default() -> Self {
        Self {
            kappa: KappaPrior::Fixed { value: 0.0 },
            tau_w: TauWPrior::Fixed { value: 4.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kappa {
            KappaPrior::Fixed { value } => {
                if !(0.0..1.0).contains(&value) {
                    return Err(Error::InvalidParameter {
                        name: "kappa",
                        value,
                        reason: "fixed kappa must lie in [0, 1)",
                    });
                }
            }
            KappaPrior::Beta { a, b } => {
                positive("kappa beta a", a)?;
                positive("kappa beta b", b)?;
            }
        }
        match self.tau_w {
            TauWPrior::Fixed { value } => positive("tau_w", value)?,
            TauWPrior::Gamma { shape, rate } => {
                positive("tau_w shape", shape)?;
                match rate {
                    GammaRate::Constant { value } => positive("tau_w rate", value)?,
                    GammaRate::KappaScaled { factor } => positive("tau_w rate factor", factor)?,
                }
            }
        }
        Ok(())
    }

    pub fn kappa_is_fixed(&self) -> bool {
        matches!(self.kappa, KappaPrior::Fixed { .. })
    }

    pub fn tau_w_is_fixed(&self) -> bool {
        matches!(self.tau_w, TauWPrior::Fixed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPrior {
    pub regions: Vec<RegionPrior>,
}

impl AlphaPrior {
    /// Land regions get [`RegionPrior::land_default`], ocean regions
    /// [`RegionPrior::ocean_default`].
    pub fn defaults_for(basis: &BasisLibrary) -> Self {
        Self {
            regions: basis
                .region_types()
                .iter()
                .map(|t| match t {
                    RegionType::Land => RegionPrior::land_default(),
                    RegionType::Ocean => RegionPrior::ocean_default(),
                })
                .collect(),
        }
    }

    pub fn validate(&self, basis: &BasisLibrary) -> Result<()> {
        ensure_len("alpha prior regions", basis.n_regions(), self.regions.len())?;
        self.regions.iter().try_for_each(RegionPrior::validate)
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be strictly positive and finite",
        })
    }
}

/// Error-model parameters of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum ErrorParams {
    /// Uncorrelated variance gamma * v_ps plus a correlated component with
    /// constant marginal variance 1 / tau_xi. `tau_xi = inf` removes it.
    CaseI { gamma: f64, tau_xi: f64, ell: f64 },
    /// Total variance gamma * v_ps, of which a fraction rho is correlated.
    CaseII { gamma: f64, rho: f64, ell: f64 },
}

/// Per-observation variances of the uncorrelated and correlated components.
#[derive(Debug, Clone)]
pub struct VarianceSplit {
    pub uncorrelated: Vec<f64>,
    /// `None` when the correlated component is absent.
    pub correlated: Option<Vec<f64>>,
}

impl ErrorParams {
    pub fn gamma(&self) -> f64 {
        match *self {
            ErrorParams::CaseI { gamma, .. } | ErrorParams::CaseII { gamma, .. } => gamma,
        }
    }

    /// Length scale in minutes.
    pub fn ell(&self) -> f64 {
        match *self {
            ErrorParams::CaseI { ell, .. } | ErrorParams::CaseII { ell, .. } => ell,
        }
    }

    pub fn case(&self) -> ErrorCase {
        match self {
            ErrorParams::CaseI { .. } => ErrorCase::CaseI,
            ErrorParams::CaseII { .. } => ErrorCase::CaseII,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("gamma", self.gamma())?;
        positive("ell", self.ell())?;
        match *self {
            ErrorParams::CaseI { tau_xi, .. } => {
                if !(tau_xi > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "tau_xi",
                        value: tau_xi,
                        reason: "must be strictly positive (infinity disables the component)",
                    });
                }
            }
            ErrorParams::CaseII { rho, .. } => {
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::InvalidParameter {
                        name: "rho",
                        value: rho,
                        reason: "must lie in [0, 1]",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn split_variances(&self, prescribed: &[f64]) -> VarianceSplit {
        match *self {
            ErrorParams::CaseI { gamma, tau_xi, .. } => VarianceSplit {
                uncorrelated: prescribed.iter().map(|v| gamma * v).collect(),
                correlated: tau_xi
                    .is_finite()
                    .then(|| vec![1.0 / tau_xi; prescribed.len()]),
            },
            ErrorParams::CaseII { gamma, rho, .. } => VarianceSplit {
                uncorrelated: prescribed.iter().map(|v| (1.0 - rho) * gamma * v).collect(),
                correlated: (rho > 0.0).then(|| prescribed.iter().map(|v| rho * gamma * v).collect()),
            },
        }
    }
}

/// One sample of every unknown in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub alpha: DVector<f64>,
    /// One coefficient vector per group (empty for groups without bias model).
    pub beta: Vec<DVector<f64>>,
    pub kappa: Vec<f64>,
    pub tau_w: Vec<f64>,
    pub error_params: Vec<ErrorParams>,
}

impl ModelState {
    pub fn validate(&self, basis: &BasisLibrary, groups: &[ObservationGroup]) -> Result<()> {
        ensure_len("alpha", basis.len(), self.alpha.len())?;
        ensure_len("kappa", basis.n_regions(), self.kappa.len())?;
        ensure_len("tau_w", basis.n_regions(), self.tau_w.len())?;
        ensure_len("beta groups", groups.len(), self.beta.len())?;
        ensure_len("error params", groups.len(), self.error_params.len())?;
        for (g, b) in groups.iter().zip(&self.beta) {
            ensure_len("beta", g.n_covariates(), b.len())?;
        }
        if self.alpha.iter().chain(self.beta.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite alpha or beta"));
        }
        for &k in &self.kappa {
            if !(0.0..1.0).contains(&k) {
                return Err(Error::InvalidParameter {
                    name: "kappa",
                    value: k,
                    reason: "must lie in [0, 1)",
                });
            }
        }
        for &t in &self.tau_w {
            positive("tau_w", t)?;
        }
        for (g, p) in groups.iter().zip(&self.error_params) {
            p.validate()?;
            if p.case() != g.error_case() {
                return Err(Error::invalid(format!(
                    "group '{}': error parameters do not match its error case",
                    g.id()
                )));
            }
        }
        Ok(())
    }

    /// Region `j`'s block of alpha.
    pub fn alpha_region<'a>(&'a self, basis: &BasisLibrary, region: usize) -> &'a [f64] {
        let start = basis.index(region, 0);
        &self.alpha.as_slice()[start..start + basis.n_periods()]
    }
}

/// Z_p = Z0 + Psi alpha + A beta for each group.
pub fn predicted_mean(state: &ModelState, groups: &[ObservationGroup]) -> Result<Vec<DVector<f64>>> {
    ensure_len("beta groups", groups.len(), state.beta.len())?;
    groups
        .iter()
        .zip(&state.beta)
        .map(|(g, beta)| {
            ensure_len("alpha", g.response().ncols(), state.alpha.len())?;
            ensure_len("beta", g.n_covariates(), beta.len())?;
            let mut mean = g.prior_mean() + g.response() * &state.alpha;
            if !beta.is_empty() {
                mean += g.covariates() * beta;
            }
            Ok(mean)
        })
        .collect()
}

/// Q_{alpha,j}: corners 1, interior diagonal 1 + kappa^2, off-diagonal -kappa.
pub fn ar1_structure(kappa: f64, n_periods: usize) -> SymTridiagonal {
    let mut diag = vec![1.0 + kappa * kappa; n_periods];
    diag[0] = 1.0;
    diag[n_periods - 1] = 1.0;
    SymTridiagonal::new(diag, vec![-kappa; n_periods - 1]).expect("consistent sizes")
}

/// log |Q_{alpha,j}| = log(1 - kappa^2) for two or more periods.
///
/// `Q_{alpha,j}` inverts the stationary AR(1) covariance with marginal
/// variance `1 / (1 - kappa^2)`, whose determinant is `1 / (1 - kappa^2)`.
pub fn ar1_log_det(kappa: f64, n_periods: usize) -> f64 {
    if n_periods < 2 {
        0.0
    } else {
        (-kappa * kappa).ln_1p()
    }
}

/// Block-diagonal prior precision of alpha, one tridiagonal block per region.
#[derive(Debug, Clone)]
pub struct AlphaPrecision {
    pub blocks: Vec<SymTridiagonal>,
}

impl AlphaPrecision {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(SymTridiagonal::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut offset = 0;
        for b in &self.blocks {
            let k = b.len();
            out.view_mut((offset, offset), (k, k)).copy_from(&b.to_dense());
            offset += k;
        }
        out
    }
}

pub fn alpha_prior_precision(kappa: &[f64], tau_w: &[f64], n_periods: usize) -> Result<AlphaPrecision> {
    ensure_len("tau_w", kappa.len(), tau_w.len())?;
    if n_periods == 0 {
        return Err(Error::invalid("need at least one period"));
    }
    let blocks = kappa
        .iter()
        .zip(tau_w)
        .map(|(&k, &t)| {
            if !(k.abs() < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "kappa",
                    value: k,
                    reason: "|kappa| must be below 1",
                });
            }
            positive("tau_w", t)?;
            Ok(ar1_structure(k, n_periods).scaled(t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlphaPrecision { blocks })
}
