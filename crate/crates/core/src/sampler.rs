//! Gibbs sampler over (alpha, beta), kappa, tau_w and the error parameters.
//!
//! One sweep:
//! 1. (alpha, beta) jointly from their Gaussian full conditional;
//! 2. kappa_j per free region by slice sampling on the logit scale;
//! 3. tau_w,j per free region from its Gamma full conditional;
//! 4. per group, each free error parameter by slice sampling on a
//!    transformed scale (log gamma, logit rho, log ell, log tau_xi).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::json_hash;
use crate::markov::{has_correlated_part, residual, GroupCovariance, XiKernel};
use crate::model::{
    alpha_prior_precision, ar1_log_det, ar1_structure, AlphaPrior, BasisLibrary, ErrorCase, ErrorParams, GammaRate,
    KappaPrior, ModelState, ObservationGroup, RegionPrior, Role, TauWPrior,
};
use crate::slice::{slice_sample, SliceConfig};

/// Inverse-gamma prior, density proportional to x^{-shape-1} exp(-scale / x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

/// Gamma prior with shape and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate).expect("validated").sample(rng)
    }
}

/// Priors on the per-group error parameters (shared by all groups).
/// The correlated fraction rho has a uniform prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorPriors {
    pub gamma: InverseGammaPrior,
    /// Length scale in minutes.
    pub ell: GammaPrior,
    pub tau_xi: GammaPrior,
}

impl Default for ErrorPriors {
    fn default() -> Self {
        Self {
            gamma: InverseGammaPrior {
                shape: 1.627,
                scale: 2.171,
            },
            ell: GammaPrior { shape: 1.0, rate: 1.0 },
            tau_xi: GammaPrior { shape: 1.0, rate: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub alpha: AlphaPrior,
    /// Prior variance of each standardized bias coefficient.
    pub beta_variance: f64,
    pub error: ErrorPriors,
}

impl Priors {
    pub fn defaults_for(basis: &BasisLibrary) -> Self {
        Self {
            alpha: AlphaPrior::defaults_for(basis),
            beta_variance: 100.0,
            error: ErrorPriors::default(),
        }
    }

    pub fn validate(&self, basis: &BasisLibrary) -> Result<()> {
        self.alpha.validate(basis)?;
        positive("beta variance", self.beta_variance)?;
        let e = &self.error;
        for (name, v) in [
            ("gamma prior shape", e.gamma.shape),
            ("gamma prior scale", e.gamma.scale),
            ("ell prior shape", e.ell.shape),
            ("ell prior rate", e.ell.rate),
            ("tau_xi prior shape", e.tau_xi.shape),
            ("tau_xi prior rate", e.tau_xi.rate),
        ] {
            positive(name, v)?;
        }
        Ok(())
    }

    /// One draw of every unknown from the joint prior.
    pub fn sample_state<R: Rng + ?Sized>(
        &self,
        basis: &BasisLibrary,
        groups: &[ObservationGroup],
        switches: &ModelSwitches,
        rng: &mut R,
    ) -> Result<ModelState> {
        let r_t = basis.n_periods();
        let mut kappa = Vec::with_capacity(basis.n_regions());
        let mut tau_w = Vec::with_capacity(basis.n_regions());
        let mut alpha = Vec::with_capacity(basis.len());
        for rp in &self.alpha.regions {
            let k = match rp.kappa {
                KappaPrior::Fixed { value } => value,
                KappaPrior::Beta { a, b } => Beta::new(a, b).map_err(dist_err)?.sample(rng),
            };
            let t = match rp.tau_w {
                TauWPrior::Fixed { value } => value,
                TauWPrior::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate.at(k)).map_err(dist_err)?.sample(rng),
            };
            let chol = ar1_structure(k, r_t).scaled(t).cholesky()?;
            let mut z: Vec<f64> = (0..r_t).map(|_| rng.sample(StandardNormal)).collect();
            chol.solve_upper_in_place(&mut z);
            alpha.extend(z);
            kappa.push(k);
            tau_w.push(t);
        }
        let sd_beta = self.beta_variance.sqrt();
        let beta = groups
            .iter()
            .map(|g| {
                let p = if switches.bias { g.n_covariates() } else { 0 };
                DVector::from_fn(p, |_, _| sd_beta * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let error_params = groups
            .iter()
            .map(|g| {
                let gamma = 1.0 / self.error.gamma_draw(rng);
                let ell = self.error.ell.sample(rng);
                match g.error_case() {
                    ErrorCase::CaseI => ErrorParams::CaseI {
                        gamma,
                        tau_xi: if switches.correlated {
                            self.error.tau_xi.sample(rng)
                        } else {
                            f64::INFINITY
                        },
                        ell,
                    },
                    ErrorCase::CaseII => ErrorParams::CaseII {
                        gamma,
                        rho: if switches.correlated { rng.random::<f64>() } else { 0.0 },
                        ell,
                    },
                }
            })
            .collect();
        Ok(ModelState {
            alpha: DVector::from_vec(alpha),
            beta,
            kappa,
            tau_w,
            error_params,
        })
    }
}

impl ErrorPriors {
    /// 1/gamma ~ Gamma(shape, rate = scale)
    fn gamma_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.gamma.shape, 1.0 / self.gamma.scale)
            .expect("validated")
            .sample(rng)
    }
}

fn dist_err<E: std::fmt::Display>(e: E) -> Error {
    Error::invalid(format!("prior distribution: {e}"))
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    crate::model::positive(name, v)
}

/// Model-configuration switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSwitches {
    /// Estimate the group bias coefficients; off drops the bias term.
    pub bias: bool,
    /// Include the correlated error component; off pins rho = 0 (Case II)
    /// or tau_xi = inf (Case I). The inflation factor is still sampled.
    pub correlated: bool,
    /// Leave the p(tau_w | kappa) factor out of the kappa conditional when
    /// the tau_w rate depends on kappa. Off (the default) targets the joint
    /// posterior exactly.
    pub plug_in_omega: bool,
}

impl Default for ModelSwitches {
    fn default() -> Self {
        Self {
            bias: true,
            correlated: true,
            plug_in_omega: false,
        }
    }
}

/// Parameters held at their initial value instead of being sampled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedParameters {
    #[serde(default)]
    pub beta: bool,
    #[serde(default)]
    pub gamma: bool,
    #[serde(default)]
    pub rho: bool,
    #[serde(default)]
    pub tau_xi: bool,
    #[serde(default)]
    pub ell: bool,
}

/// Slice widths, on the transformed scale of each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceWidths {
    pub kappa: SliceConfig,
    pub gamma: SliceConfig,
    pub rho: SliceConfig,
    pub ell: SliceConfig,
    pub tau_xi: SliceConfig,
}

impl Default for SliceWidths {
    fn default() -> Self {
        Self {
            kappa: SliceConfig::with_width(2.0),
            gamma: SliceConfig::with_width(0.5),
            rho: SliceConfig::with_width(1.5),
            ell: SliceConfig::with_width(1.0),
            tau_xi: SliceConfig::with_width(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub n_burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub slice: SliceWidths,
    #[serde(default)]
    pub switches: ModelSwitches,
    #[serde(default)]
    pub fixed: FixedParameters,
}

fn one() -> usize {
    1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iterations: 11_000,
            n_burn_in: 1_000,
            thin: 1,
            seed: 0,
            slice: SliceWidths::default(),
            switches: ModelSwitches::default(),
            fixed: FixedParameters::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn_in >= self.n_iterations {
            return Err(Error::invalid(format!(
                "burn-in ({}) must be below the iteration count ({})",
                self.n_burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        let s = &self.slice;
        for c in [s.kappa, s.gamma, s.rho, s.ell, s.tau_xi] {
            c.validate()?;
        }
        Ok(())
    }

    pub fn n_stored(&self) -> usize {
        (self.n_iterations - self.n_burn_in).div_ceil(self.thin)
    }
}

/// Work done by the sampler.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub sweeps: usize,
    pub kappa_evaluations: usize,
    pub error_param_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Post-burn-in (and thinned) states.
    pub states: Vec<ModelState>,
    pub counters: Counters,
    pub config_hash: String,
    pub seed: u64,
}

/// Gibbs sampler bound to one dataset.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    basis: &'a BasisLibrary,
    groups: Vec<ObservationGroup>,
    priors: Priors,
    config: SamplerConfig,
    state: ModelState,
    rng: ChaCha8Rng,
    counters: Counters,
    /// Per group: [response | covariates] (covariates omitted when beta is fixed).
    designs: Vec<DMatrix<f64>>,
    /// Per group: sum of ln prescribed variances.
    log_var_sums: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    /// Uses the training groups only. With the bias switch off the groups
    /// lose their covariates.
    pub fn new(
        basis: &'a BasisLibrary,
        groups: &[ObservationGroup],
        priors: Priors,
        config: SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        priors.validate(basis)?;
        let groups: Vec<ObservationGroup> = groups
            .iter()
            .filter(|g| g.role() == Role::Training)
            .map(|g| {
                if config.switches.bias {
                    g.clone()
                } else {
                    g.without_covariates()
                }
            })
            .collect();
        for g in &groups {
            crate::error::ensure_len("response columns", basis.len(), g.response().ncols())?;
        }
        let state = initial_state(basis, &groups, &priors, &config.switches);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let designs = groups
            .iter()
            .map(|g| {
                let p = if config.fixed.beta { 0 } else { g.n_covariates() };
                let mut d = DMatrix::<f64>::zeros(g.len(), basis.len() + p);
                d.view_mut((0, 0), (g.len(), basis.len())).copy_from(g.response());
                if p > 0 {
                    d.view_mut((0, basis.len()), (g.len(), p)).copy_from(g.covariates());
                }
                d
            })
            .collect();
        let log_var_sums = groups.iter().map(|g| g.variances().iter().map(|v| v.ln()).sum()).collect();
        Ok(Self {
            basis,
            groups,
            priors,
            config,
            state,
            rng,
            counters: Counters::default(),
            designs,
            log_var_sums,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn groups(&self) -> &[ObservationGroup] {
        &self.groups
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Replaces the current state, e.g. to start from known values.
    pub fn set_state(&mut self, state: ModelState) -> Result<()> {
        state.validate(self.basis, &self.groups)?;
        self.state = state;
        Ok(())
    }

    pub fn set_group_values(&mut self, group: usize, values: DVector<f64>) -> Result<()> {
        let g = self
            .groups
            .get_mut(group)
            .ok_or_else(|| Error::invalid(format!("no group {group}")))?;
        g.set_values(values)
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self) -> Result<()> {
        let (alpha, beta) = self.sample_alpha_beta()?;
        self.state.alpha = alpha;
        if !self.config.fixed.beta {
            self.state.beta = beta;
        }
        self.sample_kappa()?;
        self.sample_tau_w()?;
        self.sample_error_params()?;
        self.counters.sweeps += 1;
        Ok(())
    }

    fn beta_offsets(&self) -> (usize, Vec<usize>) {
        let r = self.basis.len();
        let mut offsets = Vec::with_capacity(self.groups.len());
        let mut dim = r;
        for g in &self.groups {
            offsets.push(dim);
            if !self.config.fixed.beta {
                dim += g.n_covariates();
            }
        }
        (dim, offsets)
    }

    /// Full conditional of x = (alpha, beta_1, ..., beta_G): returns the
    /// mean and the Cholesky factor of the conditional precision.
    pub fn alpha_beta_conditional(&self) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
        let r = self.basis.len();
        let fix_beta = self.config.fixed.beta;
        let (dim, offsets) = self.beta_offsets();
        let mut prec = DMatrix::<f64>::zeros(dim, dim);
        let q_alpha = alpha_prior_precision(&self.state.kappa, &self.state.tau_w, self.basis.n_periods())?;
        prec.view_mut((0, 0), (r, r)).copy_from(&q_alpha.to_dense());
        for i in r..dim {
            prec[(i, i)] = 1.0 / self.priors.beta_variance;
        }
        let mut rhs = DVector::<f64>::zeros(dim);

        for (((g, params), (&off, beta)), design) in self
            .groups
            .iter()
            .zip(&self.state.error_params)
            .zip(offsets.iter().zip(&self.state.beta))
            .zip(&self.designs)
        {
            let cov = GroupCovariance::new(g.times(), g.variances(), params)?;
            let p = design.ncols() - r;
            let mut y = g.values() - g.prior_mean();
            if fix_beta && !beta.is_empty() {
                y -= g.covariates() * beta;
            }
            let weighted = cov.solve_matrix(design);
            let info = design.tr_mul(&weighted);
            let score = weighted.tr_mul(&y);
            let idx: Vec<usize> = (0..r).chain(off..off + p).collect();
            for (a, &ia) in idx.iter().enumerate() {
                rhs[ia] += score[a];
                for (b, &ib) in idx.iter().enumerate() {
                    prec[(ia, ib)] += info[(a, b)];
                }
            }
        }
        let prec = (&prec + prec.transpose()) * 0.5;
        let chol = Cholesky::new(prec).ok_or(Error::NotPositiveDefinite {
            context: "alpha/beta conditional precision",
        })?;
        let mean = chol.solve(&rhs);
        Ok((mean, chol))
    }

    /// Draws (alpha, beta) from their joint conditional without storing it.
    pub fn sample_alpha_beta(&mut self) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let r = self.basis.len();
        let (mean, chol) = self.alpha_beta_conditional()?;
        let z = DVector::from_fn(mean.len(), |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let dev = chol
            .l()
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::NotPositiveDefinite {
                context: "alpha/beta conditional factor",
            })?;
        let x = mean + dev;
        let alpha = x.rows(0, r).into_owned();
        let (_, offsets) = self.beta_offsets();
        let beta = if self.config.fixed.beta {
            self.state.beta.clone()
        } else {
            self.groups
                .iter()
                .zip(&offsets)
                .map(|(g, &off)| x.rows(off, g.n_covariates()).into_owned())
                .collect()
        };
        Ok((alpha, beta))
    }

    /// Step 2: every free kappa_j, in place.
    pub fn sample_kappa(&mut self) -> Result<()> {
        let r_t = self.basis.n_periods();
        let plug_in = self.config.switches.plug_in_omega;
        for j in 0..self.basis.n_regions() {
            let rp = self.priors.alpha.regions[j];
            let KappaPrior::Beta { a, b } = rp.kappa else {
                continue;
            };
            let alpha_j: Vec<f64> = self.state.alpha_region(self.basis, j).to_vec();
            let tau = self.state.tau_w[j];
            let coupling = match rp.tau_w {
                TauWPrior::Gamma { shape, rate } if rate.depends_on_kappa() && !plug_in => Some((shape, rate)),
                _ => None,
            };
            let log_target = |u: f64| kappa_log_target(u, &alpha_j, tau, a, b, coupling, r_t);
            let u0 = logit(self.state.kappa[j]);
            let lf0 = log_target(u0);
            let draw = slice_sample(log_target, u0, lf0, &self.config.slice.kappa, &mut self.rng)?;
            self.counters.kappa_evaluations += draw.evaluations;
            self.state.kappa[j] = logistic(draw.value).min(1.0 - f64::EPSILON);
        }
        Ok(())
    }

    /// Step 3: every free tau_w,j, in place.
    pub fn sample_tau_w(&mut self) -> Result<()> {
        let r_t = self.basis.n_periods();
        for j in 0..self.basis.n_regions() {
            let TauWPrior::Gamma { shape, rate } = self.priors.alpha.regions[j].tau_w else {
                continue;
            };
            let k = self.state.kappa[j];
            let quad = ar1_structure(k, r_t).quad_form(self.state.alpha_region(self.basis, j));
            let post_shape = shape + 0.5 * r_t as f64;
            let post_rate = rate.at(k) + 0.5 * quad;
            self.state.tau_w[j] = Gamma::new(post_shape, 1.0 / post_rate)
                .map_err(dist_err)?
                .sample(&mut self.rng)
                .max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// Step 4: the error parameters of every group, in place.
    pub fn sample_error_params(&mut self) -> Result<()> {
        let fixed = self.config.fixed;
        let correlated = self.config.switches.correlated;
        let ep = self.priors.error;
        let widths = self.config.slice;
        for gi in 0..self.groups.len() {
            let g = &self.groups[gi];
            let sum_ln = self.log_var_sums[gi];
            let r = residual(g, &self.state.alpha, &self.state.beta[gi])?;
            let r = r.as_slice();
            let mut params = self.state.error_params[gi];
            // gamma, rho and tau_xi leave ell, and so the kernel, unchanged
            let kernel = XiKernel::new(g.times(), params.ell())?;
            let loglik_with = |k: &XiKernel, p: &ErrorParams| -> f64 {
                match GroupCovariance::with_kernel(Some(k), g.variances(), sum_ln, p) {
                    Ok(c) => c.log_density(r),
                    Err(_) => f64::NEG_INFINITY,
                }
            };
            let loglik = |p: &ErrorParams| loglik_with(&kernel, p);
            let mut evals = 0;

            if !fixed.gamma {
                let target = |u: f64| {
                    let p = with_gamma(params, u.exp());
                    loglik(&p) - ep.gamma.shape * u - ep.gamma.scale * (-u).exp()
                };
                let u0 = params.gamma().ln();
                let d = slice_sample(target, u0, target(u0), &widths.gamma, &mut self.rng)?;
                evals += d.evaluations;
                params = with_gamma(params, d.value.exp());
            }

            match params {
                ErrorParams::CaseII { rho, .. } if correlated && !fixed.rho => {
                    let target = |u: f64| {
                        let p = with_rho(params, logistic(u));
                        // uniform prior; Jacobian rho (1 - rho)
                        loglik(&p) + log_logistic(u) + log_logistic(-u)
                    };
                    let u0 = logit(rho);
                    let d = slice_sample(target, u0, target(u0), &widths.rho, &mut self.rng)?;
                    evals += d.evaluations;
                    params = with_rho(params, logistic(d.value));
                }
                ErrorParams::CaseI { tau_xi, .. } if correlated && !fixed.tau_xi => {
                    let target = |u: f64| {
                        let p = with_tau_xi(params, u.exp());
                        loglik(&p) + ep.tau_xi.shape * u - ep.tau_xi.rate * u.exp()
                    };
                    let u0 = tau_xi.ln();
                    let d = slice_sample(target, u0, target(u0), &widths.tau_xi, &mut self.rng)?;
                    evals += d.evaluations;
                    params = with_tau_xi(params, d.value.exp());
                }
                _ => {}
            }

            if !fixed.ell {
                if has_correlated_part(&params) {
                    let target = |u: f64| {
                        let p = with_ell(params, u.exp());
                        match XiKernel::new(g.times(), p.ell()) {
                            Ok(k) => loglik_with(&k, &p) + ep.ell.shape * u - ep.ell.rate * u.exp(),
                            Err(_) => f64::NEG_INFINITY,
                        }
                    };
                    let u0 = params.ell().ln();
                    let d = slice_sample(target, u0, target(u0), &widths.ell, &mut self.rng)?;
                    evals += d.evaluations;
                    params = with_ell(params, d.value.exp());
                } else {
                    // the likelihood does not involve ell: its conditional is the prior
                    params = with_ell(params, ep.ell.sample(&mut self.rng).max(f64::MIN_POSITIVE));
                }
            }
            self.counters.error_param_evaluations += evals;
            self.state.error_params[gi] = params;
        }
        Ok(())
    }

    /// Runs burn-in plus sampling and returns the stored states.
    pub fn run(mut self) -> Result<ChainOutput> {
        let config_hash = json_hash(&(&self.config, &self.priors))?;
        let n = self.config.n_iterations;
        let mut states = Vec::with_capacity(self.config.n_stored());
        let report_every = (n / 10).max(1);
        for it in 0..n {
            self.sweep().map_err(|e| Error::Iteration {
                iteration: it,
                source: Box::new(e),
            })?;
            if it >= self.config.n_burn_in && (it - self.config.n_burn_in) % self.config.thin == 0 {
                states.push(self.state.clone());
            }
            if (it + 1) % report_every == 0 {
                log::info!("iteration {}/{}", it + 1, n);
            }
        }
        Ok(ChainOutput {
            states,
            counters: self.counters,
            config_hash,
            seed: self.config.seed,
        })
    }
}

/// Runs one chain; needs at least one training group.
pub fn run_chain(
    config: &SamplerConfig,
    groups: &[ObservationGroup],
    basis: &BasisLibrary,
    priors: &Priors,
) -> Result<ChainOutput> {
    if !groups.iter().any(|g| g.role() == Role::Training) {
        return Err(Error::invalid("at least one training group is required"));
    }
    GibbsSampler::new(basis, groups, priors.clone(), config.clone())?.run()
}

/// Prior-centred starting point: alpha = 0, beta = 0, kappa and tau_w at
/// prior means, gamma = 1, rho = 0.5, ell and tau_xi at prior means.
pub fn initial_state(
    basis: &BasisLibrary,
    groups: &[ObservationGroup],
    priors: &Priors,
    switches: &ModelSwitches,
) -> ModelState {
    let (kappa, tau_w): (Vec<f64>, Vec<f64>) = priors
        .alpha
        .regions
        .iter()
        .map(|rp: &RegionPrior| {
            let k = match rp.kappa {
                KappaPrior::Fixed { value } => value,
                KappaPrior::Beta { a, b } => a / (a + b),
            };
            let t = match rp.tau_w {
                TauWPrior::Fixed { value } => value,
                TauWPrior::Gamma { shape, rate } => shape / rate.at(k),
            };
            (k, t)
        })
        .unzip();
    let ell = priors.error.ell.mean();
    let error_params = groups
        .iter()
        .map(|g| match g.error_case() {
            ErrorCase::CaseI => ErrorParams::CaseI {
                gamma: 1.0,
                tau_xi: if switches.correlated {
                    priors.error.tau_xi.mean()
                } else {
                    f64::INFINITY
                },
                ell,
            },
            ErrorCase::CaseII => ErrorParams::CaseII {
                gamma: 1.0,
                rho: if switches.correlated { 0.5 } else { 0.0 },
                ell,
            },
        })
        .collect();
    ModelState {
        alpha: DVector::zeros(basis.len()),
        beta: groups.iter().map(|g| DVector::zeros(g.n_covariates())).collect(),
        kappa,
        tau_w,
        error_params,
    }
}

/// Log full conditional of kappa = logistic(u), including the logit Jacobian.
fn kappa_log_target(
    u: f64,
    alpha_j: &[f64],
    tau: f64,
    a: f64,
    b: f64,
    coupling: Option<(f64, GammaRate)>,
    r_t: usize,
) -> f64 {
    let k = logistic(u);
    if !(k < 1.0) {
        return f64::NEG_INFINITY;
    }
    let log_k = log_logistic(u);
    let log_1mk = log_logistic(-u);
    let q = ar1_structure(k, r_t);
    let mut lp = 0.5 * ar1_log_det(k, r_t) - 0.5 * tau * q.quad_form(alpha_j) + a * log_k + b * log_1mk;
    if let Some((shape, rate)) = coupling {
        let w = rate.at(k);
        lp += shape * w.ln() - w * tau;
    }
    lp
}

fn with_gamma(p: ErrorParams, gamma: f64) -> ErrorParams {
    match p {
        ErrorParams::CaseI { tau_xi, ell, .. } => ErrorParams::CaseI { gamma, tau_xi, ell },
        ErrorParams::CaseII { rho, ell, .. } => ErrorParams::CaseII { gamma, rho, ell },
    }
}

fn with_rho(p: ErrorParams, rho: f64) -> ErrorParams {
    match p {
        ErrorParams::CaseII { gamma, ell, .. } => ErrorParams::CaseII { gamma, rho, ell },
        other => other,
    }
}

fn with_tau_xi(p: ErrorParams, tau_xi: f64) -> ErrorParams {
    match p {
        ErrorParams::CaseI { gamma, ell, .. } => ErrorParams::CaseI { gamma, tau_xi, ell },
        other => other,
    }
}

fn with_ell(p: ErrorParams, ell: f64) -> ErrorParams {
    match p {
        ErrorParams::CaseI { gamma, tau_xi, .. } => ErrorParams::CaseI { gamma, tau_xi, ell },
        ErrorParams::CaseII { gamma, rho, .. } => ErrorParams::CaseII { gamma, rho, ell },
    }
}

pub(crate) fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log(logistic(u)), stable in both tails.
pub(crate) fn log_logistic(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
