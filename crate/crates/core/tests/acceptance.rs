//! Acceptance criteria 1-10. Each test writes one PASS/FAIL line straight
//! to stderr (bypassing the capture of the test harness) before asserting.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fluxinv_core::markov::{build_xi_precision, group_loglik, residual};
use fluxinv_core::model::{
    BasisLibrary, ErrorCase, ErrorParams, GammaRate, GroupInput, KappaPrior, ModelState, ObservationGroup,
    RegionPrior, RegionType, Role, TauWPrior,
};
use fluxinv_core::obs_operator::{column_average, RetrievalKernel};
use fluxinv_core::osse::{build_layout, generate_replicate, run_study, simulate_group, Configuration, OsseSpec, ScoreRow};
use fluxinv_core::sampler::{
    run_chain, ErrorPriors, FixedParameters, GammaPrior, GibbsSampler, InverseGammaPrior, ModelSwitches, Priors,
    SamplerConfig,
};
use fluxinv_core::stats::{ks_one_sample, ks_two_sample, GridCdf};
use fluxinv_core::summary::quantile;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, InverseGamma};

fn report(criterion: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] criterion {criterion:>2}: {status}: {detail}");
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t = rng.random_range(0.0..1000.0);
    (0..n)
        .map(|_| {
            t += log_uniform(rng, 1.0, 600.0);
            t
        })
        .collect()
}

fn dense_kernel(times: &[f64], ell: f64, vars: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| {
        (vars[i] * vars[j]).sqrt() * (-(times[i] - times[j]).abs() / (60.0 * ell)).exp()
    })
}

#[test]
fn criterion_01_tridiagonal_precision_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=200);
        let times = random_times(&mut rng, n);
        let ell = log_uniform(&mut rng, 0.05, 20.0);
        let vars: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 0.1, 10.0)).collect();
        let q = build_xi_precision(&times, ell, &vars).unwrap().matrix().to_dense();
        let err = (q * dense_kernel(&times, ell, &vars) - DMatrix::identity(n, n)).amax();
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-8 && elapsed < Duration::from_secs(60);
    report(1, pass, &format!("max |Q Sigma - I| = {worst:.2e} over 200 instances (< 1e-8), {elapsed:.1?}"));
    assert!(pass);
}

fn random_group(rng: &mut ChaCha8Rng, m: usize, r: usize, p: usize) -> ObservationGroup {
    ObservationGroup::new(GroupInput {
        id: "g".into(),
        times: random_times(rng, m),
        values: (0..m).map(|_| 400.0 + rng.sample::<f64, _>(StandardNormal)).collect(),
        prior_mean: (0..m).map(|_| 400.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect(),
        variances: (0..m).map(|_| log_uniform(rng, 0.2, 5.0)).collect(),
        covariates: DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..2.0)),
        response: DMatrix::from_fn(m, r, |_, _| rng.random_range(0.0..1.0)),
        error_case: ErrorCase::CaseII,
        role: Role::Training,
    })
    .unwrap()
}

fn dense_loglik(g: &ObservationGroup, alpha: &DVector<f64>, beta: &DVector<f64>, params: &ErrorParams) -> f64 {
    let m = g.len();
    let split = params.split_variances(g.variances());
    let mut cov = DMatrix::from_diagonal(&DVector::from_column_slice(&split.uncorrelated));
    if let Some(xi) = &split.correlated {
        cov += dense_kernel(g.times(), params.ell(), xi);
    }
    let r = g.values() - g.prior_mean() - g.response() * alpha - g.covariates() * beta;
    let chol = cov.cholesky().expect("dense covariance is positive definite");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = r.dot(&chol.solve(&r));
    -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

#[test]
fn criterion_02_likelihood_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let m = rng.random_range(1..=200);
        // covariates are standardised, which needs at least two distinct rows
        let p = if m < 3 { 0 } else { 2 };
        let g = random_group(&mut rng, m, 3, p);
        let gamma = log_uniform(&mut rng, 0.3, 3.0);
        let ell = log_uniform(&mut rng, 0.1, 10.0);
        let params = match i % 4 {
            0 => ErrorParams::CaseII { gamma, rho: 0.0, ell },
            1 => ErrorParams::CaseII { gamma, rho: 0.5, ell },
            2 => ErrorParams::CaseII { gamma, rho: 0.99, ell },
            _ => ErrorParams::CaseI {
                gamma,
                tau_xi: log_uniform(&mut rng, 0.2, 5.0),
                ell,
            },
        };
        let g = if matches!(params, ErrorParams::CaseI { .. }) {
            g.with_error_case(ErrorCase::CaseI)
        } else {
            g
        };
        let alpha = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fast = group_loglik(&g, &alpha, &beta, &params).unwrap();
        let oracle = dense_loglik(&g, &alpha, &beta, &params);
        worst = worst.max((fast - oracle).abs() / oracle.abs());
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-8 && elapsed < Duration::from_secs(60);
    report(
        2,
        pass,
        &format!("max relative loglik error {worst:.2e} over 100 instances (< 1e-8), {elapsed:.1?}"),
    );
    assert!(pass);
}

fn one_region_basis(n_periods: usize) -> BasisLibrary {
    BasisLibrary::new(
        vec![RegionType::Land],
        vec!["L".into()],
        n_periods,
        vec![1.0; n_periods],
        vec![0.0; n_periods],
    )
    .unwrap()
}

fn fixed_region_priors(basis: &BasisLibrary) -> Priors {
    let mut p = Priors::defaults_for(basis);
    p.alpha.regions[0] = RegionPrior {
        kappa: KappaPrior::Fixed { value: 0.0 },
        tau_w: TauWPrior::Fixed { value: 1.0 },
    };
    p
}

fn plain_group(times: Vec<f64>, values: Vec<f64>, r: usize) -> ObservationGroup {
    let m = times.len();
    ObservationGroup::new(GroupInput {
        id: "toy".into(),
        times,
        values,
        prior_mean: vec![0.0; m],
        variances: vec![1.0; m],
        covariates: DMatrix::zeros(m, 0),
        response: DMatrix::from_fn(m, r, |i, j| 0.1 * ((i + j) % 4) as f64),
        error_case: ErrorCase::CaseII,
        role: Role::Training,
    })
    .unwrap()
}

#[test]
fn criterion_03_conditional_correctness() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;

    // (a) tau_w moments: kappa = 0.5, shape 2, rate 1.5, r_t = 4
    {
        let b = one_region_basis(4);
        let mut priors = Priors::defaults_for(&b);
        priors.alpha.regions[0] = RegionPrior {
            kappa: KappaPrior::Fixed { value: 0.5 },
            tau_w: TauWPrior::Gamma {
                shape: 2.0,
                rate: GammaRate::Constant { value: 1.5 },
            },
        };
        let mut s = GibbsSampler::new(&b, &[], priors, SamplerConfig::default()).unwrap();
        let mut state = s.state().clone();
        let alpha = [0.3, -0.2, 0.5, 0.1];
        state.alpha = DVector::from_column_slice(&alpha);
        s.set_state(state).unwrap();
        // alpha' Q alpha with Q = tridiag(-k; 1, 1+k^2, 1+k^2, 1)
        let k: f64 = 0.5;
        let quad = alpha[0] * alpha[0]
            + alpha[3] * alpha[3]
            + (1.0 + k * k) * (alpha[1] * alpha[1] + alpha[2] * alpha[2])
            - 2.0 * k * alpha.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        let (shape, rate) = (2.0 + 2.0, 1.5 + 0.5 * quad);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                s.sample_tau_w().unwrap();
                s.state().tau_w[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let (m_true, v_true) = (shape / rate, shape / (rate * rate));
        // fourth central moment of a Gamma: 3 shape (shape + 2) / rate^4
        let mu4 = 3.0 * shape * (shape + 2.0) / rate.powi(4);
        let ok_mean = (mean - m_true).abs() < 4.0 * (v_true / n as f64).sqrt();
        let ok_var = (var - v_true).abs() < 4.0 * ((mu4 - v_true * v_true) / n as f64).sqrt();
        pass &= ok_mean && ok_var;
        details.push(format!("tau_w mean {mean:.4}/{m_true:.4} var {var:.4}/{v_true:.4}"));
    }

    // (b1) kappa against a grid oracle, with the kappa-dependent tau_w rate
    {
        let b = one_region_basis(6);
        let mut priors = Priors::defaults_for(&b);
        priors.alpha.regions[0].kappa = KappaPrior::Beta { a: 2.0, b: 1.5 };
        let mut s = GibbsSampler::new(&b, &[], priors, SamplerConfig::default()).unwrap();
        let alpha = [0.4, 0.5, 0.2, -0.1, 0.3, 0.6];
        let mut state = s.state().clone();
        state.alpha = DVector::from_column_slice(&alpha);
        state.tau_w = vec![3.0];
        s.set_state(state).unwrap();
        let draws: Vec<f64> = (0..15_000)
            .filter_map(|i| {
                s.sample_kappa().unwrap();
                (i % 3 == 0).then(|| s.state().kappa[0])
            })
            .collect();
        let (shape, factor) = match RegionPrior::land_default().tau_w {
            TauWPrior::Gamma {
                shape,
                rate: GammaRate::KappaScaled { factor },
            } => (shape, factor),
            other => panic!("unexpected land default {other:?}"),
        };
        let log_density = |k: f64| {
            if k <= 0.0 || k >= 1.0 {
                return f64::NEG_INFINITY;
            }
            let mut quad = alpha[0] * alpha[0] + alpha[5] * alpha[5];
            for a in &alpha[1..5] {
                quad += (1.0 + k * k) * a * a;
            }
            for w in alpha.windows(2) {
                quad -= 2.0 * k * w[0] * w[1];
            }
            let omega = factor * (1.0 - k * k);
            0.5 * (1.0 - k * k).ln() - 1.5 * quad + k.ln() + 0.5 * (1.0 - k).ln() + shape * omega.ln() - omega * 3.0
        };
        let grid = GridCdf::new(log_density, 0.0, 1.0, 20_000);
        let p = ks_one_sample(&draws, |x| grid.eval(x));
        pass &= p > 0.01;
        details.push(format!("kappa KS p {p:.3}"));
    }

    // (b2) ell against a grid oracle on three observations
    {
        let b = one_region_basis(1);
        let t = [0.0, 30.0, 100.0];
        let z = [0.8, 0.5, -0.3];
        // zero response, so alpha drops out of the likelihood
        let g = ObservationGroup::new(GroupInput {
            id: "toy".into(),
            times: t.to_vec(),
            values: z.to_vec(),
            prior_mean: vec![0.0; 3],
            variances: vec![1.0; 3],
            covariates: DMatrix::zeros(3, 0),
            response: DMatrix::zeros(3, 1),
            error_case: ErrorCase::CaseII,
            role: Role::Training,
        })
        .unwrap();
        let cfg = SamplerConfig {
            fixed: FixedParameters {
                gamma: true,
                rho: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut s = GibbsSampler::new(&b, &[g], fixed_region_priors(&b), cfg).unwrap();
        let mut state = s.state().clone();
        state.error_params[0] = ErrorParams::CaseII {
            gamma: 1.0,
            rho: 0.9,
            ell: 1.0,
        };
        s.set_state(state).unwrap();
        let draws: Vec<f64> = (0..15_000)
            .filter_map(|i| {
                s.sample_error_params().unwrap();
                (i % 3 == 0).then(|| s.state().error_params[0].ell())
            })
            .collect();
        let log_density = |ell: f64| {
            if ell <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let cov = DMatrix::from_fn(3, 3, |i, j| {
                0.9 * (-(t[i] - t[j]).abs() / (60.0 * ell)).exp() + if i == j { 0.1 } else { 0.0 }
            });
            let zv = DVector::from_column_slice(&z);
            let q = zv.dot(&(cov.clone().try_inverse().unwrap() * &zv));
            -0.5 * cov.determinant().ln() - 0.5 * q - ell
        };
        let grid = GridCdf::new(log_density, 0.0, 40.0, 200_000);
        let p = ks_one_sample(&draws, |x| grid.eval(x));
        pass &= p > 0.01;
        details.push(format!("ell KS p {p:.3}"));
    }

    // (c) gamma at rho = 0 against the conjugate inverse gamma
    {
        let b = one_region_basis(2);
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let m = 30;
        let g = plain_group(
            (0..m).map(|i| 20.0 * i as f64).collect(),
            (0..m).map(|_| 1.3 * rng.sample::<f64, _>(StandardNormal)).collect(),
            2,
        );
        let cfg = SamplerConfig {
            switches: ModelSwitches {
                correlated: false,
                ..Default::default()
            },
            fixed: FixedParameters {
                ell: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut s = GibbsSampler::new(&b, std::slice::from_ref(&g), fixed_region_priors(&b), cfg).unwrap();
        let mut state = s.state().clone();
        state.alpha = DVector::from_vec(vec![0.2, -0.4]);
        s.set_state(state.clone()).unwrap();
        let r = residual(&g, &state.alpha, &DVector::zeros(0)).unwrap();
        let ss: f64 = r.iter().zip(g.variances()).map(|(x, v)| x * x / v).sum();
        let e = ErrorPriors::default();
        let ig = InverseGamma::new(e.gamma.shape + 0.5 * m as f64, e.gamma.scale + 0.5 * ss).unwrap();
        let draws: Vec<f64> = (0..15_000)
            .filter_map(|i| {
                s.sample_error_params().unwrap();
                (i % 3 == 0).then(|| s.state().error_params[0].gamma())
            })
            .collect();
        let p = ks_one_sample(&draws, |x| ig.cdf(x));
        pass &= p > 0.01;
        details.push(format!("gamma KS p {p:.3}"));
    }

    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    report(3, pass, &format!("{}, {elapsed:.1?}", details.join(", ")));
    assert!(pass);
}

/// Tiny model for the successive-conditional check. Priors on alpha and beta
/// are kept tight enough that the chain mixes in a few sweeps; with flat
/// priors the data pin beta and the thinned draws stay autocorrelated.
fn gir_setup() -> (BasisLibrary, Vec<ObservationGroup>, Priors) {
    let basis = BasisLibrary::new(
        vec![RegionType::Land, RegionType::Ocean],
        vec!["L".into(), "O".into()],
        3,
        vec![1.0; 6],
        vec![0.0; 6],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mk = |rng: &mut ChaCha8Rng, id: &str, case| {
        let m = 20;
        ObservationGroup::new(GroupInput {
            id: id.into(),
            times: (0..m).map(|i| 30.0 * i as f64).collect(),
            values: vec![0.0; m],
            prior_mean: vec![0.0; m],
            variances: (0..m).map(|_| rng.random_range(0.5..1.5)).collect(),
            covariates: DMatrix::from_fn(m, 1, |_, _| rng.random_range(0.0..2.0)),
            response: DMatrix::from_fn(m, 6, |_, _| rng.random_range(0.0..1.0)),
            error_case: case,
            role: Role::Training,
        })
        .unwrap()
    };
    let groups = vec![mk(&mut rng, "c1", ErrorCase::CaseI), mk(&mut rng, "c2", ErrorCase::CaseII)];
    let priors = Priors {
        alpha: fluxinv_core::model::AlphaPrior {
            regions: vec![
                RegionPrior {
                    kappa: KappaPrior::Beta { a: 2.0, b: 2.0 },
                    tau_w: TauWPrior::Gamma {
                        shape: 3.0,
                        rate: GammaRate::KappaScaled { factor: 0.2 },
                    },
                },
                RegionPrior::ocean_default(),
            ],
        },
        beta_variance: 0.05,
        error: ErrorPriors {
            gamma: InverseGammaPrior { shape: 3.0, scale: 2.0 },
            ell: GammaPrior { shape: 3.0, rate: 3.0 },
            tau_xi: GammaPrior { shape: 3.0, rate: 3.0 },
        },
    };
    (basis, groups, priors)
}

fn gir_scalars(s: &ModelState) -> Vec<(String, f64)> {
    let mut out = vec![
        ("kappa_L".to_string(), s.kappa[0]),
        ("log_tau_w_L".to_string(), s.tau_w[0].ln()),
        ("alpha_L1".to_string(), s.alpha[0]),
        ("alpha_L3".to_string(), s.alpha[2]),
        ("alpha_O1".to_string(), s.alpha[3]),
        ("beta_c1".to_string(), s.beta[0][0]),
        ("beta_c2".to_string(), s.beta[1][0]),
    ];
    for (g, p) in s.error_params.iter().enumerate() {
        out.push((format!("log_gamma_{g}"), p.gamma().ln()));
        out.push((format!("log_ell_{g}"), p.ell().ln()));
        match *p {
            ErrorParams::CaseI { tau_xi, .. } => out.push((format!("log_tau_xi_{g}"), tau_xi.ln())),
            ErrorParams::CaseII { rho, .. } => out.push((format!("rho_{g}"), rho)),
        }
    }
    out
}

#[test]
fn criterion_04_getting_it_right() {
    let start = Instant::now();
    let (basis, groups, priors) = gir_setup();
    let n = 10_000;
    let thin = 20;
    let switches = ModelSwitches::default();
    let mut rng = ChaCha8Rng::seed_from_u64(405);

    let prior_draws: Vec<Vec<(String, f64)>> = (0..n)
        .map(|_| gir_scalars(&priors.sample_state(&basis, &groups, &switches, &mut rng).unwrap()))
        .collect();

    let cfg = SamplerConfig {
        seed: 406,
        ..SamplerConfig::default()
    };
    let mut s = GibbsSampler::new(&basis, &groups, priors.clone(), cfg).unwrap();
    let resimulate = |s: &mut GibbsSampler, rng: &mut ChaCha8Rng| {
        let state = s.state().clone();
        for gi in 0..s.groups().len() {
            let z = simulate_group(&s.groups()[gi], &state.alpha, &state.beta[gi], &state.error_params[gi], rng).unwrap();
            s.set_group_values(gi, z).unwrap();
        }
    };
    let init = priors.sample_state(&basis, s.groups(), &switches, &mut rng).unwrap();
    s.set_state(init).unwrap();
    resimulate(&mut s, &mut rng);
    let mut chain_draws = Vec::with_capacity(n);
    for i in 0..n * thin {
        s.sweep().unwrap();
        resimulate(&mut s, &mut rng);
        if i % thin == thin - 1 {
            chain_draws.push(gir_scalars(s.state()));
        }
    }

    let mut worst = (String::new(), 1.0f64);
    let mut all = Vec::new();
    for k in 0..prior_draws[0].len() {
        let a: Vec<f64> = prior_draws.iter().map(|d| d[k].1).collect();
        let b: Vec<f64> = chain_draws.iter().map(|d| d[k].1).collect();
        let p = ks_two_sample(&a, &b);
        all.push(format!("{}={p:.3}", prior_draws[0][k].0));
        if p < worst.1 {
            worst = (prior_draws[0][k].0.clone(), p);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.1 > 0.001 && elapsed < Duration::from_secs(1200);
    report(
        4,
        pass,
        &format!(
            "min KS p {:.4} ({}) over {} marginals, {n} samples thinned by {thin}, {elapsed:.1?}",
            worst.1,
            worst.0,
            all.len()
        ),
    );
    let _ = writeln!(std::io::stderr().lock(), "[acceptance]   per-marginal p: {}", all.join(" "));
    assert!(pass);
}

struct Study {
    rows: Vec<ScoreRow>,
    elapsed: Duration,
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let spec = OsseSpec::default();
        let layout = build_layout(&spec.design).unwrap();
        let priors = Priors::defaults_for(&layout.basis);
        let cfg = fluxinv_core::config::RunConfig::default().study_sampler();
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let rows = run_study(&spec, &priors, &cfg, threads).unwrap();
        Study {
            rows,
            elapsed: start.elapsed(),
        }
    })
}

fn by_replicate(rows: &[ScoreRow]) -> Vec<Vec<&ScoreRow>> {
    let n = rows.iter().map(|r| r.replicate).max().map_or(0, |m| m + 1);
    (0..n).map(|i| rows.iter().filter(|r| r.replicate == i).collect()).collect()
}

fn row<'a>(rows: &[&'a ScoreRow], c: Configuration) -> &'a ScoreRow {
    rows.iter().find(|r| r.configuration == c).copied().expect("configuration present")
}

#[test]
fn criterion_05_configuration_ordering() {
    let st = study();
    let reps = by_replicate(&st.rows);
    let (mut best, mut worst) = (0, 0);
    for r in &reps {
        let full = row(r, Configuration::BiasCorrelated);
        let none = row(r, Configuration::Neither);
        best += usize::from(r.iter().all(|x| full.rmse <= x.rmse && full.crps <= x.crps));
        worst += usize::from(r.iter().all(|x| none.rmse >= x.rmse && none.crps >= x.crps));
    }
    let n = reps.len();
    let need = (0.8 * n as f64).ceil() as usize;
    let mean = |c: Configuration, f: fn(&ScoreRow) -> f64| {
        reps.iter().map(|r| f(row(r, c))).sum::<f64>() / n as f64
    };
    let pass = n >= 20 && best >= need && worst >= need && st.elapsed < Duration::from_secs(7200);
    report(
        5,
        pass,
        &format!(
            "full model best in {best}/{n}, no-correction worst in {worst}/{n} (need {need}); mean RMSE {:.4} {:.4} {:.4} {:.4}; study {:.1?}",
            mean(Configuration::BiasCorrelated, |r| r.rmse),
            mean(Configuration::BiasOnly, |r| r.rmse),
            mean(Configuration::CorrelatedOnly, |r| r.rmse),
            mean(Configuration::Neither, |r| r.rmse),
            st.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_bias_recovery() {
    let st = study();
    let reps = by_replicate(&st.rows);
    let ok = reps
        .iter()
        .filter(|r| {
            let full = row(r, Configuration::BiasCorrelated);
            full.beta_total > 0 && full.beta_within_3sd == full.beta_total
        })
        .count();
    let pass = reps.len() >= 20 && ok >= 18;
    report(
        6,
        pass,
        &format!("all bias coefficients within 3 sd in {ok}/{} replicates (need 18/20)", reps.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_07_coverage() {
    let st = study();
    let (covered, cells) = st
        .rows
        .iter()
        .filter(|r| r.configuration == Configuration::BiasCorrelated)
        .fold((0, 0), |(c, n), r| (c + r.covered, n + r.cells));
    let rate = covered as f64 / cells as f64;
    let pass = (0.88..=0.99).contains(&rate);
    report(7, pass, &format!("95% interval coverage {covered}/{cells} = {rate:.3} (need [0.88, 0.99])"));
    assert!(pass);
}

#[test]
fn invariant_uncorrelated_intervals_are_narrower() {
    let st = study();
    let median = |c: Configuration| {
        let w: Vec<f64> = st.rows.iter().filter(|r| r.configuration == c).map(|r| r.median_width).collect();
        quantile(&w, 0.5)
    };
    let bias = (median(Configuration::BiasCorrelated), median(Configuration::BiasOnly));
    let nobias = (median(Configuration::CorrelatedOnly), median(Configuration::Neither));
    let _ = writeln!(
        std::io::stderr().lock(),
        "[acceptance] invariant: median interval width corr on/off {:.4}/{:.4} (bias on), {:.4}/{:.4} (bias off)",
        bias.0,
        bias.1,
        nobias.0,
        nobias.1
    );
    assert!(bias.1 < bias.0 && nobias.1 < nobias.0);
}

#[test]
fn criterion_08_prior_implied_percentiles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 1_000_000;
    let land = RegionPrior::land_default();
    let (a, b) = match land.kappa {
        KappaPrior::Beta { a, b } => (a, b),
        other => panic!("unexpected land kappa prior {other:?}"),
    };
    let (shape, rate) = match land.tau_w {
        TauWPrior::Gamma { shape, rate } => (shape, rate),
        other => panic!("unexpected land tau_w prior {other:?}"),
    };
    let beta = Beta::new(a, b).unwrap();
    // stationary variance of alpha: 1 / (tau_w (1 - kappa^2))
    let land_var: Vec<f64> = (0..n)
        .map(|_| {
            let k: f64 = beta.sample(&mut rng);
            let t = Gamma::new(shape, 1.0 / rate.at(k)).unwrap().sample(&mut rng);
            1.0 / (t * (1.0 - k * k))
        })
        .collect();
    let e = ErrorPriors::default();
    let inv = Gamma::new(e.gamma.shape, 1.0 / e.gamma.scale).unwrap();
    let gamma: Vec<f64> = (0..n).map(|_| 1.0 / inv.sample(&mut rng)).collect();
    let q = |x: &[f64], p: f64| quantile(x, p);
    let within = |est: f64, target: f64| (est / target - 1.0).abs() <= 0.10;
    let (l5, l95, g5, g95) = (q(&land_var, 0.05), q(&land_var, 0.95), q(&gamma, 0.05), q(&gamma, 0.95));
    let checks = [
        ("land var p5", l5, 0.01),
        ("land var p95", l95, 10.0),
        ("gamma p5", g5, 0.5),
        ("gamma p95", g95, 10.0),
    ];
    let elapsed = start.elapsed();
    let pass = checks.iter().all(|(_, e, t)| within(*e, *t)) && elapsed < Duration::from_secs(60);
    let detail = checks
        .iter()
        .map(|(name, e, t)| format!("{name} {e:.4} vs {t} [{}]", if within(*e, *t) { "ok" } else { "off" }))
        .collect::<Vec<_>>()
        .join(", ");
    report(8, pass, &format!("{detail}, {elapsed:.1?}"));
    // cross-check of the gamma sampler against the exact inverse-gamma quantile
    let exact = InverseGamma::new(e.gamma.shape, e.gamma.scale).unwrap();
    assert!((exact.inverse_cdf(0.05) / g5 - 1.0).abs() < 0.01);
    assert!(pass);
}

#[test]
fn criterion_09_observation_operator() {
    let mut errs = Vec::new();
    // profile equal to the prior returns the prior column
    let k = RetrievalKernel::new(vec![0.2, 0.3, 0.5], vec![0.9, 0.7, 0.4], vec![398.0, 401.0, 405.0]).unwrap();
    errs.push((column_average(&k, &[398.0, 401.0, 405.0]).unwrap() - k.prior_column()).abs());
    // unit averaging kernel gives c' profile
    let k = RetrievalKernel::new(vec![0.25, 0.25, 0.5], vec![1.0; 3], vec![390.0, 395.0, 410.0]).unwrap();
    let profile = [402.0, 407.5, 399.25];
    let direct = 0.25 * 402.0 + 0.25 * 407.5 + 0.5 * 399.25;
    errs.push((column_average(&k, &profile).unwrap() - direct).abs());
    // hand-evaluated two-level case
    let k = RetrievalKernel::new(vec![0.5, 0.5], vec![1.0, 0.5], vec![400.0, 400.0]).unwrap();
    errs.push((column_average(&k, &[402.0, 404.0]).unwrap() - 402.0).abs());
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let pass = worst <= 1e-12;
    report(9, pass, &format!("three operator examples, max abs error {worst:.1e} (<= 1e-12)"));
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let spec = OsseSpec::default();
    let layout = build_layout(&spec.design).unwrap();
    let priors = Priors::defaults_for(&layout.basis);
    let data = generate_replicate(&spec, &layout, &priors, 0).unwrap();
    let cfg = SamplerConfig {
        n_iterations: 60,
        n_burn_in: 20,
        seed: 1010,
        ..SamplerConfig::default()
    };
    let ids: Vec<String> = data
        .groups
        .iter()
        .filter(|g| g.role() == Role::Training)
        .map(|g| g.id().to_string())
        .collect();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        let chain = run_chain(&cfg, &data.groups, &data.basis, &priors).unwrap();
        files.push(fluxinv_core::io::write_chain(d.path(), &chain, &data.basis, &ids).unwrap());
    }
    let mut identical = files[0].len() == files[1].len();
    for (a, b) in files[0].iter().zip(&files[1]) {
        identical &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    }
    report(
        10,
        identical,
        &format!("{} chain files byte-identical across two runs with seed 1010", files[0].len()),
    );
    assert!(identical);
}
