//! Short OSSE chain shared by the scoring round-trip and holdout checks.

use std::sync::OnceLock;

use fluxinv_core::io::{read_chain, write_chain};
use fluxinv_core::model::{ObservationGroup, Role};
use fluxinv_core::osse::{build_layout, generate_replicate, score_crps, score_rmse, OsseData, OsseSpec};
use fluxinv_core::sampler::{run_chain, ChainOutput, Priors, SamplerConfig};
use fluxinv_core::summary::{alpha_matrix, predict_holdout};
use nalgebra::DMatrix;

struct Fixture {
    data: OsseData,
    chain: ChainOutput,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let spec = OsseSpec::default();
        let layout = build_layout(&spec.design).unwrap();
        let priors = Priors::defaults_for(&layout.basis);
        let data = generate_replicate(&spec, &layout, &priors, 3).unwrap();
        let cfg = SamplerConfig {
            n_iterations: 240,
            n_burn_in: 80,
            seed: 77,
            ..SamplerConfig::default()
        };
        let chain = run_chain(&cfg, &data.groups, &data.basis, &priors).unwrap();
        Fixture { data, chain }
    })
}

fn training_ids(groups: &[ObservationGroup]) -> Vec<String> {
    groups.iter().filter(|g| g.role() == Role::Training).map(|g| g.id().to_string()).collect()
}

#[test]
fn scores_recomputed_from_persisted_chain() {
    let f = fixture();
    let basis = &f.data.basis;
    let dir = tempfile::tempdir().unwrap();
    write_chain(dir.path(), &f.chain, basis, &training_ids(&f.data.groups)).unwrap();
    let stored = read_chain(dir.path()).unwrap();

    let in_memory = alpha_matrix(&f.chain.states);
    assert_eq!(stored.alpha, in_memory);
    let rmse = score_rmse(&in_memory, &f.data.alpha_true, basis).unwrap();
    let crps = score_crps(&in_memory, &f.data.alpha_true, basis).unwrap();

    // fluxes are affine in alpha, so the error of the mean flux is f_c times
    // the error of the mean alpha; CRPS by direct pair enumeration
    let a = &stored.alpha;
    let n = a.nrows();
    let integrals = basis.flux_integrals();
    let mut sq = 0.0;
    let mut crps_sum = 0.0;
    for c in 0..a.ncols() {
        let fc = integrals[c];
        let truth = f.data.alpha_true[c];
        let mean_alpha = a.column(c).sum() / n as f64;
        sq += (fc * (mean_alpha - truth)).powi(2);
        let mut abs_err = 0.0;
        let mut pair = 0.0;
        for i in 0..n {
            abs_err += (fc * (a[(i, c)] - truth)).abs();
            for j in 0..n {
                pair += (fc * (a[(i, c)] - a[(j, c)])).abs();
            }
        }
        crps_sum += abs_err / n as f64 - 0.5 * pair / (n * n) as f64;
    }
    let rmse_oracle = (sq / a.ncols() as f64).sqrt();
    let crps_oracle = crps_sum / a.ncols() as f64;
    assert!((rmse - rmse_oracle).abs() <= 1e-10 * rmse_oracle, "{rmse} vs {rmse_oracle}");
    assert!((crps - crps_oracle).abs() <= 1e-10 * crps_oracle, "{crps} vs {crps_oracle}");
}

#[test]
fn holdout_prediction_beats_prior_mean() {
    let f = fixture();
    let holdout = f.data.groups.iter().find(|g| g.role() == Role::Holdout).expect("layout has a holdout group");
    let alpha = alpha_matrix(&f.chain.states);
    let pred = predict_holdout(&alpha, holdout).unwrap();
    let observed = holdout.values().as_slice();
    let posterior = pred.errors(observed).unwrap();
    let prior_only = predict_holdout(&DMatrix::zeros(1, alpha.ncols()), holdout).unwrap();
    let prior = prior_only.errors(observed).unwrap();
    assert!(
        posterior.mse < prior.mse,
        "posterior MSE {} vs prior-mean MSE {}",
        posterior.mse,
        prior.mse
    );
    assert!(posterior.coverage > 0.8, "coverage {}", posterior.coverage);
}
