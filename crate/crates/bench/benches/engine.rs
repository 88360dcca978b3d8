use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fluxinv_core::markov::group_loglik;
use fluxinv_core::model::{ErrorCase, ErrorParams, GroupInput, ObservationGroup, Role};
use fluxinv_core::nalgebra::{DMatrix, DVector};
use fluxinv_core::osse::{build_layout, generate_replicate, DeskDesign, OsseSpec};
use fluxinv_core::sampler::{GibbsSampler, Priors, SamplerConfig};
use fluxinv_core::transport::{run_transport, SurrogateGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn group(m: usize, r: usize) -> ObservationGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
    ObservationGroup::new(GroupInput {
        id: "bench".into(),
        times: (0..m).map(|i| 10.0 * i as f64).collect(),
        values: (0..m).map(|_| 400.0 + rng.random::<f64>()).collect(),
        prior_mean: vec![400.0; m],
        variances: (0..m).map(|_| rng.random_range(0.5..1.5)).collect(),
        covariates: DMatrix::from_fn(m, 3, |_, _| rng.random::<f64>()),
        response: DMatrix::from_fn(m, r, |_, _| rng.random::<f64>()),
        error_case: ErrorCase::CaseII,
        role: Role::Training,
    })
    .unwrap()
}

fn loglik_scaling(c: &mut Criterion) {
    let mut g = c.benchmark_group("group_loglik");
    let params = ErrorParams::CaseII {
        gamma: 1.25,
        rho: 0.8,
        ell: 1.0,
    };
    for m in [1_000, 10_000, 100_000] {
        let grp = group(m, 8);
        let alpha = DVector::from_element(8, 0.1);
        let beta = DVector::from_element(3, 0.2);
        g.throughput(Throughput::Elements(m as u64));
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| group_loglik(black_box(&grp), &alpha, &beta, &params).unwrap())
        });
    }
    g.finish();
}

fn transport(c: &mut Criterion) {
    let grid = SurrogateGrid::default();
    let n = grid.n_cells();
    let fluxes: Vec<Vec<f64>> = (0..48).map(|t| (0..n).map(|i| ((i + t) % 7) as f64).collect()).collect();
    let initial = vec![400.0; n];
    c.bench_function("transport_48_steps", |b| {
        b.iter(|| run_transport(&grid, black_box(&fluxes), &initial).unwrap())
    });
    let design = DeskDesign::default();
    let mut g = c.benchmark_group("surrogate_layout");
    g.sample_size(10);
    g.bench_function("desk", |b| b.iter(|| build_layout(black_box(&design)).unwrap()));
    g.finish();
}

fn gibbs_sweep(c: &mut Criterion) {
    let spec = OsseSpec::default();
    let layout = build_layout(&spec.design).unwrap();
    let priors = Priors::defaults_for(&layout.basis);
    let data = generate_replicate(&spec, &layout, &priors, 0).unwrap();
    let training: Vec<ObservationGroup> = data
        .groups
        .iter()
        .filter(|g| g.role() == Role::Training)
        .cloned()
        .collect();
    let mut s = GibbsSampler::new(&data.basis, &training, priors, SamplerConfig::default()).unwrap();
    for _ in 0..50 {
        s.sweep().unwrap();
    }
    let mut g = c.benchmark_group("gibbs");
    g.sample_size(20);
    g.bench_function("desk_sweep", |b| b.iter(|| s.sweep().unwrap()));
    g.finish();
}

criterion_group!(benches, loglik_scaling, transport, gibbs_sweep);
criterion_main!(benches);
