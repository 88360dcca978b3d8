use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fluxinv_core::config::{Paths, RunConfig};
use fluxinv_core::io::{self, Manifest, MANIFEST_FILE};
use fluxinv_core::model::{ErrorCase, ObservationGroup, RegionType, Role};
use fluxinv_core::osse::{self, OsseLayout};
use fluxinv_core::sampler::{run_chain, Priors};
use fluxinv_core::summary::{self, FluxScope};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fluxinv", version, about = "Bayesian CO2 flux inversion with a desk-scale OSSE harness")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the sampler seed and the OSSE base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Worker threads for osse-study (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the surrogate basis, response matrix and observation layout.
    SurrogateBasis,
    /// Simulate a truth and observations on a surrogate layout.
    OsseGenerate {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Run one inversion chain on a dataset.
    Run {
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Replicates x four configurations, written as a score table.
    OsseStudy,
    /// Flux aggregates, holdout predictions and chain diagnostics.
    Summarize {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        chain_dir: PathBuf,
    },
}

struct Env {
    config: RunConfig,
    hash: String,
    seed: u64,
    out: PathBuf,
    threads: usize,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = try_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn try_main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let ctx = Env {
        hash: config.hash()?,
        seed: config.sampler.seed,
        config,
        out: cli.output_dir.clone(),
        threads: cli
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    std::fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    match cli.command {
        Command::SurrogateBasis => surrogate_basis(&ctx),
        Command::OsseGenerate { data_dir, replicate } => osse_generate(&ctx, &data_dir, replicate),
        Command::Run { data_dir } => run(&ctx, &data_dir),
        Command::OsseStudy => osse_study(&ctx),
        Command::Summarize { data_dir, chain_dir } => summarize(&ctx, &data_dir, &chain_dir),
    }
}

fn error_case(ctx: &Env) -> ErrorCase {
    ctx.config.error_case.unwrap_or(ErrorCase::CaseII)
}

fn dataset_files(p: &Paths) -> Vec<&Path> {
    let mut files = vec![p.basis.as_path(), p.observations.as_path(), p.response.as_path()];
    if p.kernels.exists() {
        files.push(p.kernels.as_path());
    }
    files
}

/// Reads the manifest of an upstream directory and refuses artifacts that
/// were produced under another configuration or edited since.
fn check_lineage(ctx: &Env, dir: &Path, files: &[&Path]) -> Result<Manifest> {
    let m = Manifest::read(dir).with_context(|| format!("reading {} in {}", MANIFEST_FILE, dir.display()))?;
    if m.config_hash != ctx.hash {
        bail!(
            "{} was written by '{}' under config hash {}, but the current config hashes to {}; \
             refusing to mix artifacts from different configurations",
            dir.display(),
            m.command,
            m.config_hash,
            ctx.hash
        );
    }
    m.verify_outputs(files)?;
    Ok(m)
}

fn load_dataset(ctx: &Env, dir: &Path) -> Result<(Paths, fluxinv_core::model::BasisLibrary, Vec<ObservationGroup>)> {
    let paths = ctx.config.paths.resolved(dir);
    check_lineage(ctx, dir, &dataset_files(&paths))?;
    let (basis, groups) = io::load_inputs(&paths, error_case(ctx)).with_context(|| format!("loading dataset from {}", dir.display()))?;
    Ok((paths, basis, groups))
}

fn finish(ctx: &Env, mut manifest: Manifest, outputs: &[PathBuf]) -> Result<()> {
    for o in outputs {
        manifest.add_output(o)?;
    }
    let path = manifest.write(&ctx.out)?;
    log::info!("wrote {} files and {}", outputs.len(), path.display());
    Ok(())
}

fn written(p: &Paths) -> Vec<PathBuf> {
    vec![p.basis.clone(), p.observations.clone(), p.response.clone(), p.kernels.clone()]
}

fn surrogate_basis(ctx: &Env) -> Result<()> {
    let layout = osse::build_layout(&ctx.config.osse.design)?;
    let kernels: Vec<_> = layout.kernels.concat();
    let paths = io::write_dataset(&ctx.out, &layout.basis, &layout.groups, &kernels)?;
    log::info!(
        "surrogate basis: {} regions x {} periods, {} observations in {} groups",
        layout.basis.n_regions(),
        layout.basis.n_periods(),
        layout.groups.iter().map(|g| g.len()).sum::<usize>(),
        layout.groups.len()
    );
    finish(ctx, Manifest::new("surrogate-basis", &ctx.hash, ctx.seed), &written(&paths))
}

fn osse_generate(ctx: &Env, data_dir: &Path, replicate: usize) -> Result<()> {
    let (paths, basis, groups) = load_dataset(ctx, data_dir)?;
    let kernels = if paths.kernels.exists() {
        io::read_kernels(&paths.kernels)?
    } else {
        Vec::new()
    };
    let priors = ctx.config.priors.for_basis(&basis)?;
    let layout = OsseLayout {
        basis,
        groups,
        kernels: Vec::new(),
    };
    let data = osse::generate_replicate(&ctx.config.osse, &layout, &priors, replicate)?;
    let out_paths = io::write_dataset(&ctx.out, &data.basis, &data.groups, &kernels)?;
    let truth = ctx.out.join("truth.csv");
    io::write_truth(&truth, &data.basis, &data.alpha_true)?;
    let mut m = Manifest::new("osse-generate", &ctx.hash, data.seed);
    for f in dataset_files(&paths) {
        m.add_input(f)?;
    }
    let mut outputs = written(&out_paths);
    outputs.push(truth);
    finish(ctx, m, &outputs)
}

fn training_ids(groups: &[ObservationGroup]) -> Vec<String> {
    groups
        .iter()
        .filter(|g| g.role() == Role::Training)
        .map(|g| g.id().to_string())
        .collect()
}

fn run(ctx: &Env, data_dir: &Path) -> Result<()> {
    let (paths, basis, groups) = load_dataset(ctx, data_dir)?;
    let priors = ctx.config.priors.for_basis(&basis)?;
    let chain = run_chain(&ctx.config.sampler, &groups, &basis, &priors)?;
    let c = &chain.counters;
    log::info!("chain done: {} samples kept, counters {c:?}", chain.states.len());
    let outputs = io::write_chain(&ctx.out, &chain, &basis, &training_ids(&groups))?;
    let mut m = Manifest::new("run", &ctx.hash, ctx.seed);
    for f in dataset_files(&paths) {
        m.add_input(f)?;
    }
    finish(ctx, m, &outputs)
}

fn osse_study(ctx: &Env) -> Result<()> {
    let spec = &ctx.config.osse;
    // the study builds its own layout; the basis is needed here for priors
    let layout = osse::build_layout(&spec.design)?;
    let priors: Priors = ctx.config.priors.for_basis(&layout.basis)?;
    let sampler = ctx.config.study_sampler();
    log::info!(
        "osse study: {} replicates x 4 configurations, {} iterations each, {} threads",
        spec.n_replicates,
        sampler.n_iterations,
        ctx.threads
    );
    let rows = osse::run_study(spec, &priors, &sampler, ctx.threads)?;
    let table = ctx.out.join("scores.csv");
    io::write_score_table(&table, &rows)?;
    finish(ctx, Manifest::new("osse-study", &ctx.hash, spec.base_seed), &[table])
}

#[derive(Serialize)]
struct FluxRow<'a> {
    scope: &'a str,
    mean: f64,
    sd: f64,
    q025: f64,
    q975: f64,
    truth: Option<f64>,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    group: &'a str,
    time_unix_s: f64,
    observed: f64,
    mean: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct HoldoutRow<'a> {
    group: &'a str,
    n: usize,
    mean_error: f64,
    sd_error: f64,
    mse: f64,
    prior_mse: f64,
    coverage: f64,
}

#[derive(Serialize)]
struct TruthScores {
    rmse: f64,
    crps: f64,
    covered: usize,
    cells: usize,
    median_width: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(ctx: &Env, data_dir: &Path, chain_dir: &Path) -> Result<()> {
    let (paths, basis, groups) = load_dataset(ctx, data_dir)?;
    let chain_files: Vec<PathBuf> = ["alpha.bin", "beta.csv", "hyper.csv", "error.csv", "chain_meta.json"]
        .iter()
        .map(|f| chain_dir.join(f))
        .collect();
    let chain_manifest = check_lineage(ctx, chain_dir, &chain_files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    chain_manifest
        .verify_inputs(&dataset_files(&paths))
        .context("the chain was not run on this dataset")?;
    let chain = io::read_chain(chain_dir)?;
    let alpha = &chain.alpha;

    let truth_path = data_dir.join("truth.csv");
    let truth = if truth_path.exists() {
        check_lineage(ctx, data_dir, &[truth_path.as_path()])?;
        Some(io::read_truth(&truth_path, &basis)?)
    } else {
        None
    };
    let truth_fluxes = truth.as_ref().map(|t| basis.fluxes(t.as_slice()));

    let mut scopes = vec![FluxScope::global(&basis)];
    for kind in [RegionType::Land, RegionType::Ocean] {
        if basis.region_types().contains(&kind) {
            scopes.push(FluxScope::of_type(&basis, kind));
        }
    }
    scopes.extend(FluxScope::all_cells(&basis));
    let mut flux_rows = Vec::new();
    for scope in &scopes {
        let agg = summary::aggregate_flux(alpha, &basis, scope)?;
        let truth = match &truth_fluxes {
            Some(tf) => Some(scope.columns(&basis)?.iter().map(|&c| tf[c]).sum::<f64>()),
            None => None,
        };
        flux_rows.push((agg, truth));
    }
    let fluxes_path = ctx.out.join("fluxes.csv");
    write_rows(
        &fluxes_path,
        flux_rows.iter().map(|(a, t)| FluxRow {
            scope: &a.scope,
            mean: a.mean,
            sd: a.sd,
            q025: a.q025,
            q975: a.q975,
            truth: *t,
        }),
    )?;

    let diag_path = ctx.out.join("diagnostics.csv");
    write_rows(&diag_path, chain.traces.iter().map(|(name, t)| summary::summarize_trace(name, t)))?;

    let mut outputs = vec![fluxes_path, diag_path];
    let holdouts: Vec<&ObservationGroup> = groups.iter().filter(|g| g.role() == Role::Holdout).collect();
    if !holdouts.is_empty() {
        let mut preds = Vec::new();
        let mut stats = Vec::new();
        let prior_alpha = fluxinv_core::nalgebra::DMatrix::zeros(1, alpha.ncols());
        for g in &holdouts {
            let p = summary::predict_holdout(alpha, g)?;
            let observed = g.values().as_slice();
            let e = p.errors(observed)?;
            let prior = summary::predict_holdout(&prior_alpha, g)?.errors(observed)?;
            stats.push((g.id(), g.len(), e, prior.mse));
            for (i, (&t, &o)) in g.times().iter().zip(observed).enumerate() {
                preds.push((g.id(), t, o, p.mean[i], p.lower[i], p.upper[i]));
            }
        }
        let pred_path = ctx.out.join("holdout_predictions.csv");
        write_rows(
            &pred_path,
            preds.iter().map(|&(group, time_unix_s, observed, mean, lower, upper)| PredictionRow {
                group,
                time_unix_s,
                observed,
                mean,
                lower,
                upper,
            }),
        )?;
        let hold_path = ctx.out.join("holdout.csv");
        write_rows(
            &hold_path,
            stats.iter().map(|&(group, n, e, prior_mse)| HoldoutRow {
                group,
                n,
                mean_error: e.mean,
                sd_error: e.sd,
                mse: e.mse,
                prior_mse,
                coverage: e.coverage,
            }),
        )?;
        for (group, _, e, prior_mse) in &stats {
            log::info!("holdout {group}: mse {:.4} (prior mean {:.4}), coverage {:.3}", e.mse, prior_mse, e.coverage);
        }
        outputs.push(pred_path);
        outputs.push(hold_path);
    }

    if let Some(t) = &truth {
        let iv = osse::score_intervals(alpha, t, &basis)?;
        let scores = TruthScores {
            rmse: osse::score_rmse(alpha, t, &basis)?,
            crps: osse::score_crps(alpha, t, &basis)?,
            covered: iv.covered,
            cells: iv.cells,
            median_width: iv.median_width,
        };
        log::info!("against truth: rmse {:.5}, crps {:.5}, coverage {}/{}", scores.rmse, scores.crps, scores.covered, scores.cells);
        let path = ctx.out.join("truth_scores.csv");
        write_rows(&path, [scores])?;
        outputs.push(path);
    }

    let mut m = Manifest::new("summarize", &ctx.hash, chain.meta.seed);
    for f in dataset_files(&paths).into_iter().chain(chain_files.iter().map(PathBuf::as_path)) {
        m.add_input(f)?;
    }
    finish(ctx, m, &outputs)
}
