//! File formats, manifests and content hashes.
//!
//! * observations: CSV `group,time_unix_s,value_ppm,variance_ppm2,z0_ppm,cov_1..cov_p,role`,
//!   one row per datum, response rows in the same order;
//! * response matrix and alpha samples: `FLXRSP1`, then little-endian u64
//!   rows and columns, then row-major little-endian f64;
//! * basis: JSON;
//! * kernels: headerless CSV, one retrieval per line:
//!   `n, c_1..c_n, a_1..a_n, x0_1..x0_n`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Paths;
use crate::error::{Error, Result};
use crate::model::{BasisLibrary, ErrorCase, GroupInput, ObservationGroup, Role};
use crate::obs_operator::RetrievalKernel;
use crate::osse::ScoreRow;
use crate::sampler::{ChainOutput, Counters};
use crate::summary::{alpha_matrix, parameter_traces};

pub const MATRIX_MAGIC: &[u8; 7] = b"FLXRSP1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the compact JSON encoding of `value`.
pub fn json_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path)?;
    let header = MATRIX_MAGIC.len() + 16;
    if bytes.len() < header || &bytes[..MATRIX_MAGIC.len()] != MATRIX_MAGIC {
        return Err(Error::format(path, "missing FLXRSP1 header"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let rows = word(7) as usize;
    let cols = word(15) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(header));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!("{rows} x {cols} matrix needs {expected:?} bytes, file has {}", bytes.len()),
        ));
    }
    let data = &bytes[header..];
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        let at = 8 * (i * cols + j);
        f64::from_le_bytes(data[at..at + 8].try_into().expect("8 bytes"))
    }))
}

pub fn write_basis(path: &Path, basis: &BasisLibrary) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(basis)?)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<BasisLibrary> {
    let basis: BasisLibrary =
        serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    basis.validated()
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Training => "training",
        Role::Holdout => "holdout",
    }
}

/// Writes every group; the matching response rows, stacked in the same
/// order, are returned for [`write_matrix`].
pub fn write_observations(path: &Path, groups: &[ObservationGroup]) -> Result<DMatrix<f64>> {
    let p = groups.iter().map(|g| g.n_covariates()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["group", "time_unix_s", "value_ppm", "variance_ppm2", "z0_ppm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=p).map(|i| format!("cov_{i}")));
    header.push("role".into());
    w.write_record(&header)?;
    for g in groups {
        for i in 0..g.len() {
            let mut rec = vec![
                g.id().to_string(),
                g.times()[i].to_string(),
                g.values()[i].to_string(),
                g.variances()[i].to_string(),
                g.prior_mean()[i].to_string(),
            ];
            for j in 0..p {
                rec.push(if j < g.n_covariates() {
                    g.covariates()[(i, j)].to_string()
                } else {
                    String::new()
                });
            }
            rec.push(role_name(g.role()).into());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let r = groups.first().map_or(0, |g| g.response().ncols());
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let mut stacked = DMatrix::zeros(total, r);
    let mut row = 0;
    for g in groups {
        stacked.view_mut((row, 0), (g.len(), r)).copy_from(g.response());
        row += g.len();
    }
    Ok(stacked)
}

#[derive(Default)]
struct RawGroup {
    rows: Vec<usize>,
    times: Vec<f64>,
    values: Vec<f64>,
    variances: Vec<f64>,
    prior_mean: Vec<f64>,
    covariates: Vec<Vec<f64>>,
    role: Option<Role>,
}

/// Reads groups in order of first appearance; `response` holds one row per
/// CSV data row.
pub fn read_observations(path: &Path, response: &DMatrix<f64>, error_case: ErrorCase) -> Result<Vec<ObservationGroup>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let fixed = ["group", "time_unix_s", "value_ppm", "variance_ppm2", "z0_ppm"];
    let n = header.len();
    if n < fixed.len() + 1 || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b) || &header[n - 1] != "role" {
        return Err(Error::format(path, "unexpected observation header"));
    }
    let p = n - fixed.len() - 1;
    for (j, h) in header.iter().skip(fixed.len()).take(p).enumerate() {
        if h != format!("cov_{}", j + 1) {
            return Err(Error::format(path, format!("expected column cov_{}, found {h}", j + 1)));
        }
    }
    let num = |s: &str, row: usize, col: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::format(path, format!("row {}: bad {col} '{s}'", row + 1)))
    };
    let mut order: Vec<String> = Vec::new();
    let mut raw: BTreeMap<String, RawGroup> = BTreeMap::new();
    let mut n_rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec[0].to_string();
        if !raw.contains_key(&id) {
            order.push(id.clone());
        }
        let g = raw.entry(id).or_default();
        g.rows.push(row);
        g.times.push(num(&rec[1], row, "time")?);
        g.values.push(num(&rec[2], row, "value")?);
        g.variances.push(num(&rec[3], row, "variance")?);
        g.prior_mean.push(num(&rec[4], row, "z0")?);
        let covs = (0..p)
            .filter(|j| !rec[5 + j].trim().is_empty())
            .map(|j| num(&rec[5 + j], row, "covariate"))
            .collect::<Result<Vec<f64>>>()?;
        let role = match rec[n - 1].trim() {
            "training" => Role::Training,
            "holdout" => Role::Holdout,
            other => return Err(Error::format(path, format!("row {}: unknown role '{other}'", row + 1))),
        };
        if g.role.is_some_and(|r| r != role) {
            return Err(Error::format(path, format!("row {}: group role changes", row + 1)));
        }
        g.role = Some(role);
        if let Some(first) = g.covariates.first() {
            if first.len() != covs.len() {
                return Err(Error::format(path, format!("row {}: covariate count changes within group", row + 1)));
            }
        }
        g.covariates.push(covs);
        n_rows += 1;
    }
    if n_rows != response.nrows() {
        return Err(Error::Dimension {
            context: "response rows",
            expected: n_rows,
            actual: response.nrows(),
        });
    }
    order
        .into_iter()
        .map(|id| {
            let g = raw.remove(&id).expect("group recorded");
            let pg = g.covariates.first().map_or(0, |c| c.len());
            let covariates = DMatrix::from_fn(g.rows.len(), pg, |i, j| g.covariates[i][j]);
            ObservationGroup::new(GroupInput {
                id,
                times: g.times,
                values: g.values,
                prior_mean: g.prior_mean,
                variances: g.variances,
                covariates,
                response: response.select_rows(&g.rows),
                error_case,
                role: g.role.expect("at least one row"),
            })
        })
        .collect()
}

pub fn write_kernels(path: &Path, kernels: &[RetrievalKernel]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    for k in kernels {
        let mut rec = vec![k.n_levels().to_string()];
        for v in k.weights().iter().chain(k.averaging_kernel()).chain(k.prior_profile()) {
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kernels(path: &Path) -> Result<Vec<RetrievalKernel>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::format(path, format!("kernel row {}: {m}", row + 1));
        let n: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("bad level count"))?;
        if rec.len() != 1 + 3 * n {
            return Err(bad("wrong number of fields"));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("non-numeric field")))
            .collect::<Result<Vec<f64>>>()?;
        out.push(RetrievalKernel::new(
            vals[..n].to_vec(),
            vals[n..2 * n].to_vec(),
            vals[2 * n..].to_vec(),
        )?);
    }
    Ok(out)
}

/// Basis and groups from the files named in `paths`. A kernels file, when
/// present, must hold one retrieval per observation.
pub fn load_inputs(paths: &Paths, error_case: ErrorCase) -> Result<(BasisLibrary, Vec<ObservationGroup>)> {
    let basis = read_basis(&paths.basis)?;
    let response = read_matrix(&paths.response)?;
    if response.ncols() != basis.len() {
        return Err(Error::Dimension {
            context: "response columns",
            expected: basis.len(),
            actual: response.ncols(),
        });
    }
    let groups = read_observations(&paths.observations, &response, error_case)?;
    if paths.kernels.exists() {
        let kernels = read_kernels(&paths.kernels)?;
        if kernels.len() != response.nrows() {
            return Err(Error::Dimension {
                context: "retrieval kernels",
                expected: response.nrows(),
                actual: kernels.len(),
            });
        }
    }
    Ok((basis, groups))
}

/// Writes basis, observations, response matrix and kernels into `dir`
/// under the default file names.
pub fn write_dataset(
    dir: &Path,
    basis: &BasisLibrary,
    groups: &[ObservationGroup],
    kernels: &[RetrievalKernel],
) -> Result<Paths> {
    std::fs::create_dir_all(dir)?;
    let paths = Paths::default().resolved(dir);
    write_basis(&paths.basis, basis)?;
    let stacked = write_observations(&paths.observations, groups)?;
    write_matrix(&paths.response, &stacked)?;
    write_kernels(&paths.kernels, kernels)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub config_hash: String,
    pub counters: Counters,
    pub n_samples: usize,
    pub n_alpha: usize,
    pub group_ids: Vec<String>,
}

/// A chain as persisted: alpha samples plus named scalar traces.
#[derive(Debug, Clone)]
pub struct StoredChain {
    pub meta: ChainMeta,
    pub alpha: DMatrix<f64>,
    pub traces: Vec<(String, Vec<f64>)>,
}

const TRACE_BLOCKS: [(&str, &[&str]); 3] = [
    ("beta.csv", &["beta_"]),
    ("hyper.csv", &["kappa_", "tau_w_"]),
    ("error.csv", &["gamma_", "rho_", "tau_xi_", "ell_"]),
];

fn write_traces(path: &Path, traces: &[&(String, Vec<f64>)], n: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend(traces.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![i.to_string()];
        rec.extend(traces.iter().map(|(_, t)| t[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes alpha.bin, one CSV per parameter block and chain_meta.json.
/// Returns the written paths.
pub fn write_chain(dir: &Path, chain: &ChainOutput, basis: &BasisLibrary, group_ids: &[String]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let alpha = alpha_matrix(&chain.states);
    let path = dir.join("alpha.bin");
    write_matrix(&path, &alpha)?;
    written.push(path);
    let traces = parameter_traces(&chain.states, basis, group_ids);
    for (file, prefixes) in TRACE_BLOCKS {
        let block: Vec<&(String, Vec<f64>)> = traces
            .iter()
            .filter(|(name, _)| prefixes.iter().any(|p| name.starts_with(p)))
            .collect();
        let path = dir.join(file);
        write_traces(&path, &block, chain.states.len())?;
        written.push(path);
    }
    let meta = ChainMeta {
        seed: chain.seed,
        config_hash: chain.config_hash.clone(),
        counters: chain.counters.clone(),
        n_samples: chain.states.len(),
        n_alpha: basis.len(),
        group_ids: group_ids.to_vec(),
    };
    let path = dir.join("chain_meta.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&meta)?)?;
    written.push(path);
    Ok(written)
}

fn read_traces(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().skip(1).map(String::from).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, col) in cols.iter_mut().enumerate() {
            let s = rec.get(j + 1).ok_or_else(|| Error::format(path, "short trace row"))?;
            col.push(s.parse::<f64>().map_err(|_| Error::format(path, format!("bad value '{s}'")))?);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

pub fn read_chain(dir: &Path) -> Result<StoredChain> {
    let meta_path = dir.join("chain_meta.json");
    let meta: ChainMeta = serde_json::from_slice(&std::fs::read(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let alpha = read_matrix(&dir.join("alpha.bin"))?;
    if alpha.nrows() != meta.n_samples || alpha.ncols() != meta.n_alpha {
        return Err(Error::format(dir.join("alpha.bin"), "shape disagrees with chain_meta.json"));
    }
    let mut traces = Vec::new();
    for (file, _) in TRACE_BLOCKS {
        let t = read_traces(&dir.join(file))?;
        if t.iter().any(|(_, v)| v.len() != meta.n_samples) {
            return Err(Error::format(dir.join(file), "sample count disagrees with chain_meta.json"));
        }
        traces.extend(t);
    }
    Ok(StoredChain { meta, alpha, traces })
}

/// Truth file of an OSSE replicate: `region,period,alpha,flux`, one row
/// per basis function in column order.
pub fn write_truth(path: &Path, basis: &BasisLibrary, alpha: &DVector<f64>) -> Result<()> {
    if alpha.len() != basis.len() {
        return Err(Error::Dimension {
            context: "truth alpha",
            expected: basis.len(),
            actual: alpha.len(),
        });
    }
    let fluxes = basis.fluxes(alpha.as_slice());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["region", "period", "alpha", "flux"])?;
    for (c, (a, f)) in alpha.iter().zip(&fluxes).enumerate() {
        let (j, k) = basis.region_period(c);
        w.write_record([basis.region_names()[j].clone(), (k + 1).to_string(), a.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path, basis: &BasisLibrary) -> Result<DVector<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut alpha = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let s = rec.get(2).ok_or_else(|| Error::format(path, format!("row {}: missing alpha", i + 1)))?;
        alpha.push(
            s.parse::<f64>()
                .map_err(|_| Error::format(path, format!("row {}: bad alpha '{s}'", i + 1)))?,
        );
    }
    if alpha.len() != basis.len() {
        return Err(Error::format(path, format!("{} rows for {} basis functions", alpha.len(), basis.len())));
    }
    Ok(DVector::from_vec(alpha))
}

/// OSSE score table, one row per replicate and configuration.
pub fn write_score_table(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replicate",
        "configuration",
        "rmse",
        "crps",
        "covered",
        "cells",
        "median_width",
        "beta_within_3sd",
        "beta_total",
    ])?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.configuration.name().to_string(),
            r.rmse.to_string(),
            r.crps.to_string(),
            r.covered.to_string(),
            r.cells.to_string(),
            r.median_width.to_string(),
            r.beta_within_3sd.to_string(),
            r.beta_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name -> SHA-256 of the inputs read.
    pub inputs: BTreeMap<String, String>,
    /// File name -> SHA-256 of the outputs written.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn file_key(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_key(path), file_sha256(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_key(path), file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        serde_json::from_slice(&std::fs::read(&path)?).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Refuses files whose content no longer matches what this manifest
    /// recorded as written. Files the manifest does not mention pass.
    pub fn verify_outputs(&self, files: &[&Path]) -> Result<()> {
        for f in files {
            if let Some(expected) = self.outputs.get(&file_key(f)) {
                let actual = file_sha256(f)?;
                if &actual != expected {
                    return Err(Error::HashMismatch(format!(
                        "{} changed since '{}' wrote it (recorded {expected}, found {actual})",
                        f.display(),
                        self.command
                    )));
                }
            }
        }
        Ok(())
    }

    /// Refuses when the inputs recorded here differ from the given files.
    pub fn verify_inputs(&self, files: &[&Path]) -> Result<()> {
        for f in files {
            if let Some(expected) = self.inputs.get(&file_key(f)) {
                let actual = file_sha256(f)?;
                if &actual != expected {
                    return Err(Error::HashMismatch(format!(
                        "{} differs from the input '{}' used (recorded {expected}, found {actual})",
                        f.display(),
                        self.command
                    )));
                }
            }
        }
        Ok(())
    }
}
