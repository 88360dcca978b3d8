//! Toy linear transport on a doubly periodic grid, used to turn flux basis
//! functions into mole-fraction response functions for synthetic studies.
//!
//! Each step applies first-order upwind zonal advection, 5-point diffusion
//! and the flux source. Grid coordinates are in cells, time in hours.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BasisLibrary, RegionType};
use crate::obs_operator::{apply_to_basis, column_average, RetrievalKernel};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateGrid {
    pub n_lon: usize,
    pub n_lat: usize,
    /// Zonal wind, cells per hour (positive eastward).
    pub wind: f64,
    /// Diffusion coefficient, cells^2 per hour.
    pub diffusion: f64,
    /// Step length in hours.
    pub dt_hours: f64,
    /// ppm added to a cell per unit flux per hour.
    pub conversion: f64,
}

impl Default for SurrogateGrid {
    fn default() -> Self {
        Self {
            n_lon: 36,
            n_lat: 18,
            wind: 0.5,
            diffusion: 0.1,
            dt_hours: 1.0,
            conversion: 1.0,
        }
    }
}

impl SurrogateGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_lon < 2 || self.n_lat < 2 {
            return Err(Error::invalid("grid needs at least 2 x 2 cells"));
        }
        for (name, v) in [("dt", self.dt_hours), ("conversion", self.conversion)] {
            crate::model::positive(name, v)?;
        }
        if !(self.diffusion >= 0.0) || !self.wind.is_finite() {
            return Err(Error::invalid("diffusion must be non-negative and wind finite"));
        }
        let courant = self.wind.abs() * self.dt_hours;
        let diff = self.diffusion * self.dt_hours;
        if courant > 1.0 {
            return Err(Error::Unstable(format!("|u| dt = {courant} exceeds 1 cell")));
        }
        if diff > 0.25 {
            return Err(Error::Unstable(format!("D dt = {diff} exceeds 1/4 cell^2")));
        }
        // the two bounds separately still allow growth of the grid-scale mode
        if courant + 4.0 * diff > 1.0 {
            return Err(Error::Unstable(format!(
                "|u| dt + 4 D dt = {} exceeds 1",
                courant + 4.0 * diff
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_lon * self.n_lat
    }

    /// Cell index for (lon, lat); lon varies fastest.
    pub fn cell(&self, lon: usize, lat: usize) -> usize {
        lat * self.n_lon + lon
    }

    /// Advances `field` by one step with the given flux, writing into `out`.
    pub fn step(&self, field: &[f64], flux: Option<&[f64]>, out: &mut [f64]) {
        let (nx, ny) = (self.n_lon, self.n_lat);
        let c = self.wind * self.dt_hours;
        let d = self.diffusion * self.dt_hours;
        let src = self.conversion * self.dt_hours;
        for y in 0..ny {
            let yn = (y + 1) % ny;
            let ys = (y + ny - 1) % ny;
            for x in 0..nx {
                let xe = (x + 1) % nx;
                let xw = (x + nx - 1) % nx;
                let here = field[y * nx + x];
                let east = field[y * nx + xe];
                let west = field[y * nx + xw];
                let adv = if c >= 0.0 { c * (here - west) } else { c * (east - here) };
                let lap = east + west + field[yn * nx + x] + field[ys * nx + x] - 4.0 * here;
                let mut v = here - adv + d * lap;
                if let Some(f) = flux {
                    v += src * f[y * nx + x];
                }
                out[y * nx + x] = v;
            }
        }
    }

    /// Bilinear interpolation at continuous cell coordinates (cell centres at
    /// integer positions), periodic in both directions.
    pub fn interpolate(&self, field: &[f64], lon: f64, lat: f64) -> f64 {
        let (nx, ny) = (self.n_lon as f64, self.n_lat as f64);
        let x = lon.rem_euclid(nx);
        let y = lat.rem_euclid(ny);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize % self.n_lon, y0 as usize % self.n_lat);
        let (x1, y1) = ((x0 + 1) % self.n_lon, (y0 + 1) % self.n_lat);
        let v = |xx: usize, yy: usize| field[self.cell(xx, yy)];
        (1.0 - fx) * (1.0 - fy) * v(x0, y0) + fx * (1.0 - fy) * v(x1, y0) + (1.0 - fx) * fy * v(x0, y1) + fx * fy * v(x1, y1)
    }
}

/// Runs the scheme for `fluxes.len()` steps from `initial`; returns the
/// fields at step boundaries (length `fluxes.len() + 1`).
pub fn run_transport(grid: &SurrogateGrid, fluxes: &[Vec<f64>], initial: &[f64]) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    let n = grid.n_cells();
    crate::error::ensure_len("initial field", n, initial.len())?;
    let mut out = Vec::with_capacity(fluxes.len() + 1);
    out.push(initial.to_vec());
    for f in fluxes {
        crate::error::ensure_len("flux field", n, f.len())?;
        let mut next = vec![0.0; n];
        grid.step(out.last().expect("non-empty"), Some(f), &mut next);
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub time_s: f64,
    /// Continuous cell coordinates.
    pub lon: f64,
    pub lat: f64,
    pub group: usize,
}

/// Observation track, sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub points: Vec<TrackPoint>,
    pub n_groups: usize,
}

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        for g in 0..self.n_groups {
            let times: Vec<f64> = self.points.iter().filter(|p| p.group == g).map(|p| p.time_s).collect();
            if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::NonIncreasingTimes {
                    group: format!("track group {g}"),
                    index: i + 1,
                    time: times[i + 1],
                    previous: times[i],
                });
            }
        }
        if self.points.iter().any(|p| p.group >= self.n_groups) {
            return Err(Error::invalid("track point assigned to an unknown group"));
        }
        Ok(())
    }

    pub fn group_indices(&self, group: usize) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.points[i].group == group).collect()
    }
}

/// Deterministic polar-orbit-like sweep: one observed pass per orbit, the
/// pass longitude precessing by a fixed amount each orbit. Passes alternate
/// between groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackGenerator {
    pub orbit_period_s: f64,
    pub observations_per_pass: usize,
    pub cadence_s: f64,
    /// Longitude shift per orbit, cells.
    pub precession_cells: f64,
    /// Latitude range swept in each pass (cells).
    pub lat_span: (f64, f64),
    /// Longitudinal drift during a pass, cells per observation.
    pub lon_drift: f64,
    pub n_groups: usize,
    pub start_s: f64,
}

impl Default for TrackGenerator {
    fn default() -> Self {
        Self {
            orbit_period_s: 5880.0,
            observations_per_pass: 28,
            cadence_s: 10.0,
            precession_cells: 36.0 * 5880.0 / 86_400.0 + 0.37,
            lat_span: (1.0, 16.0),
            lon_drift: 0.02,
            n_groups: 2,
            start_s: 1800.0,
        }
    }
}

impl TrackGenerator {
    /// Passes that finish before `horizon_s`.
    pub fn generate(&self, horizon_s: f64) -> Result<TrackSpec> {
        if self.n_groups == 0 || self.observations_per_pass == 0 {
            return Err(Error::invalid("track needs at least one group and one observation per pass"));
        }
        let pass_len = self.cadence_s * (self.observations_per_pass as f64 - 1.0);
        if pass_len >= self.orbit_period_s {
            return Err(Error::invalid("a pass must be shorter than the orbit period"));
        }
        let mut points = Vec::new();
        let mut orbit = 0usize;
        loop {
            let t0 = self.start_s + orbit as f64 * self.orbit_period_s;
            if t0 + pass_len >= horizon_s {
                break;
            }
            let lon0 = orbit as f64 * self.precession_cells;
            let dlat = if self.observations_per_pass > 1 {
                (self.lat_span.1 - self.lat_span.0) / (self.observations_per_pass as f64 - 1.0)
            } else {
                0.0
            };
            for i in 0..self.observations_per_pass {
                points.push(TrackPoint {
                    time_s: t0 + i as f64 * self.cadence_s,
                    lon: lon0 + i as f64 * self.lon_drift,
                    lat: self.lat_span.0 + i as f64 * dlat,
                    group: orbit % self.n_groups,
                });
            }
            orbit += 1;
        }
        let track = TrackSpec {
            points,
            n_groups: self.n_groups,
        };
        track.validate()?;
        Ok(track)
    }
}

/// Region-by-period flux basis on the surrogate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateBasisSpec {
    /// Region of each cell.
    pub region_of_cell: Vec<usize>,
    pub region_types: Vec<RegionType>,
    pub n_periods: usize,
    pub steps_per_period: usize,
    /// Non-negative spatial pattern of every basis function (per cell).
    pub pattern: Vec<f64>,
    /// Prior-flux coefficient on each basis function (region-major).
    pub prior_coefficients: Vec<f64>,
    /// Mass units per (flux unit x cell x hour), used for flux integrals.
    pub mass_per_unit: f64,
}

impl SurrogateBasisSpec {
    /// `lon_bands x lat_bands` rectangular regions; the last `n_ocean`
    /// regions are ocean. Smooth positive pattern; seasonal prior
    /// coefficients, sign alternating between land and ocean.
    pub fn banded(
        grid: &SurrogateGrid,
        lon_bands: usize,
        lat_bands: usize,
        n_ocean: usize,
        n_periods: usize,
        steps_per_period: usize,
    ) -> Result<Self> {
        let n_regions = lon_bands * lat_bands;
        if lon_bands == 0 || lat_bands == 0 || n_ocean > n_regions || n_periods == 0 || steps_per_period == 0 {
            return Err(Error::invalid("inconsistent banded basis layout"));
        }
        let mut region_of_cell = vec![0; grid.n_cells()];
        let mut pattern = vec![0.0; grid.n_cells()];
        for y in 0..grid.n_lat {
            for x in 0..grid.n_lon {
                let bx = x * lon_bands / grid.n_lon;
                let by = y * lat_bands / grid.n_lat;
                let c = grid.cell(x, y);
                region_of_cell[c] = by * lon_bands + bx;
                let phase = 2.0 * std::f64::consts::PI * (x as f64 / grid.n_lon as f64);
                let lat_frac = (y as f64 + 0.5) / grid.n_lat as f64;
                pattern[c] = 1.0 + 0.5 * phase.sin() + 0.3 * (std::f64::consts::PI * lat_frac).sin();
            }
        }
        let region_types: Vec<RegionType> = (0..n_regions)
            .map(|j| if j >= n_regions - n_ocean { RegionType::Ocean } else { RegionType::Land })
            .collect();
        let mut prior_coefficients = Vec::with_capacity(n_regions * n_periods);
        for (j, t) in region_types.iter().enumerate() {
            for k in 0..n_periods {
                let season = (2.0 * std::f64::consts::PI * (k as f64 + 0.3 * j as f64) / n_periods as f64).cos();
                prior_coefficients.push(match t {
                    RegionType::Land => 0.2 + season,
                    RegionType::Ocean => -0.5 + 0.2 * season,
                });
            }
        }
        Ok(Self {
            region_of_cell,
            region_types,
            n_periods,
            steps_per_period,
            pattern,
            prior_coefficients,
            mass_per_unit: 1e-3,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.region_types.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_periods * self.steps_per_period
    }

    /// Flux field of basis (region, period) during `step`, or `None` when the
    /// step lies outside the period.
    pub fn basis_flux(&self, region: usize, period: usize, step: usize) -> Option<Vec<f64>> {
        (step / self.steps_per_period == period).then(|| {
            self.region_of_cell
                .iter()
                .zip(&self.pattern)
                .map(|(&r, &p)| if r == region { p } else { 0.0 })
                .collect()
        })
    }

    /// Prior-mean flux during `step`.
    pub fn prior_flux(&self, step: usize) -> Vec<f64> {
        let k = (step / self.steps_per_period).min(self.n_periods - 1);
        self.region_of_cell
            .iter()
            .zip(&self.pattern)
            .map(|(&r, &p)| self.prior_coefficients[r * self.n_periods + k] * p)
            .collect()
    }

    pub fn basis_library(&self, grid: &SurrogateGrid) -> Result<BasisLibrary> {
        let n_regions = self.n_regions();
        let mut region_mass = vec![0.0; n_regions];
        for (&r, &p) in self.region_of_cell.iter().zip(&self.pattern) {
            region_mass[r] += p;
        }
        let per_period = self.mass_per_unit * grid.dt_hours * self.steps_per_period as f64;
        let mut integrals = Vec::with_capacity(n_regions * self.n_periods);
        for mass in &region_mass {
            integrals.extend(std::iter::repeat_n(mass * per_period, self.n_periods));
        }
        let prior: Vec<f64> = integrals
            .iter()
            .zip(&self.prior_coefficients)
            .map(|(i, c)| i * c)
            .collect();
        BasisLibrary::new(
            self.region_types.clone(),
            (0..n_regions).map(|j| format!("R{:02}", j + 1)).collect(),
            self.n_periods,
            integrals,
            prior,
        )
    }
}

/// Field at `time_s`, linearly interpolated between step boundaries.
fn sample_series(grid: &SurrogateGrid, series: &[Vec<f64>], p: &TrackPoint) -> Result<f64> {
    let step_s = grid.dt_hours * SECONDS_PER_HOUR;
    let horizon = (series.len() - 1) as f64 * step_s;
    if !(p.time_s >= 0.0) || p.time_s > horizon {
        return Err(Error::BeyondHorizon {
            time: p.time_s,
            horizon,
        });
    }
    let pos = p.time_s / step_s;
    let n = (pos.floor() as usize).min(series.len() - 2);
    let w = pos - n as f64;
    let a = grid.interpolate(&series[n], p.lon, p.lat);
    let b = grid.interpolate(&series[n + 1], p.lon, p.lat);
    Ok((1.0 - w) * a + w * b)
}

/// Response matrix and prior-mean predictions along a track.
#[derive(Debug, Clone)]
pub struct SurrogateResponses {
    pub basis: BasisLibrary,
    /// m x r
    pub response: DMatrix<f64>,
    /// Prior-flux prediction of each observation (ppm).
    pub prior_mean: DVector<f64>,
}

/// Runs the transport once per basis function (from a zero field) and once
/// for the prior flux (from `background`), sampling each run along the
/// track through the retrieval kernels. Surface values are replicated over
/// the kernel levels to form pseudo-profiles.
pub fn make_response_functions(
    grid: &SurrogateGrid,
    spec: &SurrogateBasisSpec,
    track: &TrackSpec,
    kernels: &[RetrievalKernel],
    background: f64,
) -> Result<SurrogateResponses> {
    grid.validate()?;
    track.validate()?;
    crate::error::ensure_len("cells in basis spec", grid.n_cells(), spec.region_of_cell.len())?;
    crate::error::ensure_len("retrieval kernels", track.points.len(), kernels.len())?;
    let basis = spec.basis_library(grid)?;
    let n_steps = spec.n_steps();
    let m = track.points.len();

    let zero = vec![0.0; grid.n_cells()];
    let sample_all = |series: &[Vec<f64>]| -> Result<Vec<f64>> {
        track.points.iter().map(|p| sample_series(grid, series, p)).collect()
    };

    let prior_fluxes: Vec<Vec<f64>> = (0..n_steps).map(|s| spec.prior_flux(s)).collect();
    let prior_series = run_transport(grid, &prior_fluxes, &vec![background; grid.n_cells()])?;
    let prior_surface = sample_all(&prior_series)?;
    let prior_mean = prior_surface
        .iter()
        .zip(kernels)
        .map(|(&v, k)| column_average(k, &vec![v; k.n_levels()]))
        .collect::<Result<Vec<f64>>>()?;

    let mut response = DMatrix::zeros(m, basis.len());
    for col in 0..basis.len() {
        let (region, period) = basis.region_period(col);
        let fluxes: Vec<Vec<f64>> = (0..n_steps)
            .map(|s| spec.basis_flux(region, period, s).unwrap_or_else(|| zero.clone()))
            .collect();
        let series = run_transport(grid, &fluxes, &zero)?;
        let surface = sample_all(&series)?;
        for (i, (&v, k)) in surface.iter().zip(kernels).enumerate() {
            let profile = DMatrix::from_element(k.n_levels(), 1, v);
            response[(i, col)] = apply_to_basis(k, &profile)?[0];
        }
    }
    Ok(SurrogateResponses {
        basis,
        response,
        prior_mean: DVector::from_vec(prior_mean),
    })
}
