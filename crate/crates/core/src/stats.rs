//! Kolmogorov–Smirnov tests and a few distribution helpers used by the
//! validation suites.

use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov survival function Q(lambda) = 2 sum_k (-1)^{k-1} exp(-2 k^2 lambda^2).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample KS statistic sup |F_n - F|.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// One-sample KS p-value against a continuous `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    p_value(ks_statistic(sample, cdf), sample.len() as f64)
}

/// Two-sample KS statistic.
pub fn ks_two_sample_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample KS p-value (asymptotic, effective size n_a n_b / (n_a + n_b)).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let n = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    p_value(ks_two_sample_statistic(a, b), n)
}

/// Numerically normalized CDF of an unnormalized log-density on [lo, hi],
/// by the trapezoid rule on `n` intervals. Returns a closure-friendly table.
#[derive(Debug, Clone)]
pub struct GridCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn new<F: Fn(f64) -> f64>(log_density: F, lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / n as f64;
        let grid: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
        let logs: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
        let max = logs.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = vec![0.0; n + 1];
        for i in 1..=n {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let total = cdf[n];
        for c in &mut cdf {
            *c /= total;
        }
        Self { grid, cdf }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid.len() - 1;
        if x <= self.grid[0] {
            return 0.0;
        }
        if x >= self.grid[n] {
            return 1.0;
        }
        let h = self.grid[1] - self.grid[0];
        let i = (((x - self.grid[0]) / h) as usize).min(n - 1);
        let t = (x - self.grid[i]) / h;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }
}
