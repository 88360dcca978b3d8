//! Univariate slice sampling with stepping-out and shrinkage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tuning for one slice-sampled coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceConfig {
    /// Initial bracket width on the sampling scale.
    pub width: f64,
    /// Maximum number of width-sized steps taken outward in total.
    pub max_steps: usize,
    /// Shrinkage proposals allowed before giving up.
    pub max_shrink: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            width: 1.0,
            max_steps: 32,
            max_shrink: 200,
        }
    }
}

impl SliceConfig {
    pub fn with_width(width: f64) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "slice width",
                value: self.width,
                reason: "must be positive and finite",
            });
        }
        if self.max_shrink == 0 {
            return Err(Error::invalid("slice sampler needs at least one shrinkage step"));
        }
        Ok(())
    }
}

/// Result of one slice update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDraw {
    pub value: f64,
    pub log_density: f64,
    pub evaluations: usize,
}

/// One stepping-out + shrinkage update of `x0` under `log_density`.
///
/// `log_density` may return `-inf` outside the support. `log_f0` must be the
/// finite density at `x0`. The bracket is placed uniformly around `x0` and the
/// step budget split at random between the two sides, so the update leaves
/// the target invariant even when the budget runs out.
pub fn slice_sample<F, R>(
    mut log_density: F,
    x0: f64,
    log_f0: f64,
    config: &SliceConfig,
    rng: &mut R,
) -> Result<SliceDraw>
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    if !log_f0.is_finite() {
        return Err(Error::SliceSampler(format!(
            "log density at current point {x0} is {log_f0}"
        )));
    }
    let w = config.width;
    // ln U with U ~ Uniform(0,1]; 1 - random() avoids ln 0.
    let level = log_f0 + (1.0 - rng.random::<f64>()).ln();
    let mut evaluations = 0;

    let mut left = x0 - w * rng.random::<f64>();
    let mut right = left + w;
    let (mut left_steps, mut right_steps) = match config.max_steps {
        0 => (0, 0),
        m => {
            let j = rng.random_range(0..m);
            (j, m - 1 - j)
        }
    };
    while left_steps > 0 {
        evaluations += 1;
        if !(log_density(left) > level) {
            break;
        }
        left -= w;
        left_steps -= 1;
    }
    while right_steps > 0 {
        evaluations += 1;
        if !(log_density(right) > level) {
            break;
        }
        right += w;
        right_steps -= 1;
    }

    for _ in 0..config.max_shrink {
        let x1 = left + (right - left) * rng.random::<f64>();
        let lf = log_density(x1);
        evaluations += 1;
        if lf > level {
            return Ok(SliceDraw {
                value: x1,
                log_density: lf,
                evaluations,
            });
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    Err(Error::SliceSampler(format!(
        "no acceptable point after {} shrinkage steps around {x0} (bracket [{left}, {right}])",
        config.max_shrink
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_one_sample, normal_cdf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_chain<F: Fn(f64) -> f64>(f: F, x0: f64, n: usize, width: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SliceConfig::with_width(width);
        let mut x = x0;
        let mut lf = f(x);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let d = slice_sample(&f, x, lf, &cfg, &mut rng).unwrap();
            x = d.value;
            lf = d.log_density;
            out.push(x);
        }
        out
    }

    fn thin(v: &[f64], k: usize) -> Vec<f64> {
        v.iter().step_by(k).copied().collect()
    }

    #[test]
    fn standard_normal_target() {
        let xs = run_chain(|x| -0.5 * x * x, 0.0, 100_000, 1.0, 1);
        // slice iterates are autocorrelated; thin before the KS test
        let p = ks_one_sample(&thin(&xs, 10), normal_cdf);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn uniform_target() {
        let f = |x: f64| if (0.0..=1.0).contains(&x) { 0.0 } else { f64::NEG_INFINITY };
        let xs = run_chain(f, 0.5, 100_000, 0.3, 2);
        assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
        let p = ks_one_sample(&thin(&xs, 5), |x| x.clamp(0.0, 1.0));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn bounded_support_respected() {
        // Exponential(1) on (0, inf) with a poorly matched width
        let f = |x: f64| if x > 0.0 { -x } else { f64::NEG_INFINITY };
        let xs = run_chain(f, 1.0, 20_000, 10.0, 3);
        assert!(xs.iter().all(|x| *x > 0.0));
        let p = ks_one_sample(&thin(&xs, 5), |x| 1.0 - (-x).exp());
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn tiny_width_still_mixes() {
        let xs = run_chain(|x| -0.5 * x * x, 0.0, 50_000, 0.05, 4);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.15, "{mean}");
        assert!((var - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = slice_sample(|x| -x * x, 0.0, f64::NEG_INFINITY, &SliceConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::SliceSampler(_))));
    }

    #[test]
    fn exhausted_shrinkage_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // density finite only at the starting point itself
        let f = |x: f64| if x == 0.25 { 0.0 } else { f64::NEG_INFINITY };
        let cfg = SliceConfig {
            width: 1.0,
            max_steps: 4,
            max_shrink: 20,
        };
        assert!(slice_sample(f, 0.25, 0.0, &cfg, &mut rng).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run_chain(|x| -0.5 * x * x, 0.0, 1000, 1.0, 9);
        let b = run_chain(|x| -0.5 * x * x, 0.0, 1000, 1.0, 9);
        assert_eq!(a, b);
    }
}
