//! JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::json_hash;
use crate::model::{AlphaPrior, BasisLibrary, ErrorCase, RegionPrior, RegionType};
use crate::osse::OsseSpec;
use crate::sampler::{ErrorPriors, Priors, SamplerConfig};

/// Input and output locations. Relative paths resolve against the data
/// directory given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub basis: PathBuf,
    pub observations: PathBuf,
    pub response: PathBuf,
    pub kernels: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            basis: "basis.json".into(),
            observations: "observations.csv".into(),
            response: "response.bin".into(),
            kernels: "kernels.csv".into(),
        }
    }
}

impl Paths {
    pub fn resolved(&self, dir: &Path) -> Self {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
        Self {
            basis: join(&self.basis),
            observations: join(&self.observations),
            response: join(&self.response),
            kernels: join(&self.kernels),
        }
    }
}

/// Hyperparameters by region type, expanded to per-region priors once the
/// basis is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSettings {
    pub land: RegionPrior,
    pub ocean: RegionPrior,
    pub beta_variance: f64,
    pub error: ErrorPriors,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            land: RegionPrior::land_default(),
            ocean: RegionPrior::ocean_default(),
            beta_variance: 100.0,
            error: ErrorPriors::default(),
        }
    }
}

impl PriorSettings {
    pub fn for_basis(&self, basis: &BasisLibrary) -> Result<Priors> {
        let priors = Priors {
            alpha: AlphaPrior {
                regions: basis
                    .region_types()
                    .iter()
                    .map(|t| match t {
                        RegionType::Land => self.land,
                        RegionType::Ocean => self.ocean,
                    })
                    .collect(),
            },
            beta_variance: self.beta_variance,
            error: self.error,
        };
        priors.validate(basis)?;
        Ok(priors)
    }
}

/// Chain length used for every chain of an OSSE study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub n_iterations: usize,
    pub n_burn_in: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            n_iterations: 1200,
            n_burn_in: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub priors: PriorSettings,
    pub sampler: SamplerConfig,
    pub osse: OsseSpec,
    pub study: StudySettings,
    /// Overrides the error case of every group when set.
    pub error_case: Option<ErrorCase>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.osse.validate()?;
        crate::model::positive("beta variance", self.priors.beta_variance)?;
        self.priors.land.validate()?;
        self.priors.ocean.validate()?;
        Ok(())
    }

    /// Same configuration with a different seed; the seed is part of the hash.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sampler.seed = seed;
        self.osse.base_seed = seed;
        self
    }

    pub fn hash(&self) -> Result<String> {
        json_hash(self)
    }

    pub fn study_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_iterations: self.study.n_iterations,
            n_burn_in: self.study.n_burn_in,
            ..self.sampler.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GammaRate, KappaPrior, TauWPrior};

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.priors.beta_variance, 100.0);
        assert_eq!(cfg.priors.error.gamma.shape, 1.627);
        assert_eq!(cfg.priors.error.gamma.scale, 2.171);
        assert_eq!(cfg.priors.ocean.kappa, KappaPrior::Fixed { value: 0.0 });
        assert_eq!(cfg.priors.ocean.tau_w, TauWPrior::Fixed { value: 4.0 });
        assert_eq!(cfg.priors.land.kappa, KappaPrior::Beta { a: 1.0, b: 1.0 });
        assert!(matches!(
            cfg.priors.land.tau_w,
            TauWPrior::Gamma {
                shape,
                rate: GammaRate::KappaScaled { .. }
            } if shape == 0.354
        ));
    }

    #[test]
    fn partial_override_and_round_trip() {
        let cfg = RunConfig::from_json(r#"{"sampler": {"seed": 7, "switches": {"bias": false}}, "error_case": "case_i"}"#).unwrap();
        assert_eq!(cfg.sampler.seed, 7);
        assert!(!cfg.sampler.switches.bias);
        assert!(cfg.sampler.switches.correlated);
        assert_eq!(cfg.error_case, Some(ErrorCase::CaseI));
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig::default().with_seed(99);
        assert_eq!(a.hash().unwrap(), RunConfig::default().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sampler": {"thin": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"osse": {"rho_true": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"priors": {"beta_variance": -1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"unknown": 1"#).is_err());
    }

    #[test]
    fn priors_follow_region_types() {
        let basis = BasisLibrary::new(
            vec![RegionType::Land, RegionType::Ocean],
            vec!["L".into(), "O".into()],
            2,
            vec![1.0; 4],
            vec![0.0; 4],
        )
        .unwrap();
        let p = PriorSettings::default().for_basis(&basis).unwrap();
        assert_eq!(p, Priors::defaults_for(&basis));
    }
}
