use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBounds, Record};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Each encoded feature uniform within its observed range.
    UniformFeatureSpace,
    /// The target's features plus independent zero-mean Gaussian noise.
    GaussianAroundTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndirectParams {
    /// Influence threshold: accept a query when its influence is strictly above it.
    pub theta: f64,
    /// Hinge margin.
    pub gamma: f64,
    pub generation_mode: GenerationMode,
    pub noise_scale: f64,
    pub n_candidates: usize,
    /// Cluster representatives kept before selection; 0 disables clustering.
    pub n_clusters: usize,
    pub max_opt_steps: usize,
    pub opt_learning_rate: f64,
    /// Optimization of rejected queries runs when fewer are accepted.
    pub min_enhancing: usize,
}

impl Default for IndirectParams {
    fn default() -> Self {
        IndirectParams {
            theta: 0.95,
            gamma: 0.05,
            generation_mode: GenerationMode::UniformFeatureSpace,
            noise_scale: 1.0,
            n_candidates: 5000,
            n_clusters: 50,
            max_opt_steps: 100,
            opt_learning_rate: 10.0,
            min_enhancing: 10,
        }
    }
}

impl IndirectParams {
    /// Hard errors, plus warnings for legal but suspicious settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("influence threshold must lie in (0, 1] (got {})", self.theta)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("hinge margin must be positive (got {})", self.gamma)));
        }
        if self.generation_mode == GenerationMode::GaussianAroundTarget && !(self.noise_scale > 0.0) {
            return Err(Error::Config("gaussian generation needs a positive noise scale".into()));
        }
        let mut warnings = Vec::new();
        if self.theta >= 1.0 {
            warnings.push("influence threshold 1 rejects every query (acceptance is strict)".to_string());
        }
        Ok(warnings)
    }
}

/// Random queries labelled with the target's class.
pub fn generate_candidates(
    params: &IndirectParams,
    target: &Record,
    bounds: &FeatureBounds,
    seed: u64,
) -> Result<Vec<Record>> {
    params.validate()?;
    if bounds.dim() != target.features.len() {
        return Err(Error::Dimension {
            expected: bounds.dim(),
            actual: target.features.len(),
        });
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(params.n_candidates);
    let noise = Normal::new(0.0, params.noise_scale.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    for i in 0..params.n_candidates {
        let features = match params.generation_mode {
            GenerationMode::UniformFeatureSpace => bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect(),
            GenerationMode::GaussianAroundTarget => {
                target.features.iter().map(|v| v + noise.sample(&mut rng)).collect()
            }
        };
        out.push(Record::new(format!("{}~q{i:05}", target.id), features, target.label));
    }
    Ok(out)
}
