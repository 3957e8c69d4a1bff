//! Reference ensembles trained on bootstrap samples of the adversary's pool,
//! and positive ensembles obtained by nudging each reference model with
//! batches that contain the target record.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{bootstrap_sample, BootstrapSample, Dataset, Record};
use crate::error::{Error, Result};
use crate::model::{load_model, save_model, train_records, update, ModelParams, ModelSpec, TrainingConfig};
use crate::par;
use crate::rng::{derive_named, derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Reference,
    Positive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub id: String,
    pub kind: EnsembleKind,
    pub spec: ModelSpec,
    pub config: TrainingConfig,
    pub seed: u64,
    pub models: Vec<ModelParams>,
    /// Bootstrap sample behind each model, in model order.
    pub manifests: Vec<BootstrapSample>,
    /// Set for positive ensembles only.
    pub target_record_id: Option<String>,
    /// Id of the reference ensemble a positive ensemble was derived from.
    pub parent: Option<String>,
}

impl Ensemble {
    pub fn k(&self) -> usize {
        self.models.len()
    }

    /// Index of the first manifest that contains `record_id`, if any.
    pub fn manifest_containing(&self, record_id: &str) -> Option<usize> {
        self.manifests.iter().position(|m| m.contains(record_id))
    }

    /// Fails with [`Error::Contamination`] if any manifest contains the record.
    pub fn ensure_excludes(&self, record_id: &str) -> Result<()> {
        match self.manifest_containing(record_id) {
            Some(model) => Err(Error::Contamination {
                record: record_id.to_string(),
                model,
            }),
            None => Ok(()),
        }
    }

    pub fn spec_digest(&self) -> String {
        spec_digest(&self.spec)
    }
}

pub fn spec_digest(spec: &ModelSpec) -> String {
    let bytes = serde_json::to_vec(spec).expect("model specs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of model `index` in an ensemble built from `seed`.
pub fn member_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Trains `k` models, model `i` on a bootstrap sample of `sample_size` pool
/// records drawn with seed `member_seed(seed, i)`.
pub fn build_reference_models(
    pool: &Dataset,
    k: usize,
    sample_size: usize,
    spec: &ModelSpec,
    config: &TrainingConfig,
    seed: u64,
) -> Result<Ensemble> {
    if pool.is_empty() {
        return Err(Error::Config("reference pool is empty".into()));
    }
    if k < 2 {
        return Err(Error::Config(format!("an ensemble needs at least 2 models (got {k})")));
    }
    let built = par::try_map_indexed(k, |i| {
        let seed_i = member_seed(seed, i);
        let manifest = bootstrap_sample(pool, sample_size, seed_i)?;
        let records = pool.resolve(&manifest.ids)?;
        let model = train_records(&records, spec, &config.with_seed(derive_named(seed_i, "train")))
            .map_err(|e| e.context(format!("reference model {i}")))?;
        Ok::<_, Error>((model, manifest))
    })?;
    let (models, manifests) = built.into_iter().unzip();
    Ok(Ensemble {
        id: format!("ref-{seed:016x}"),
        kind: EnsembleKind::Reference,
        spec: spec.clone(),
        config: config.clone(),
        seed,
        models,
        manifests,
        target_record_id: None,
        parent: None,
    })
}

/// How reference models are nudged toward a target record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositiveConfig {
    /// Batches drawn from each model's own bootstrap manifest.
    pub n_batches: usize,
    /// `epochs` is the number of gradient steps per batch; `batch_size` is
    /// the number of manifest records per batch (the target is appended).
    pub update: TrainingConfig,
}

impl Default for PositiveConfig {
    fn default() -> Self {
        PositiveConfig {
            n_batches: 5,
            update: TrainingConfig {
                epochs: 1,
                batch_size: 10,
                learning_rate: 0.1,
                l2: 0.0,
                seed: 0,
            },
        }
    }
}

pub fn build_positive_reference_models(
    reference: &Ensemble,
    pool: &Dataset,
    target: &Record,
    config: &PositiveConfig,
) -> Result<Ensemble> {
    if reference.kind != EnsembleKind::Reference {
        return Err(Error::Config("positive models are derived from a reference ensemble".into()));
    }
    reference.ensure_excludes(&target.id)?;
    let models = par::try_map_indexed(reference.k(), |i| {
        let manifest = pool.resolve(&reference.manifests[i].ids)?;
        let mut rng = seeded(derive_named(derive_seed(config.update.seed, i as u64), &target.id));
        let take = config.update.batch_size.min(manifest.len());
        let mut model = reference.models[i].clone();
        for _ in 0..config.n_batches {
            let mut batch: Vec<&Record> = sample(&mut rng, manifest.len(), take).iter().map(|j| manifest[j]).collect();
            batch.push(target);
            model = update(&model, &batch, &config.update).map_err(|e| e.context(format!("positive model {i}")))?;
        }
        Ok::<_, Error>(model)
    })?;
    Ok(Ensemble {
        id: format!("{}+{}", reference.id, target.id),
        kind: EnsembleKind::Positive,
        spec: reference.spec.clone(),
        config: reference.config.clone(),
        seed: reference.seed,
        models,
        manifests: reference.manifests.clone(),
        target_record_id: Some(target.id.clone()),
        parent: Some(reference.id.clone()),
    })
}

/// Probability of `label` on `features` under every model, in model order.
pub fn ensemble_label_probabilities(ensemble: &Ensemble, features: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= ensemble.spec.class_count() {
        return Err(Error::Config(format!("label {label} outside {} classes", ensemble.spec.class_count())));
    }
    ensemble
        .models
        .iter()
        .map(|m| m.predict(features).map(|p| p[label]))
        .collect()
}

pub const ENSEMBLE_FORMAT: &str = "gmia-ensemble/1";

/// Ensemble-level metadata file (`ensemble.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub format: String,
    pub id: String,
    pub kind: EnsembleKind,
    pub k: usize,
    pub seed: u64,
    pub member_seeds: Vec<u64>,
    pub spec: ModelSpec,
    pub spec_digest: String,
    pub config: TrainingConfig,
    pub sample_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_record_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl EnsembleMetadata {
    pub fn of(e: &Ensemble) -> Self {
        EnsembleMetadata {
            format: ENSEMBLE_FORMAT.into(),
            id: e.id.clone(),
            kind: e.kind,
            k: e.k(),
            seed: e.seed,
            member_seeds: e.manifests.iter().map(|m| m.seed).collect(),
            spec: e.spec.clone(),
            spec_digest: e.spec_digest(),
            config: e.config.clone(),
            sample_size: e.manifests.first().map_or(0, |m| m.ids.len()),
            target_record_id: e.target_record_id.clone(),
            parent: e.parent.clone(),
        }
    }
}

/// Writes `ensemble.json`, `manifest-NNN.json` and `model-NNN.json`.
pub fn save_ensemble(dir: &Path, ensemble: &Ensemble) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = EnsembleMetadata::of(ensemble);
    fs::write(dir.join("ensemble.json"), serde_json::to_vec_pretty(&meta)?)?;
    for (i, (m, manifest)) in ensemble.models.iter().zip(&ensemble.manifests).enumerate() {
        fs::write(dir.join(format!("manifest-{i:03}.json")), serde_json::to_vec_pretty(manifest)?)?;
        let config = ensemble.config.with_seed(derive_named(manifest.seed, "train"));
        save_model(&dir.join(format!("model-{i:03}.json")), m, &config)?;
    }
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let meta_path = dir.join("ensemble.json");
    let bytes = fs::read(&meta_path).map_err(|e| Error::from(e).context(format!("reading {}", meta_path.display())))?;
    let meta: EnsembleMetadata = serde_json::from_slice(&bytes)?;
    if meta.format != ENSEMBLE_FORMAT {
        return Err(Error::Config(format!("{}: unsupported format `{}`", meta_path.display(), meta.format)));
    }
    if meta.spec_digest != spec_digest(&meta.spec) {
        return Err(Error::Config(format!("{}: spec digest mismatch", meta_path.display())));
    }
    let mut models = Vec::with_capacity(meta.k);
    let mut manifests = Vec::with_capacity(meta.k);
    for i in 0..meta.k {
        let (m, _) = load_model(&dir.join(format!("model-{i:03}.json")))?;
        if m.spec != meta.spec {
            return Err(Error::Config(format!("model {i} does not match the ensemble spec")));
        }
        models.push(m);
        let mp = dir.join(format!("manifest-{i:03}.json"));
        manifests.push(serde_json::from_slice(&fs::read(&mp)?)?);
    }
    Ok(Ensemble {
        id: meta.id,
        kind: meta.kind,
        spec: meta.spec,
        config: meta.config,
        seed: meta.seed,
        models,
        manifests,
        target_record_id: meta.target_record_id,
        parent: meta.parent,
    })
}
