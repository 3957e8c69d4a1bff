//! Vulnerable-record selection. Records are embedded by concatenating the
//! pre-softmax outputs of every reference model; a record whose embedding has
//! few cosine-distance neighbors in the reference pool is expected to exert a
//! unique influence on any model trained with it.
//!
//! Nothing here touches a target model, so selection can run offline.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record};
use crate::ensemble::{Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub record_id: String,
    pub ensemble_id: String,
}

impl FeatureVector {
    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Concatenated logits of every model in the ensemble, in model order.
pub fn record_feature_vector(ensemble: &Ensemble, record: &Record) -> Result<FeatureVector> {
    if ensemble.kind != EnsembleKind::Reference {
        return Err(Error::Config("selection features come from a reference ensemble".into()));
    }
    let mut values = Vec::with_capacity(ensemble.k() * ensemble.spec.class_count());
    for m in &ensemble.models {
        values.extend(m.logits(&record.features)?);
    }
    Ok(FeatureVector {
        values,
        record_id: record.id.clone(),
        ensemble_id: ensemble.id.clone(),
    })
}

fn cosine_from_parts(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 2.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// `1 - a.b / (|a||b|)`, in `[0, 2]`. A zero vector is at distance 2 from
/// everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(cosine_from_parts(a, n(a), b, n(b)))
}

/// Pool embeddings with their norms, computed once per ensemble.
pub struct NeighborIndex {
    features: Vec<FeatureVector>,
    norms: Vec<f64>,
}

impl NeighborIndex {
    pub fn build(pool: &Dataset, ensemble: &Ensemble) -> Result<Self> {
        let features = par::map_slice(&pool.records, |r| record_feature_vector(ensemble, r))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let norms = features.iter().map(FeatureVector::norm).collect();
        Ok(NeighborIndex { features, norms })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Pool records, other than one with the same id, strictly closer than `delta`.
    pub fn count(&self, query: &FeatureVector, delta: f64) -> Result<usize> {
        let nq = query.norm();
        let mut count = 0;
        for (f, &nf) in self.features.iter().zip(&self.norms) {
            if f.values.len() != query.values.len() {
                return Err(Error::Dimension {
                    expected: f.values.len(),
                    actual: query.values.len(),
                });
            }
            if f.record_id == query.record_id {
                continue;
            }
            if cosine_from_parts(&query.values, nq, &f.values, nf) < delta {
                count += 1;
            }
        }
        Ok(count)
    }
}

pub fn count_neighbors(record: &Record, pool: &Dataset, ensemble: &Ensemble, delta: f64) -> Result<usize> {
    let index = NeighborIndex::build(pool, ensemble)?;
    index.count(&record_feature_vector(ensemble, record)?, delta)
}

/// How the pool neighbor count is scaled to the training set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedNeighborRatio {
    /// `N'_n * N / N'`: neighbor density in the pool scaled to the training size.
    #[default]
    Density,
    /// `N'_n * N' / N`: the pool count scaled by pool size over training size.
    InversePool,
}

pub fn expected_training_neighbors(
    pool_neighbors: usize,
    train_size: usize,
    pool_size: usize,
    ratio: ExpectedNeighborRatio,
) -> f64 {
    let n = pool_neighbors as f64;
    let (num, den) = (train_size as f64, pool_size as f64);
    match ratio {
        ExpectedNeighborRatio::Density => n * num / den,
        ExpectedNeighborRatio::InversePool => n * den / num,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Neighbor threshold on cosine distance, in `(0, 2]`.
    pub delta: f64,
    /// Probability threshold on the expected neighbor count.
    pub beta: f64,
    pub train_size: usize,
    pub pool_size: usize,
    #[serde(default)]
    pub ratio: ExpectedNeighborRatio,
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 2.0) {
            return Err(Error::Config(format!("neighbor threshold must lie in (0, 2] (got {})", self.delta)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("probability threshold must be >= 0 (got {})", self.beta)));
        }
        if self.train_size == 0 || self.pool_size == 0 {
            return Err(Error::Config("training and pool sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityVerdict {
    pub record_id: String,
    pub neighbor_count: usize,
    pub expected_neighbors: f64,
    pub selected: bool,
}

/// Verdict for every candidate; selected iff the expected number of
/// training-set neighbors is below `beta`.
pub fn select_vulnerable(
    candidates: &Dataset,
    pool: &Dataset,
    ensemble: &Ensemble,
    params: &SelectionParams,
) -> Result<Vec<VulnerabilityVerdict>> {
    let index = NeighborIndex::build(pool, ensemble)?;
    select_with_index(candidates, ensemble, &index, params)
}

pub fn select_with_index(
    candidates: &Dataset,
    ensemble: &Ensemble,
    index: &NeighborIndex,
    params: &SelectionParams,
) -> Result<Vec<VulnerabilityVerdict>> {
    params.validate()?;
    let features = candidate_features(candidates, ensemble)?;
    verdicts_from_features(&features, index, params)
}

pub fn candidate_features(candidates: &Dataset, ensemble: &Ensemble) -> Result<Vec<FeatureVector>> {
    par::map_slice(&candidates.records, |r| record_feature_vector(ensemble, r))
        .into_iter()
        .collect()
}

pub fn verdicts_from_features(
    features: &[FeatureVector],
    index: &NeighborIndex,
    params: &SelectionParams,
) -> Result<Vec<VulnerabilityVerdict>> {
    params.validate()?;
    par::map_slice(features, |f| {
        let neighbor_count = index.count(f, params.delta)?;
        let expected_neighbors =
            expected_training_neighbors(neighbor_count, params.train_size, params.pool_size, params.ratio);
        Ok(VulnerabilityVerdict {
            record_id: f.record_id.clone(),
            neighbor_count,
            expected_neighbors,
            selected: expected_neighbors < params.beta,
        })
    })
    .into_iter()
    .collect()
}

/// CSV with columns `record_id,neighbor_count,expected_neighbors,selected,delta,beta`.
pub fn write_verdicts_csv(path: &Path, verdicts: &[VulnerabilityVerdict], params: &SelectionParams) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "record_id,neighbor_count,expected_neighbors,selected,delta,beta")?;
    for v in verdicts {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            v.record_id, v.neighbor_count, v.expected_neighbors, v.selected, params.delta, params.beta
        )?;
    }
    out.flush()?;
    Ok(())
}
