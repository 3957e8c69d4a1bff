//! Indirect inference: the target record is never queried. Queries whose
//! predictions shift when the target joins training are found, attacked one
//! by one with the direct machinery, and the p-values are combined.

mod candidates;
mod cluster;
mod combine;
mod influence;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use candidates::{generate_candidates, GenerationMode, IndirectParams};
pub use cluster::{average_linkage, cluster_select, medoids};
pub use combine::{estimate_query_correlation, fisher_combine, kost_combine, kost_covariance, CombinedResult, P_FLOOR};
pub use influence::{
    check_paired, hinge_objective, influence, optimize_enhancing, probability_shifts, select_enhancing,
    InfluenceScore, OptimizationOutcome,
};

use crate::data::{FeatureBounds, Record};
use crate::direct::{reference_losses, HypothesisResult, PreparedDirect};
use crate::ensemble::{Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::par;

/// Concatenated prediction vectors of every model in `ensemble` on `query`.
pub fn query_feature(ensemble: &Ensemble, query: &Record) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ensemble.k() * ensemble.spec.class_count());
    for m in &ensemble.models {
        out.extend(m.predict(&query.features)?);
    }
    Ok(out)
}

/// Per-query reference CDFs and their correlation, reusable across target models.
#[derive(Clone, Debug)]
pub struct PreparedIndirect {
    pub target_id: String,
    pub queries: Vec<PreparedDirect>,
    pub correlation: Vec<Vec<f64>>,
}

impl PreparedIndirect {
    /// Queries are relabelled with the target's class.
    pub fn new(target: &Record, enhancing: &[Record], reference: &Ensemble) -> Result<Self> {
        if reference.kind != EnsembleKind::Reference {
            return Err(Error::Config("the null distribution comes from a reference ensemble".into()));
        }
        if enhancing.is_empty() {
            return Err(Error::Config(format!("no enhancing records for {}", target.id)));
        }
        reference.ensure_excludes(&target.id)?;
        let queries: Vec<Record> = enhancing.iter().map(|q| q.with_label(target.label)).collect();
        for q in &queries {
            if q.id == target.id || q.euclidean_distance(target) == 0.0 {
                return Err(Error::Config(format!("enhancing record {} coincides with the target", q.id)));
            }
            reference.ensure_excludes(&q.id)?;
        }
        let prepared = par::map_slice(&queries, |q| {
            reference_losses(reference, q).and_then(|l| PreparedDirect::from_losses(q, &l))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let correlation = if queries.len() == 1 {
            vec![vec![1.0]]
        } else {
            let features = par::map_slice(&queries, |q| query_feature(reference, q))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            estimate_query_correlation(&features)?
        };
        Ok(PreparedIndirect {
            target_id: target.id.clone(),
            queries: prepared,
            correlation,
        })
    }

    pub fn attack_combined(&self, target_model: &ModelParams) -> Result<CombinedResult> {
        let p: Vec<f64> = self
            .queries
            .iter()
            .map(|q| q.attack(target_model, "").map(|h| h.p_value))
            .collect::<Result<_>>()?;
        kost_combine(&p, &self.correlation)
    }

    pub fn attack(&self, target_model: &ModelParams, model_id: &str) -> Result<HypothesisResult> {
        let combined = self.attack_combined(target_model)?;
        Ok(HypothesisResult {
            record_id: self.target_id.clone(),
            model_id: model_id.to_string(),
            statistic: combined.statistic,
            p_value: combined.p_value,
            degenerate: self.queries.iter().any(|q| q.cdf.degenerate),
        })
    }
}

pub fn indirect_attack(
    target_model: &ModelParams,
    model_id: &str,
    target: &Record,
    enhancing: &[Record],
    reference: &Ensemble,
) -> Result<HypothesisResult> {
    PreparedIndirect::new(target, enhancing, reference)?.attack(target_model, model_id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    Generated,
    Optimized,
}

/// One scored query with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancingRecord {
    pub query: Record,
    pub influence: f64,
    pub accepted: bool,
    pub origin: QueryOrigin,
    pub opt_steps: usize,
    pub distance_to_target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancingSet {
    pub target_id: String,
    pub generation_mode: GenerationMode,
    pub seed: u64,
    /// Every scored query, accepted or not.
    pub records: Vec<EnhancingRecord>,
}

impl EnhancingSet {
    pub fn accepted(&self) -> Vec<Record> {
        self.records.iter().filter(|r| r.accepted).map(|r| r.query.clone()).collect()
    }

    /// (min, max) distance of accepted queries to the target.
    pub fn distance_range(&self) -> Option<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.distance_to_target)
            .fold(None, |acc, d| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

/// Generate, optionally cluster, score and select; when fewer than
/// `min_enhancing` pass, rejected queries are optimized and rescored.
pub fn find_enhancing(
    target: &Record,
    reference: &Ensemble,
    positive: &Ensemble,
    bounds: &FeatureBounds,
    params: &IndirectParams,
    seed: u64,
) -> Result<EnhancingSet> {
    check_paired(reference, positive)?;
    let mut candidates = generate_candidates(params, target, bounds, seed)?;
    if params.n_clusters > 0 && params.n_clusters < candidates.len() {
        candidates = cluster_select(&candidates, reference, params.n_clusters)?;
    }
    let scores = par::map_slice(&candidates, |q| influence(target, q, reference, positive))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<EnhancingRecord> = candidates
        .into_iter()
        .zip(scores)
        .map(|(q, s)| EnhancingRecord {
            distance_to_target: q.euclidean_distance(target),
            accepted: select_enhancing(&s, params.theta),
            influence: s.value,
            query: q,
            origin: QueryOrigin::Generated,
            opt_steps: 0,
        })
        .collect();
    if records.iter().filter(|r| r.accepted).count() < params.min_enhancing {
        let rejected: Vec<usize> = (0..records.len()).filter(|&i| !records[i].accepted).collect();
        let outcomes = par::map_slice(&rejected, |&i| {
            optimize_enhancing(&records[i].query, target, reference, positive, bounds, params)
        });
        for (&i, out) in rejected.iter().zip(outcomes) {
            let out = out?;
            let r = &mut records[i];
            r.distance_to_target = out.query.euclidean_distance(target);
            r.accepted = select_enhancing(&out.influence, params.theta) && r.distance_to_target > 0.0;
            r.influence = out.influence.value;
            r.origin = QueryOrigin::Optimized;
            r.opt_steps = out.steps;
            r.query = out.query;
        }
    }
    for r in &mut records {
        if r.distance_to_target == 0.0 {
            r.accepted = false;
        }
    }
    Ok(EnhancingSet {
        target_id: target.id.clone(),
        generation_mode: params.generation_mode,
        seed,
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct EnhancingRow {
    target_id: String,
    query_id: String,
    label: usize,
    influence: f64,
    accepted: bool,
    origin: QueryOrigin,
    opt_steps: usize,
    distance_to_target: f64,
    generation_mode: GenerationMode,
    seed: u64,
    features: String,
}

pub fn write_enhancing_csv(path: &Path, set: &EnhancingSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &set.records {
        w.serialize(EnhancingRow {
            target_id: set.target_id.clone(),
            query_id: r.query.id.clone(),
            label: r.query.label,
            influence: r.influence,
            accepted: r.accepted,
            origin: r.origin,
            opt_steps: r.opt_steps,
            distance_to_target: r.distance_to_target,
            generation_mode: set.generation_mode,
            seed: set.seed,
            features: r.query.features.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_enhancing_csv(path: &Path) -> Result<EnhancingSet> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut set: Option<EnhancingSet> = None;
    for (line, row) in rdr.deserialize::<EnhancingRow>().enumerate() {
        let row = row?;
        let features = row
            .features
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line as u64 + 2,
                message: e.to_string(),
            })?;
        let s = set.get_or_insert_with(|| EnhancingSet {
            target_id: row.target_id.clone(),
            generation_mode: row.generation_mode,
            seed: row.seed,
            records: Vec::new(),
        });
        if s.target_id != row.target_id {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line as u64 + 2,
                message: format!("mixed targets {} and {}", s.target_id, row.target_id),
            });
        }
        s.records.push(EnhancingRecord {
            query: Record::new(row.query_id, features, row.label),
            influence: row.influence,
            accepted: row.accepted,
            origin: row.origin,
            opt_steps: row.opt_steps,
            distance_to_target: row.distance_to_target,
        });
    }
    set.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "no enhancing records".into(),
    })
}
