use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::{kind_curves, AccuracySummary, AttackKind, AttackReport, AttackRow, ReportSummary, REPORT_FORMAT};
use crate::data::{make_split_plan, Dataset, Record, SplitPlan};
use crate::direct::PreparedDirect;
use crate::ensemble::{build_positive_reference_models, build_reference_models, Ensemble, PositiveConfig};
use crate::error::{Error, Result};
use crate::indirect::{find_enhancing, EnhancingSet, IndirectParams, PreparedIndirect};
use crate::model::{train_records, Activation, ModelParams, ModelSpec, TrainingConfig};
use crate::par;
use crate::rng::{derive_named, derive_seed, seeded};
use crate::selection::{select_vulnerable, ExpectedNeighborRatio, SelectionParams, VulnerabilityVerdict};
use crate::stats::mean_sd;

/// Neighbor and probability thresholds; the size ratio is filled in from the
/// protocol's partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionThresholds {
    pub delta: f64,
    pub beta: f64,
    #[serde(default)]
    pub ratio: ExpectedNeighborRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Each repeat contributes two target models trained on complementary halves.
    pub n_repeats: usize,
    /// Records eligible as attack targets; must be even.
    pub target_pool_size: usize,
    /// Records kept out of every training and reference set.
    #[serde(default)]
    pub null_holdout: usize,
    pub cutoffs: Vec<f64>,
    pub kinds: Vec<AttackKind>,
    pub selection: SelectionThresholds,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    pub n_references: usize,
    /// Bootstrap sample size; defaults to the target training size.
    #[serde(default)]
    pub reference_sample_size: Option<usize>,
    #[serde(default)]
    pub positive: PositiveConfig,
    #[serde(default)]
    pub indirect: IndirectParams,
    pub seed: u64,
}

impl ProtocolConfig {
    /// Desk-scale defaults for a 699-record, 10-feature binary dataset.
    pub fn cancer(input_dim: usize) -> Self {
        ProtocolConfig {
            n_repeats: 50,
            target_pool_size: 200,
            null_holdout: 40,
            cutoffs: vec![0.0001, 0.001, 0.01, 0.1],
            kinds: vec![AttackKind::Direct],
            selection: SelectionThresholds {
                delta: 0.1,
                beta: 0.1,
                ratio: ExpectedNeighborRatio::Density,
            },
            model: ModelSpec {
                layer_sizes: vec![input_dim, 4, 2],
                hidden_activation: Activation::Tanh,
            },
            training: TrainingConfig {
                epochs: 300,
                batch_size: 20,
                learning_rate: 0.2,
                l2: 0.0,
                seed: 0,
            },
            n_references: 30,
            reference_sample_size: None,
            positive: PositiveConfig::default(),
            indirect: IndirectParams::default(),
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::Config("n_repeats must be positive".into()));
        }
        if self.target_pool_size == 0 || !self.target_pool_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "target pool size must be positive and even (got {})",
                self.target_pool_size
            )));
        }
        if self.cutoffs.is_empty() {
            return Err(Error::Config("at least one cutoff is required".into()));
        }
        for w in self.cutoffs.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Config("cutoffs must be strictly increasing".into()));
            }
        }
        if self.cutoffs.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::Config("cutoffs must lie in (0, 1]".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no attack kinds requested".into()));
        }
        self.model.validate()?;
        self.training.validate()?;
        if self.kinds.contains(&AttackKind::Indirect) {
            self.indirect.validate()?;
        }
        Ok(())
    }

    pub fn train_size(&self) -> usize {
        self.target_pool_size / 2
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_named(self.seed, stage)
    }
}

/// Disjoint record pools.
#[derive(Clone, Debug)]
pub struct Partition {
    pub target_pool: Dataset,
    pub reference_pool: Dataset,
    pub null_pool: Dataset,
}

pub fn partition(dataset: &Dataset, config: &ProtocolConfig) -> Result<Partition> {
    let need = config.target_pool_size + config.null_holdout;
    if dataset.len() <= need {
        return Err(Error::Config(format!(
            "dataset has {} records; {} are needed for targets and holdout plus a reference pool",
            dataset.len(),
            need
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeded(config.stage_seed("partition")));
    let pick = |range: std::ops::Range<usize>, name: &str| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        dataset.subset(format!("{}/{name}", dataset.name), &idx)
    };
    let t = config.target_pool_size;
    let h = t + config.null_holdout;
    Ok(Partition {
        target_pool: pick(0..t, "targets"),
        null_pool: pick(t..h, "null"),
        reference_pool: pick(h..dataset.len(), "reference"),
    })
}

pub fn model_id(index: usize) -> String {
    format!("target-{index:03}")
}

/// Inverse of [`model_id`].
pub fn parse_model_id(id: &str) -> Option<usize> {
    let digits = id.strip_prefix("target-")?;
    if digits.len() < 3 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn selection_params(config: &ProtocolConfig, partition: &Partition, t: &SelectionThresholds) -> SelectionParams {
    SelectionParams {
        delta: t.delta,
        beta: t.beta,
        train_size: config.train_size(),
        pool_size: partition.reference_pool.len(),
        ratio: t.ratio,
    }
}

pub fn split_plan(partition: &Partition, config: &ProtocolConfig) -> Result<SplitPlan> {
    make_split_plan(&partition.target_pool, config.n_repeats, config.stage_seed("split"))
}

/// Trains target model `m` of the split plan.
pub fn train_target(partition: &Partition, plan: &SplitPlan, config: &ProtocolConfig, m: usize) -> Result<ModelParams> {
    let ctx = |e: Error| e.context(format!("training {}", model_id(m)));
    let ids = plan
        .membership
        .get(m)
        .ok_or_else(|| Error::Config(format!("the split plan has {} models; {} is out of range", plan.n_models, model_id(m))))?;
    let records = partition.target_pool.resolve(ids).map_err(ctx)?;
    let seed = derive_seed(config.stage_seed("targets"), m as u64);
    train_records(&records, &config.model, &config.training.with_seed(seed)).map_err(ctx)
}

pub fn train_reference(partition: &Partition, config: &ProtocolConfig) -> Result<Ensemble> {
    build_reference_models(
        &partition.reference_pool,
        config.n_references,
        config.reference_sample_size.unwrap_or(config.train_size()),
        &config.model,
        &config.training,
        config.stage_seed("references"),
    )
}

/// Positive ensemble and enhancing-record search for one target record.
pub fn enhancing_for(partition: &Partition, reference: &Ensemble, config: &ProtocolConfig, record: &Record) -> Result<EnhancingSet> {
    let mut pc = config.positive.clone();
    pc.update.seed = config.stage_seed("positive");
    let positive = build_positive_reference_models(reference, &partition.reference_pool, record, &pc)?;
    find_enhancing(
        record,
        reference,
        &positive,
        &partition.reference_pool.bounds(),
        &config.indirect,
        derive_named(config.stage_seed("enhancing"), &record.id),
    )
}

/// Everything that does not depend on selection thresholds: the partition,
/// the split plan, the target models and the reference ensemble.
#[derive(Clone, Debug)]
pub struct PreparedProtocol {
    pub config: ProtocolConfig,
    pub dataset_name: String,
    pub partition: Partition,
    pub plan: SplitPlan,
    pub targets: Vec<ModelParams>,
    pub reference: Ensemble,
}

impl PreparedProtocol {
    pub fn prepare(dataset: &Dataset, config: &ProtocolConfig) -> Result<Self> {
        config.validate()?;
        if dataset.dim() != config.model.input_dim() || dataset.class_count != config.model.class_count() {
            return Err(Error::Dimension {
                expected: config.model.input_dim(),
                actual: dataset.dim(),
            });
        }
        let partition = partition(dataset, config)?;
        let plan = split_plan(&partition, config)?;
        let targets = par::try_map_indexed(plan.n_models, |m| train_target(&partition, &plan, config, m))?;
        let reference = train_reference(&partition, config)?;
        Ok(PreparedProtocol {
            config: config.clone(),
            dataset_name: dataset.name.clone(),
            partition,
            plan,
            targets,
            reference,
        })
    }

    pub fn model_ids(&self) -> Vec<String> {
        (0..self.targets.len()).map(model_id).collect()
    }

    pub fn selection_params(&self, t: &SelectionThresholds) -> SelectionParams {
        selection_params(&self.config, &self.partition, t)
    }

    /// Verdicts for every target-pool record.
    pub fn select(&self, t: &SelectionThresholds) -> Result<Vec<VulnerabilityVerdict>> {
        select_vulnerable(
            &self.partition.target_pool,
            &self.partition.reference_pool,
            &self.reference,
            &self.selection_params(t),
        )
    }

    fn membership_sets(&self) -> Vec<HashSet<&str>> {
        self.plan.membership.iter().map(|m| m.iter().map(String::as_str).collect()).collect()
    }

    /// Direct attack of every record against every target model.
    pub fn attack_direct(&self, records: &[&Record]) -> Result<Vec<AttackRow>> {
        let members = self.membership_sets();
        let per_record = par::map_slice(records, |r| {
            let prepared = PreparedDirect::new(&self.reference, r).map_err(|e| e.context(format!("record {}", r.id)))?;
            self.rows_for(&r.id, AttackKind::Direct, &members, |m| prepared.attack(&self.targets[m], &model_id(m)))
        });
        flatten(per_record)
    }

    /// Indirect attack of every record; records without accepted enhancing
    /// queries produce no rows.
    pub fn attack_indirect(&self, records: &[&Record]) -> Result<(Vec<AttackRow>, Vec<EnhancingSet>)> {
        let members = self.membership_sets();
        let mut rows = Vec::new();
        let mut sets = Vec::new();
        for r in records {
            let ctx = |e: Error| e.context(format!("record {}", r.id));
            let set = enhancing_for(&self.partition, &self.reference, &self.config, r).map_err(ctx)?;
            let accepted = set.accepted();
            if !accepted.is_empty() {
                let prepared = PreparedIndirect::new(r, &accepted, &self.reference).map_err(ctx)?;
                rows.extend(self.rows_for(&r.id, AttackKind::Indirect, &members, |m| {
                    prepared.attack(&self.targets[m], &model_id(m))
                })?);
            }
            sets.push(set);
        }
        Ok((rows, sets))
    }

    fn rows_for<F>(&self, record_id: &str, kind: AttackKind, members: &[HashSet<&str>], attack: F) -> Result<Vec<AttackRow>>
    where
        F: Fn(usize) -> Result<crate::direct::HypothesisResult> + Sync + Send,
    {
        par::try_map_indexed(self.targets.len(), |m| {
            let h = attack(m).map_err(|e| e.context(format!("record {record_id}, model {}", model_id(m))))?;
            Ok(AttackRow {
                record_id: record_id.to_string(),
                model_id: h.model_id,
                kind,
                p_value: h.p_value,
                statistic: h.statistic,
                member: members[m].contains(record_id),
                degenerate: h.degenerate,
            })
        })
    }

    /// Direct-attack p-values of held-out records against every target model.
    pub fn null_p_values(&self) -> Result<Vec<f64>> {
        let records: Vec<&Record> = self.partition.null_pool.records.iter().collect();
        Ok(self.attack_direct(&records)?.into_iter().map(|r| r.p_value).collect())
    }

    /// Mean and sd of train and test accuracy over the target models; the
    /// test set of a model is the other half of the target pool.
    pub fn accuracy(&self) -> Result<AccuracySummary> {
        let members = self.membership_sets();
        let pairs = par::try_map_indexed(self.targets.len(), |m| {
            let (train, test): (Vec<&Record>, Vec<&Record>) = self
                .partition
                .target_pool
                .records
                .iter()
                .partition(|r| members[m].contains(r.id.as_str()));
            Ok::<_, Error>((self.targets[m].accuracy(train)?, self.targets[m].accuracy(test)?))
        })?;
        let (train, test): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (train_mean, train_sd) = mean_sd(&train);
        let (test_mean, test_sd) = mean_sd(&test);
        Ok(AccuracySummary {
            train_mean,
            train_sd,
            test_mean,
            test_sd,
        })
    }

    /// Select with `thresholds`, attack every selected record with `kinds`
    /// and aggregate.
    pub fn report(&self, thresholds: &SelectionThresholds, kinds: &[AttackKind]) -> Result<AttackReport> {
        let verdicts = self.select(thresholds)?;
        let selected: Vec<&Record> = verdicts
            .iter()
            .filter(|v| v.selected)
            .map(|v| self.partition.target_pool.get(&v.record_id).expect("verdicts come from the target pool"))
            .collect();
        let mut rows = Vec::new();
        let mut notes = Vec::new();
        if kinds.contains(&AttackKind::Direct) {
            rows.extend(self.attack_direct(&selected)?);
        }
        if kinds.contains(&AttackKind::Indirect) {
            let (indirect, sets) = self.attack_indirect(&selected)?;
            rows.extend(indirect);
            for s in sets {
                match s.distance_range() {
                    Some((lo, hi)) => notes.push(format!(
                        "{}: {} enhancing records, distance to target {lo:.3}..{hi:.3}",
                        s.target_id,
                        s.accepted().len()
                    )),
                    None => notes.push(format!("{}: no enhancing records accepted", s.target_id)),
                }
            }
        }
        if selected.is_empty() {
            notes.push("no vulnerable records selected; report is empty".into());
        }
        sort_rows(&mut rows);
        let summary = ReportSummary {
            format: REPORT_FORMAT.to_string(),
            dataset: self.dataset_name.clone(),
            seed: self.config.seed,
            n_models: self.targets.len(),
            delta: thresholds.delta,
            beta: thresholds.beta,
            selected: selected.iter().map(|r| r.id.clone()).collect(),
            curves: kind_curves(&rows, &self.config.cutoffs),
            accuracy: self.accuracy()?,
            empty: rows.is_empty(),
            notes,
        };
        Ok(AttackReport {
            rows,
            cutoffs: self.config.cutoffs.clone(),
            summary,
        })
    }
}

fn flatten(parts: Vec<Result<Vec<AttackRow>>>) -> Result<Vec<AttackRow>> {
    let mut rows = Vec::new();
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

/// Row order: record id, then model id, then attack kind.
pub fn sort_rows(rows: &mut [AttackRow]) {
    rows.sort_by(|a, b| {
        (a.record_id.as_str(), a.model_id.as_str(), a.kind).cmp(&(b.record_id.as_str(), b.model_id.as_str(), b.kind))
    });
}

pub fn run_protocol(dataset: &Dataset, config: &ProtocolConfig) -> Result<AttackReport> {
    PreparedProtocol::prepare(dataset, config)?.report(&config.selection, &config.kinds)
}
