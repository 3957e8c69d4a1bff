//! Direct inference: a left-tailed test of the target model's loss on the
//! target record against the reference models' losses on it.

use serde::{Deserialize, Serialize};

use crate::cdf::CdfModel;
use crate::data::Record;
use crate::ensemble::{Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub values: Vec<f64>,
    pub ensemble_id: String,
    pub record_id: String,
}

/// Loss of every reference model on `record`, in model order.
pub fn reference_losses(ensemble: &Ensemble, record: &Record) -> Result<LossSample> {
    let values = ensemble
        .models
        .iter()
        .map(|m| m.log_loss(record))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossSample {
        values,
        ensemble_id: ensemble.id.clone(),
        record_id: record.id.clone(),
    })
}

pub fn fit_cdf(losses: &LossSample) -> Result<CdfModel> {
    CdfModel::fit(&losses.values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub record_id: String,
    pub model_id: String,
    /// Target-model loss on the queried record.
    pub statistic: f64,
    pub p_value: f64,
    /// The reference CDF was a degenerate step.
    #[serde(default)]
    pub degenerate: bool,
}

impl HypothesisResult {
    /// Infers membership at `cutoff`.
    pub fn is_member(&self, cutoff: f64) -> bool {
        self.p_value < cutoff
    }
}

/// Reference CDF for one record, reusable across many target models.
#[derive(Clone, Debug)]
pub struct PreparedDirect {
    pub record: Record,
    pub cdf: CdfModel,
}

impl PreparedDirect {
    pub fn new(ensemble: &Ensemble, record: &Record) -> Result<Self> {
        if ensemble.kind != EnsembleKind::Reference {
            return Err(Error::Config("the null distribution comes from a reference ensemble".into()));
        }
        ensemble.ensure_excludes(&record.id)?;
        Self::from_losses(record, &reference_losses(ensemble, record)?)
    }

    pub(crate) fn from_losses(record: &Record, losses: &LossSample) -> Result<Self> {
        Ok(PreparedDirect {
            record: record.clone(),
            cdf: fit_cdf(losses)?,
        })
    }

    pub fn attack(&self, target_model: &ModelParams, model_id: &str) -> Result<HypothesisResult> {
        let statistic = target_model.log_loss(&self.record)?;
        Ok(HypothesisResult {
            record_id: self.record.id.clone(),
            model_id: model_id.to_string(),
            statistic,
            p_value: self.cdf.evaluate(statistic),
            degenerate: self.cdf.degenerate,
        })
    }
}

pub fn direct_attack(
    target_model: &ModelParams,
    model_id: &str,
    target: &Record,
    ensemble: &Ensemble,
) -> Result<HypothesisResult> {
    PreparedDirect::new(ensemble, target)?.attack(target_model, model_id)
}
