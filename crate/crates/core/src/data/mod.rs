//! Records, datasets and the sampling plans that drive every experiment.

mod encode;
mod split;
mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use encode::{load_csv, read_table, ColumnEncoding, ColumnKind, ColumnSpec, Encoding, RawTable, Schema};
pub use split::{bootstrap_sample, make_split_plan, BootstrapSample, SplitPlan};
pub use synth::{
    cancer_like_dataset, cancer_like_schema, generate_cancer_like, generate_toy, TOY_CONTROL_ID, TOY_OUTLIER_ID, TOY_RECORDS,
};

/// A labelled feature vector. Used both for target records and for queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
}

impl Record {
    pub fn new(id: impl Into<String>, features: Vec<f64>, label: usize) -> Self {
        Record {
            id: id.into(),
            features,
            label,
        }
    }

    pub fn with_label(&self, label: usize) -> Record {
        Record {
            label,
            ..self.clone()
        }
    }

    pub fn euclidean_distance(&self, other: &Record) -> f64 {
        self.features
            .iter()
            .zip(&other.features)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<Record>,
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<Encoding>,
}

impl Dataset {
    /// Builds a dataset and checks the record invariants.
    pub fn new(name: impl Into<String>, records: Vec<Record>, class_count: usize) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            records,
            class_count,
            encoding: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config(format!("dataset `{}` needs at least 2 classes", self.name)));
        }
        let dim = self.dim();
        let mut seen = HashMap::with_capacity(self.records.len());
        for r in &self.records {
            if r.features.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: r.features.len(),
                });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("record `{}` has non-finite features", r.id)));
            }
            if r.label >= self.class_count {
                return Err(Error::Config(format!(
                    "record `{}` has label {} but the dataset has {} classes",
                    r.id, r.label, self.class_count
                )));
            }
            if seen.insert(r.id.as_str(), ()).is_some() {
                return Err(Error::Config(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.features.len())
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Resolves ids (with multiplicity) to records.
    pub fn resolve<'a, S: AsRef<str>>(&'a self, ids: &[S]) -> Result<Vec<&'a Record>> {
        let index = self.id_index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .map(|&i| &self.records[i])
                    .ok_or_else(|| Error::UnknownRecord(id.as_ref().to_string()))
            })
            .collect()
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            class_count: self.class_count,
            encoding: self.encoding.clone(),
        }
    }

    pub fn bounds(&self) -> FeatureBounds {
        FeatureBounds::of(self.records.iter())
    }

    /// Fraction of records in each class.
    pub fn class_balance(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.len().max(1) as f64).collect()
    }
}

/// Per-feature observed range of an encoded dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeatureBounds {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a Record>) -> Self {
        let mut lower: Vec<f64> = Vec::new();
        let mut upper: Vec<f64> = Vec::new();
        for r in records {
            if lower.is_empty() {
                lower = r.features.clone();
                upper = r.features.clone();
                continue;
            }
            for (j, &v) in r.features.iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
        FeatureBounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, features: &mut [f64]) {
        for ((v, lo), hi) in features.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, features: &[f64]) -> bool {
        features
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}
