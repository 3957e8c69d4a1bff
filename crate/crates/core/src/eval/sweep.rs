use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::protocol::{PreparedProtocol, ProtocolConfig, SelectionThresholds};
use super::report::{AccuracySummary, KindCurve};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepPoint {
    Epochs { epochs: usize },
    L2Lambda { l2: f64 },
    SelectionThresholds { delta: f64, beta: f64 },
}

impl SweepPoint {
    pub fn label(&self) -> String {
        match self {
            SweepPoint::Epochs { epochs } => format!("epochs={epochs}"),
            SweepPoint::L2Lambda { l2 } => format!("l2={l2}"),
            SweepPoint::SelectionThresholds { delta, beta } => format!("delta={delta};beta={beta}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub accuracy: AccuracySummary,
    pub selected: Vec<String>,
    pub curves: Vec<KindCurve>,
}

/// One protocol run per point. Threshold points share a single set of
/// trained models; epoch and L2 points retrain targets and references.
pub fn sweep(dataset: &Dataset, config: &ProtocolConfig, points: &[SweepPoint]) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut shared: Option<PreparedProtocol> = None;
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let ctx = |e: Error| e.context(format!("sweep point {}", point.label()));
        let (prepared, thresholds) = match point {
            SweepPoint::SelectionThresholds { delta, beta } => {
                if shared.is_none() {
                    shared = Some(PreparedProtocol::prepare(dataset, config).map_err(ctx)?);
                }
                let t = SelectionThresholds {
                    delta: *delta,
                    beta: *beta,
                    ratio: config.selection.ratio,
                };
                (None, t)
            }
            SweepPoint::Epochs { epochs } => {
                let mut c = config.clone();
                c.training.epochs = *epochs;
                (Some(PreparedProtocol::prepare(dataset, &c).map_err(ctx)?), config.selection.clone())
            }
            SweepPoint::L2Lambda { l2 } => {
                let mut c = config.clone();
                c.training.l2 = *l2;
                (Some(PreparedProtocol::prepare(dataset, &c).map_err(ctx)?), config.selection.clone())
            }
        };
        let p = prepared.as_ref().or(shared.as_ref()).expect("a prepared protocol");
        let report = p.report(&thresholds, &config.kinds).map_err(ctx)?;
        rows.push(SweepRow {
            point: point.clone(),
            accuracy: report.summary.accuracy,
            selected: report.summary.selected,
            curves: report.summary.curves,
        });
    }
    Ok(rows)
}

/// `point,kind,cutoff,precision,recall,tp,fp,selected,train_acc,test_acc`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("point,kind,cutoff,precision,recall,tp,fp,selected,train_acc,test_acc\n");
    for r in rows {
        if r.curves.is_empty() {
            let _ = writeln!(
                s,
                "{},-,-,-,-,-,-,0,{},{}",
                r.point.label(),
                r.accuracy.train_mean,
                r.accuracy.test_mean
            );
        }
        for c in &r.curves {
            for p in &c.points {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.point.label(),
                    c.kind.as_str(),
                    p.cutoff,
                    p.precision.map_or_else(|| "-".to_string(), |v| v.to_string()),
                    p.recall,
                    p.tp,
                    p.fp,
                    r.selected.len(),
                    r.accuracy.train_mean,
                    r.accuracy.test_mean
                );
            }
        }
    }
    s
}
