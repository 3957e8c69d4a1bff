use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "gmia-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Direct,
    Indirect,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Direct => "direct",
            AttackKind::Indirect => "indirect",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(AttackKind::Direct),
            "indirect" => Ok(AttackKind::Indirect),
            other => Err(Error::Config(format!("unknown attack kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub record_id: String,
    pub model_id: String,
    pub kind: AttackKind,
    pub p_value: f64,
    pub statistic: f64,
    /// Ground truth from the split plan.
    pub member: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cutoff: f64,
    pub tp: usize,
    pub fp: usize,
    /// Rows whose record is in the model's training set.
    pub members: usize,
    /// `None` when nothing fired.
    pub precision: Option<f64>,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindCurve {
    pub kind: AttackKind,
    pub rows: usize,
    /// Precision when every attack infers membership.
    pub base_rate: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub train_mean: f64,
    pub train_sd: f64,
    pub test_mean: f64,
    pub test_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub format: String,
    pub dataset: String,
    pub seed: u64,
    pub n_models: usize,
    pub delta: f64,
    pub beta: f64,
    pub selected: Vec<String>,
    pub curves: Vec<KindCurve>,
    pub accuracy: AccuracySummary,
    pub empty: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub rows: Vec<AttackRow>,
    pub cutoffs: Vec<f64>,
    pub summary: ReportSummary,
}

impl AttackReport {
    pub fn curve(&self, kind: AttackKind) -> Option<&KindCurve> {
        self.summary.curves.iter().find(|c| c.kind == kind)
    }

    pub fn point(&self, kind: AttackKind, cutoff: f64) -> Option<&CurvePoint> {
        self.curve(kind)?.points.iter().find(|p| p.cutoff == cutoff)
    }

    /// Aggregates recomputed from the rows agree with the stored summary.
    pub fn is_consistent(&self) -> bool {
        kind_curves(&self.rows, &self.cutoffs) == self.summary.curves
    }
}

/// TP, FP, precision and recall at each cutoff, over rows of a single kind.
/// An attack fires when its p-value is strictly below the cutoff.
pub fn precision_recall_curve(rows: &[AttackRow], cutoffs: &[f64]) -> Vec<CurvePoint> {
    let members = rows.iter().filter(|r| r.member).count();
    cutoffs
        .iter()
        .map(|&cutoff| {
            let (mut tp, mut fp) = (0, 0);
            for r in rows.iter().filter(|r| r.p_value < cutoff) {
                if r.member {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
            CurvePoint {
                cutoff,
                tp,
                fp,
                members,
                precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
                recall: if members > 0 { tp as f64 / members as f64 } else { 0.0 },
            }
        })
        .collect()
}

/// One curve per attack kind present in `rows`, in kind order.
pub fn kind_curves(rows: &[AttackRow], cutoffs: &[f64]) -> Vec<KindCurve> {
    let mut kinds: Vec<AttackKind> = rows.iter().map(|r| r.kind).collect();
    kinds.sort();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|kind| {
            let subset: Vec<AttackRow> = rows.iter().filter(|r| r.kind == kind).cloned().collect();
            let members = subset.iter().filter(|r| r.member).count();
            KindCurve {
                kind,
                rows: subset.len(),
                base_rate: members as f64 / subset.len() as f64,
                points: precision_recall_curve(&subset, cutoffs),
            }
        })
        .collect()
}

fn fmt_precision(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Detail rows with one `fire@<cutoff>` column per cutoff.
pub fn report_csv(report: &AttackReport) -> String {
    let mut s = String::from("record_id,model_id,kind,p_value,statistic,member,degenerate");
    for c in &report.cutoffs {
        let _ = write!(s, ",fire@{c}");
    }
    s.push('\n');
    for r in &report.rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            r.record_id,
            r.model_id,
            r.kind.as_str(),
            r.p_value,
            r.statistic,
            r.member,
            r.degenerate
        );
        for &c in &report.cutoffs {
            let _ = write!(s, ",{}", r.p_value < c);
        }
        s.push('\n');
    }
    s
}

/// `kind,cutoff,precision,recall,tp,fp`; undefined precision is `-`.
pub fn curve_csv(report: &AttackReport) -> String {
    let mut s = String::from("kind,cutoff,precision,recall,tp,fp\n");
    for curve in &report.summary.curves {
        for p in &curve.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                curve.kind.as_str(),
                p.cutoff,
                fmt_precision(p.precision),
                p.recall,
                p.tp,
                p.fp
            );
        }
    }
    s
}

pub fn summary_json(report: &AttackReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&report.summary)? + "\n")
}

/// Writes `report.csv`, `summary.json` and `curve.csv` into `dir`.
pub fn write_report(dir: &Path, report: &AttackReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), report_csv(report))?;
    fs::write(dir.join("summary.json"), summary_json(report)?)?;
    fs::write(dir.join("curve.csv"), curve_csv(report))?;
    Ok(())
}
