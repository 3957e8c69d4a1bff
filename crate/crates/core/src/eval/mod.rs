//! The experimental harness: target models over a split plan, selection,
//! attacks and precision/recall aggregation, parameter sweeps, and the
//! two-dimensional demonstration.

mod protocol;
mod report;
mod sweep;
mod toy;

pub use protocol::{
    enhancing_for, model_id, parse_model_id, partition, run_protocol, selection_params, sort_rows, split_plan,
    train_reference, train_target, Partition, PreparedProtocol, ProtocolConfig, SelectionThresholds,
};
pub use report::{
    curve_csv, kind_curves, precision_recall_curve, report_csv, summary_json, write_report, AccuracySummary,
    AttackKind, AttackReport, AttackRow, CurvePoint, KindCurve, ReportSummary, REPORT_FORMAT,
};
pub use sweep::{sweep, sweep_csv, SweepPoint, SweepRow};
pub use toy::{histogram_csv, likelihood_csv, toy_demonstration, LikelihoodCell, SeparationSummary, ToyConfig, ToyReport};
