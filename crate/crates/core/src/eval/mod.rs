//! Episode metrics, the multi-trial evaluation protocol, robustness sweeps and reports.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{compute_metrics, EpisodeMetrics};
pub use protocol::{
    method_name, robustness_sweep, run_eval, EvalOptions, EvalRow, EvalTable, RobustnessReport, RobustnessSpec,
    AGGREGATE_CLIP,
};
pub use report::{emit_report, rows_from_csv, rows_to_csv, rows_to_json, ReportFormat, CSV_HEADER, MEAN_TRIAL};
