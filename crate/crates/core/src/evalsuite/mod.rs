//! Metrics, the linear-probe hyperparameter sweep, multi-run aggregation,
//! ablations and report files.

mod ablate;
pub mod metrics;
mod report;
mod sweep;

pub use ablate::{ablate, EvalBank, Knob, KnobValue, TEMPERATURES};
pub use metrics::{
    mean_per_class_accuracy, mean_per_class_from_predictions, score, top1_accuracy, top1_from_predictions,
    MeanPerClass, MetricKind,
};
pub use report::{aggregate_runs, read_report, write_report, Aggregate, ReportRow, RunReport, MEAN_ROW, REPORT_HEADER};
pub use sweep::{
    evaluate, run_sweep, select_best, sweep_trace_csv, write_sweep_trace, EvalConfig, EvalOutcome, FeatureProbe,
    ProbeTrainer, RunProtocol, SweepGrid, SweepOutcome, SweepPoint,
};
