//! Offline QA evaluation: metrics, dataset loaders, reports and sweeps.

mod dataset;
mod harness;
mod metrics;

pub use dataset::{
    load_dataset, parse_dataset, sample_items, DatasetError, DatasetFormat, Location, QaItem,
};
pub use harness::{
    run_eval, run_sweep, sweep_summary_csv, write_sweep, Aggregate, EvalError, EvalOptions,
    EvalReport, ItemRow, JudgeRecord, SweepCell, SweepGrid, SweepResult, CSV_COLUMNS, MEAN_ROW,
};
pub use metrics::{exact_match, f1, normalize_answer};
