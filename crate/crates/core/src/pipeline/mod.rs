//! End-to-end training, evaluation, ablation, and reporting.

mod ablate;
mod config;
mod eval;
mod model;
mod report;
mod selection;
mod train;

pub use ablate::{ablate, AblationMean, AblationRow, AblationRun, AblationTable, ABLATION_FILE, ABLATION_HEADER, ABLATION_ROWS, ABLATION_SUMMARY_FILE};
pub use config::TrainConfig;
pub use eval::{evaluate, evaluate_samples, evaluate_with, selection_records, uncertainty_rows, Checkpoint, EvalResult};
pub use model::{mean_pool, Model, ModelConfig, SequenceTrace, ATTENTION, CLASSIFIER, STEM, TAIL};
pub use report::{discover_runs, report, ReportFiles, RunRecord, REPORT_DIR};
pub use selection::{planted_recall, select_sequence, sequence_frames, FrameView, Selection, SelectorMode};
pub use train::{read_metrics, train, MetricsRow, TrainOutcome, WeightSummary, METRICS_HEADER};
