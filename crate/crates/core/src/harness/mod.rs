//! Training loop, evaluation and reporting.

pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod run;
pub mod train;
#[cfg(test)]
mod testutil;

pub use eval::{dataset_metrics, evaluate_scored, score_pairs, score_pairs_cached, FrameCache, ScoredPair};
pub use metrics::{compute_auc, compute_eer, roc_curve, RocPoint};
pub use report::{aggregate_runs, CurvePoint, DatasetMetrics, DatasetSummary, EvalReport, MeanStd, SeedResult};
pub use train::{train, train_cached, EpochLog, Selection, StepLog, TrainConfig, TrainOutcome};
pub use experiment::{curve_of, run_experiment, ExperimentConfig, ExperimentOutcome, ModeResult, DATASET};
pub use run::{run_pretrain, run_train, PretrainRunConfig, TrainRunConfig};
