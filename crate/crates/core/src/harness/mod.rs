//! Run configuration, dataset generation, training stages, evaluation,
//! parameter sweeps and the self-consistency audit.

mod config;
mod dataset;
mod evaluate;
mod pipeline;
mod predict;
mod sweep;

pub use config::{
    AllocatorKind, CsiSource, DatasetConfig, EvalConfig, RunConfig, SweepAxis, SweepConfig,
};
pub use dataset::{
    draw_sample, percentile, Dataset, DatasetHeader, Normalizers, DATASET_FORMAT_VERSION,
    DATASET_MAGIC,
};
pub use evaluate::{
    allocate, audit, evaluate, instances, read_csv, read_trace, true_coeffs, utility_context,
    AuditPoint, AuditRecord, AuditReport, Failure, MetricsRow, Models, PointNmse, PointSummary,
    Report, Summary, Trace, GROUPS,
};
pub use pipeline::{
    run_pipeline, stage_train_cp, stage_train_mlp, stage_train_moe, PipelineOutputs, TrainLogs,
    DATASET_FILE, MLP_FILE, MOE_FILE,
};
pub use predict::{
    predict_kind, predict_samples, train_predictors, CpModels, KindNmse, Predictions,
};
pub use sweep::{run_sweep, sweep_normalizers};
