//! Experiment orchestration: content-addressed stage store, the drift
//! experiment matrix, and deterministic report rendering.

pub mod compare;
pub mod experiment;
pub mod images;
pub mod report;
pub mod store;
pub mod svg;

pub use compare::{compare_models, CompareConfig, CompareSummary};
pub use experiment::{
    ablation_method, eval_subset, matrix_cells, run_experiment, Cell, CustomizeMatrix,
    ExperimentConfig, ExperimentKind, ModelRef, Pipeline, PipelineSpec,
};
pub use images::{load_image_set, load_png, save_image_set, save_png};
pub use report::{
    parse_formats, render_report, AccuracyRow, DriftReport, MetricRow, ReportFormat,
    SimilarityRow, REPORT_SCHEMA_VERSION,
};
pub use store::{canonical_json, config_hash, ArtifactStore, HOME_ENV};
