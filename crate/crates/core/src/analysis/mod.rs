//! Closed-form complexity accounting, attention-map analysis, and experiment
//! orchestration with machine-readable outputs.

mod attention;
mod complexity;
mod experiment;

pub use attention::{
    attention_analysis, default_buckets, AttentionAnalysis, AttentionMapRecord, BucketAverage,
    BucketDistance, SineBucket,
};
pub use complexity::{
    complexity_report, complexity_table, Algorithm, ComplexityConstants, ComplexityReport,
};
pub use experiment::{
    config_hash, emit_outputs, parse_csv_row, run_experiment, ArchSection, DatasetSection,
    ExperimentConfig, ExperimentSection, GridSection, ResultBundle, ResultRow, Scale,
    SystemOverrides, TrainSection,
};
