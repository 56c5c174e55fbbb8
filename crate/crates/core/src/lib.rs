//! Split conformal prediction over labeled feature embeddings.
//!
//! The pipeline: load and normalize embeddings ([`embedding`]), split them
//! into proper-training / calibration / test sets ([`split`]), index the
//! training set by class ([`knn`]), score calibration examples and derive
//! p-values and prediction sets ([`conformal`]), and summarize the result
//! ([`metrics`]). [`shift`] and [`experiment`] provide synthetic
//! exchangeable data, augmentation-style test-time shifts and the
//! Monte-Carlo harness that measures their effect on coverage.

pub mod charts;
pub mod config;
pub mod conformal;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod shift;
pub mod split;

pub use conformal::{
    calibrate, nonconformity, p_value, p_value_row, p_value_rows, prediction_set, top1,
    CalibrationTable, PValueMode, PValueRow, PredictionSet, MAX_SCORE,
};
pub use embedding::{load_embeddings, normalize, EmbeddingSet, Format, LabeledExample};
pub use error::{Error, Result};
pub use exec::Execution;
pub use experiment::{run_validity_experiment, ExperimentTable, ShiftCondition};
pub use knn::{cosine_distance, ClassFilter, ClassPartitionedIndex, KnnConfig, Query};
pub use metrics::{evaluate, sweep, CoverageCurve, MetricsReport};
pub use shift::{apply_shift, generate, GeneratorConfig, ShiftConfig};
pub use split::{save_split, split, DataSplit, SplitSpec};
