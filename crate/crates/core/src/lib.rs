//! Rare-event binary classification toolkit.
//!
//! The pipeline: load or synthesise a labeled dataset ([`data`]), downsample
//! the majority class, fit a stepwise logistic regression ([`glm`]) and a
//! random forest with out-of-bag estimates ([`forest`]), then evaluate the
//! predicted probabilities with FAR/TS threshold sweeps and ROC curves
//! ([`metrics`]) and distribution diagnostics ([`analysis`]).
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common double-precision instantiations.

pub mod analysis;
pub mod data;
pub mod forest;
pub mod glm;
mod linalg;
pub mod metrics;
pub mod scalar;

use thiserror::Error;

pub use analysis::{
    class_densities, histogram_triptych, kde, kendall_paired, rescale_all, rescale_phi,
    tsfar_compare, AnalysisError, Comparison, DensityEstimate, HistogramTriptych, KendallResult,
    RescaleParams,
};
pub use data::{
    class_counts, load_csv, rebalance, synth_generate, write_csv, ClassSummary, DataError, Dataset,
    RebalanceSpec, SchemaDescriptor, SynthSpec,
};
pub use forest::{fit_forest, DecisionTree, ForestConfig, ForestError, ForestModel};
pub use glm::{
    fit_irls, sigmoid, stepwise_select, FitReport, GlmError, LogisticModel, ModelDocument,
    StepMove, StepRecord,
};
pub use metrics::{
    auc_pairwise, best_operating_point, confusion, roc, sweep, ConfusionMatrix, MetricsError,
    RocCurve, SweepPoint, ThresholdSweep,
};
pub use scalar::Scalar;

pub type DatasetF64 = Dataset<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type LogisticModelF64 = LogisticModel<f64>;
pub type LogisticModelF32 = LogisticModel<f32>;
pub type FitReportF64 = FitReport<f64>;
pub type ForestModelF64 = ForestModel<f64>;
pub type ForestModelF32 = ForestModel<f32>;
pub type ThresholdSweepF64 = ThresholdSweep<f64>;
pub type SweepPointF64 = SweepPoint<f64>;
pub type DensityEstimateF64 = DensityEstimate<f64>;
pub type ComparisonF64 = Comparison<f64>;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
