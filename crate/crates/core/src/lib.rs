//! Bayesian effect fusion for categorical predictors in linear regression.
//!
//! Level effects of each categorical covariate get a sparse finite normal
//! mixture prior whose components act as clusters of levels with (almost)
//! equal effects. A Gibbs sampler explores the joint posterior of effects and
//! allocations; a point estimate of the level partition is then selected from
//! the allocation draws and the model is refitted on the fused design.

pub mod data;
pub mod dist;
pub mod error;
pub mod gibbs;
pub mod input;
pub mod metrics;
pub mod partition;
pub mod prior;
pub mod refit;
pub mod report;
pub mod simulation;

pub use data::{
    build_design, CategoricalCovariate, CoefficientLayout, CoefficientVector, Column,
    ContinuousCovariate, Dataset, DesignMatrix,
};
pub use error::{Error, Result};
pub use gibbs::{run_mcmc, FusionSampler, McmcState, McmcTrace, SamplerConfig};
pub use metrics::{cluster_metrics, ClusterMetrics};
pub use partition::{LevelPartition, MostFrequent, PamSelection, SimilarityMatrix};
pub use refit::{refit_partition, FusedDesign, ModelFitSummary, Refit, RefitConfig};
pub use input::{read_csv, read_csv_path, CategoricalColumn, ColumnSpec};
pub use prior::{build_prior, flat_fit, FlatFit, GlobalPriorSpec, PriorConfig, PsiMode, PsiModeKind};
