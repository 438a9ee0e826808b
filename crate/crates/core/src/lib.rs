//! Similarity-guided donor-basin selection and LSTM rainfall-runoff modelling
//! for prediction in ungauged basins.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`dataset`] ingests CSV archives, standardises features and builds splits,
//!   and can synthesise verification fleets.
//! * [`similarity`] computes cosine similarity matrices and donor rankings.
//! * [`model`] is a from-scratch LSTM with manual backpropagation and Adam.
//! * [`metrics`] holds NSE/KGE, the seed-pooled bootstrap, and the KS test.
//! * [`info`] estimates mutual information between descriptor columns.
//! * [`cluster`] runs k-means with silhouette-based K selection.
//! * [`experiments`] orchestrates the resumable experiment drivers.
//! * [`config`] parses the run configuration file used by the CLI.

pub mod cluster;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod info;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod similarity;

pub use dataset::{BasinArchive, BasinId, ColumnStats, Period, SplitSpec, StaticTable, TableKind, TimeSeriesFrame};

/// Crate-wide error, wrapping the per-module error types.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] dataset::DataError),
    #[error(transparent)]
    Similarity(#[from] similarity::SimilarityError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Info(#[from] info::InfoError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Experiment(#[from] experiments::ExperimentError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
