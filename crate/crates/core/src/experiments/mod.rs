//! Resumable experiment drivers.
//!
//! Every driver expands its options into training cells. A cell trains one
//! model on a set of donor basins and predicts a set of test basins over the
//! test period; its identity is a hash of everything that influences its
//! output, and its per-basin scores go to `results_<experiment>.csv`. Cells
//! already present in that table are not recomputed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::cluster::ClusterError;
use crate::dataset::{BasinArchive, BasinId, DataError, Period, StaticTable, TableKind, FLOW_COLUMN};
use crate::info::InfoError;
use crate::metrics::MetricError;
use crate::model::{predict, train, EpochRecord, ModelConfig, ModelError};
use crate::similarity::SimilarityError;

mod cross;
mod exp_a;
mod exp_b;
mod log;
mod report;
mod runner;

pub use cross::{run_cross_regime, CrossRegimeOptions, CrossRegimeOutcome};
pub use exp_a::{run_experiment_a, ExpAOptions, ExpAOutcome, KsRow, KsSampling, SummaryRow};
pub use exp_b::{check_ladder, run_experiment_b, DonorMethod, ExpBOptions, ExpBOutcome, KStep};
pub use log::{read_results, write_results, ResultRow, RESULT_HEADER};
pub use report::{report, ReportRow};
pub use runner::{read_history, CellRecord, CellStatus, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("basin {0} is not in the archive")]
    UnknownBasin(BasinId),
    #[error("target {target} leaked into its own donor set")]
    TargetLeak { target: BasinId },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("archive has no {0} table")]
    MissingTable(TableKind),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    }
}

pub(crate) fn csv_err(path: &std::path::Path) -> impl Fn(csv::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Csv {
        path: path.to_owned(),
        source,
    }
}

/// Settings shared by every driver.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train_period: Period,
    pub test_period: Period,
    /// Basin pool; empty means every archive basin.
    pub basins: Vec<BasinId>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Cells run concurrently at most.
    pub jobs: usize,
    /// Suppresses progress lines on stderr.
    pub quiet: bool,
}

impl Settings {
    /// The configured pool, checked against the archive, in archive order.
    pub fn pool(&self, archive: &BasinArchive) -> Result<Vec<BasinId>, ExperimentError> {
        if self.basins.is_empty() {
            return Ok(archive.basins().to_vec());
        }
        for b in &self.basins {
            if archive.attributes.index_of(b).is_none() {
                return Err(ExperimentError::UnknownBasin(b.clone()));
            }
        }
        Ok(archive
            .basins()
            .iter()
            .filter(|b| self.basins.contains(b))
            .cloned()
            .collect())
    }

    pub(crate) fn progress(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// Everything a cell model needs to fit on donors and predict test basins.
pub struct FitRequest<'a> {
    pub archive: &'a BasinArchive,
    pub statics: &'a StaticTable,
    /// Seed already set for the cell.
    pub config: &'a ModelConfig,
    pub train_basins: &'a [BasinId],
    pub test_basins: &'a [BasinId],
    pub train_period: Period,
    pub test_period: Period,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOutput {
    /// Simulated test-period flow per test basin, one value per day.
    pub predictions: BTreeMap<BasinId, Vec<f64>>,
    pub history: Vec<EpochRecord>,
}

/// Trains and predicts for one cell. Swappable so the pipeline can be checked
/// with a stand-in model.
pub trait CellModel: Sync {
    fn fit_predict(&self, req: &FitRequest<'_>) -> Result<FitOutput, ModelError>;
}

/// The LSTM model.
#[derive(Debug, Clone, Copy, Default)]
pub struct LstmCellModel;

impl CellModel for LstmCellModel {
    fn fit_predict(&self, req: &FitRequest<'_>) -> Result<FitOutput, ModelError> {
        let model = train(req.config, req.archive, req.statics, req.train_basins, req.train_period)?;
        let mut predictions = BTreeMap::new();
        for b in req.test_basins {
            let frame = predict(&model, req.archive, req.statics, b, req.test_period)?;
            let sim = frame.column(FLOW_COLUMN).expect("prediction column").to_vec();
            predictions.insert(b.clone(), sim);
        }
        Ok(FitOutput {
            predictions,
            history: model.history,
        })
    }
}

/// Returns the observed flow as its prediction. Every score it produces is
/// perfect, which makes it a pass-through check for the scoring pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct ObservedFlowModel;

impl CellModel for ObservedFlowModel {
    fn fit_predict(&self, req: &FitRequest<'_>) -> Result<FitOutput, ModelError> {
        let mut predictions = BTreeMap::new();
        for b in req.test_basins {
            let sim = req
                .test_period
                .dates()
                .map(|d| req.archive.flow_on(b, d))
                .collect();
            predictions.insert(b.clone(), sim);
        }
        Ok(FitOutput {
            predictions,
            history: Vec::new(),
        })
    }
}

pub(crate) fn static_table(archive: &BasinArchive, kind: TableKind) -> Result<&StaticTable, ExperimentError> {
    archive.static_table(kind).ok_or(ExperimentError::MissingTable(kind))
}

/// Label used in file names: anything but ASCII alphanumerics, `-` and `_`
/// becomes `_`.
pub(crate) fn file_label(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}
