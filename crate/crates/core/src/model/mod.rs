//! LSTM rainfall-runoff model with a static-descriptor front end, trained by
//! manual backpropagation through time and Adam.
//!
//! Two front ends are available. `JointMlp` concatenates each day's forcings
//! with the static vector and passes the result through a tanh layer before
//! the LSTM. `AttrFc` passes only the static vector through the tanh layer and
//! concatenates its output with the raw forcings; that layer's output doubles
//! as the fusion embedding of a basin.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{BasinId, DataError, TableKind};

mod adam;
mod network;
mod params;
mod persist;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use network::{forward, forward_series, loss_and_grad, Sample};
pub use params::{init_params, Layout, ParamSet};
pub use persist::{load_model, save_model, FORMAT_VERSION};
pub use train::{extract_fusion_embeddings, predict, predict_raw, train, train_with, EpochRecord, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("missing forcing value inside input window")]
    MissingForcingInWindow,
    #[error("empty batch")]
    EmptyBatch,
    #[error("no valid training windows")]
    NoTrainingWindows,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("basin {basin} lacks {needed} days of warm-up history before {date}")]
    InsufficientWarmup {
        basin: BasinId,
        date: chrono::NaiveDate,
        needed: usize,
    },
    #[error("fusion embeddings need an attr-fc front end")]
    NotAttrFc,
    #[error("static table kind {found} does not match the model's {expected}")]
    StaticKindMismatch { expected: TableKind, found: TableKind },
    #[error("basin {0} not in static table")]
    UnknownBasin(BasinId),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
}

/// How static descriptors enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontendMode {
    JointMlp,
    AttrFc,
}

impl FrontendMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FrontendMode::JointMlp => "joint-mlp",
            FrontendMode::AttrFc => "attr-fc",
        }
    }
}

impl std::fmt::Display for FrontendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_dyn: usize,
    pub n_static: usize,
    pub frontend: FrontendMode,
    pub frontend_width: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Caps the number of windows drawn per epoch; `None` uses all of them.
    pub max_windows_per_epoch: Option<usize>,
    /// Final fraction of the train period held out for best-epoch selection.
    pub validation_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_dyn: 7,
            n_static: 17,
            frontend: FrontendMode::JointMlp,
            frontend_width: 32,
            hidden: 128,
            dropout: 0.4,
            seq_len: 365,
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 30,
            seed: 0,
            max_windows_per_epoch: None,
            validation_fraction: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("n_dyn", self.n_dyn),
            ("n_static", self.n_static),
            ("frontend_width", self.frontend_width),
            ("hidden", self.hidden),
            ("seq_len", self.seq_len),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ModelError::InvalidConfig("validation_fraction must lie in (0, 1)".into()));
        }
        if self.max_windows_per_epoch == Some(0) {
            return Err(ModelError::InvalidConfig("max_windows_per_epoch must be at least 1".into()));
        }
        Ok(())
    }
}
