use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedModel};

/// Current on-disk format version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a> {
    version: u32,
    block_offsets: Vec<(&'static str, usize, usize, usize)>,
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct OwnedEnvelope {
    version: u32,
    model: TrainedModel,
}

/// Writes the model as JSON. Floats are printed in shortest round-trip form,
/// so reloading reproduces every parameter bit for bit.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let env = Envelope {
        version: FORMAT_VERSION,
        block_offsets: model.params.layout.blocks(),
        model,
    };
    let text = serde_json::to_string(&env).map_err(|source| ModelError::Json {
        path: path.to_owned(),
        source,
    })?;
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_owned(),
        source,
    })?;
    let env: OwnedEnvelope = serde_json::from_str(&text).map_err(|source| ModelError::Json {
        path: path.to_owned(),
        source,
    })?;
    if env.version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(env.version));
    }
    let model = env.model;
    if model.params.values.len() != model.params.layout.len() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{} parameters", model.params.layout.len()),
            found: model.params.values.len().to_string(),
        });
    }
    Ok(model)
}
