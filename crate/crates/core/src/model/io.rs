use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainingConfig};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "gmia-model/1";

/// Self-describing parameter file: architecture, training configuration
/// (including seed) and parameters. Floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub config: TrainingConfig,
    pub params: ModelParams,
}

pub fn save_model(path: &Path, params: &ModelParams, config: &TrainingConfig) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        config: config.clone(),
        params: params.clone(),
    };
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelParams, TrainingConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    let file: ModelFile = serde_json::from_slice(&bytes)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Config(format!("{}: unsupported model format `{}`", path.display(), file.format)));
    }
    file.params.spec.validate()?;
    let expected = file.params.spec.layer_sizes.windows(2).map(|w| (w[0], w[1]));
    for (l, (i, o)) in file.params.layers.iter().zip(expected) {
        if l.inputs != i || l.outputs != o || l.weights.len() != i * o || l.bias.len() != o {
            return Err(Error::Config(format!("{}: layer shapes do not match the model spec", path.display())));
        }
    }
    if file.params.layers.len() + 1 != file.params.spec.layer_sizes.len() {
        return Err(Error::Config(format!("{}: wrong number of layers", path.display())));
    }
    Ok((file.params, file.config))
}
