use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, ModelParams};
use super::vocab::Vocabulary;
use crate::error::{Result, RioError};

pub const CHECKPOINT_FORMAT: &str = "rio-checkpoint/1";

const PARAM_ORDER: &str = "slot embeddings (prev, run, prev_run, delta; rows x embed_dim row-major), \
then per hidden layer weights (width x fan_in row-major) and bias, then read-out weights (output_size x width row-major) and bias";

/// JSON model container. Floats are written in shortest round-trip form, so
/// save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub vocab: Vocabulary,
    pub model: ModelConfig,
    pub config_hash: String,
    /// Hashes of the artifacts this checkpoint was derived from.
    pub lineage: Vec<String>,
    pub param_order: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &ModelParams, config_hash: impl Into<String>, lineage: Vec<String>) -> Self {
        use super::SequenceModel;
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            vocab: *model.vocab(),
            model: *model.config(),
            config_hash: config_hash.into(),
            lineage,
            param_order: PARAM_ORDER.to_string(),
            params: model.flat().to_vec(),
        }
    }

    pub fn to_model(&self) -> Result<ModelParams> {
        ModelParams::from_flat(self.vocab, self.model, self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| RioError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| RioError::Io { path: path.display().to_string(), source })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(RioError::Artifact {
                path: path.display().to_string(),
                detail: format!("unsupported checkpoint format `{}`", ckpt.format),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = ModelParams::init(Vocabulary::default(), ModelConfig { init_seed: 9, ..Default::default() }).unwrap();
        let ck = Checkpoint::new(&m, "abc", vec!["def".into()]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap().to_model().unwrap();
        assert!(back.flat().iter().zip(m.flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
