use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::ParamStore;

pub const CHECKPOINT_MAGIC: &str = "METABAYES-CKPT-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(default)]
    frozen: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    seed: u64,
    #[serde(default)]
    model: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

/// A parameter snapshot plus the seed and an opaque model description.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub model: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .params
            .iter()
            .map(|(name, p)| TensorRecord {
                name: name.to_string(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                frozen: p.frozen,
                data: p.value.as_slice().to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_MAGIC.to_string(),
            seed: self.seed,
            model: self.model.clone(),
            tensors,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("unknown format tag `{}`", file.format)));
        }
        let mut params = ParamStore::new();
        for t in file.tensors {
            let value = Matrix::from_row_major(t.rows, t.cols, t.data)
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", t.name)))?;
            params.insert_param(t.name, value, t.frozen)?;
        }
        Ok(Self {
            seed: file.seed,
            model: file.model,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Writes via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
