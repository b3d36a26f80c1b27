//! Model files: a checkpoint holding the exported parameters plus the
//! resolved config needed to rebuild the detector.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssod_core::detector::ParamVector;
use ssod_core::pipeline::checkpoint::Checkpoint;

use crate::failure::{data, from_checkpoint, CmdResult};

pub const KIND: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    /// `full` or `semi`.
    pub mode: String,
    pub class_names: Vec<String>,
    pub target_size: usize,
    /// Canonical config text of the training run.
    pub config: String,
}

pub fn write(path: &Path, meta: &ModelMeta, params: &ParamVector<f64>) -> anyhow::Result<()> {
    let c = Checkpoint {
        meta: serde_json::to_string(meta)?,
        tensors: vec![("params".into(), params.clone())],
    };
    c.write(path)?;
    Ok(())
}

pub fn read(path: &Path) -> CmdResult<(ModelMeta, ParamVector<f64>)> {
    let c = Checkpoint::read(path).map_err(|e| from_checkpoint(e, path))?;
    let meta: ModelMeta = serde_json::from_str(&c.meta)
        .map_err(|e| data(anyhow::anyhow!("{} is not a model file: {e}", path.display())))?;
    if meta.kind != KIND {
        return Err(data(anyhow::anyhow!("{} holds `{}`, not a model", path.display(), meta.kind)));
    }
    let params = c.tensor("params").map_err(|e| from_checkpoint(e, path))?.clone();
    Ok((meta, params))
}
