//! Checkpoint serialization: parameters and optimizer moments as
//! safetensors (sorted keys, so identical state produces identical bytes)
//! plus a JSON sidecar with the counters, normalization state, and the full
//! config the run was built from.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::SlnBank;

pub const MODEL_FILE: &str = "model.safetensors";
pub const OPTIM_FILE: &str = "optim.safetensors";
pub const STATE_FILE: &str = "state.json";

/// Everything outside the tensor maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointState {
    pub iteration: u64,
    pub config: ExperimentConfig,
    pub sln: SlnBank,
    pub adam_gen_steps: u64,
    pub adam_disc_steps: u64,
}

pub struct Checkpoint {
    pub state: CheckpointState,
    pub model: HashMap<String, Tensor>,
    pub optim: HashMap<String, Tensor>,
}

fn save_tensors(map: &BTreeMap<String, Tensor>, path: &Path) -> Result<()> {
    // BTreeMap iteration is sorted; serialize in that order for stable bytes.
    let entries: Vec<(String, Tensor)> = map
        .iter()
        .map(|(k, v)| Ok((k.clone(), v.contiguous()?)))
        .collect::<Result<_>>()?;
    safetensors::tensor::serialize_to_file(entries, None, path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(
    dir: &Path,
    state: &CheckpointState,
    model: &BTreeMap<String, Tensor>,
    optim: &BTreeMap<String, Tensor>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_tensors(model, &dir.join(MODEL_FILE))?;
    save_tensors(optim, &dir.join(OPTIM_FILE))?;
    let json = serde_json::to_string_pretty(state)
        .map_err(|e| Error::Checkpoint(format!("state encode: {e}")))?;
    let path = dir.join(STATE_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, device: &Device) -> Result<Checkpoint> {
    let state_path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
    let state: CheckpointState = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", state_path.display())))?;
    let model = candle_core::safetensors::load(dir.join(MODEL_FILE), device)?;
    let optim = candle_core::safetensors::load(dir.join(OPTIM_FILE), device)?;
    Ok(Checkpoint {
        state,
        model,
        optim,
    })
}

/// Checkpoint directory name for an iteration.
pub fn checkpoint_dir_name(iteration: u64) -> String {
    format!("iter_{iteration:08}")
}

/// Latest `checkpoints/iter_*` directory under a run directory, by
/// iteration number.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let root = run_dir.join("checkpoints");
    if !root.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("iter_") {
            if let Ok(iter) = num.parse::<u64>() {
                if best.as_ref().map_or(true, |(b, _)| iter > *b) {
                    best = Some((iter, entry.path()));
                }
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Extracts the sub-map under `prefix.` with the prefix stripped.
pub fn strip_prefix(map: &HashMap<String, Tensor>, prefix: &str) -> HashMap<String, Tensor> {
    let needle = format!("{prefix}.");
    map.iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(&needle)
                .map(|rest| (rest.to_string(), v.clone()))
        })
        .collect()
}
