//! Checkpoint directories: `scene.ply` plus `state.json` holding the optimizer
//! moments, counters, RNG state and the run configuration. A checkpoint is
//! assembled in a temporary sibling directory and renamed into place.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ply::{export_ply, import_ply};

pub const SCENE_FILE: &str = "scene.ply";
pub const STATE_FILE: &str = "state.json";
pub const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateFile {
    format: u32,
    config: RunConfig,
    state: TrainState,
}

/// `s{stage}_it{iteration:06}`.
pub fn checkpoint_name(stage: u8, iteration: usize) -> String {
    format!("s{stage}_it{iteration:06}")
}

fn fail(message: String, last_good: Option<&Path>) -> Error {
    Error::Checkpoint {
        message,
        last_good: last_good.map(Path::to_path_buf),
    }
}

/// Writes `parent/<name>` atomically, replacing an existing checkpoint of the same name.
pub fn save(
    parent: &Path,
    config: &RunConfig,
    state: &TrainState,
    last_good: Option<&Path>,
) -> Result<PathBuf> {
    let name = checkpoint_name(state.stage, state.iteration);
    let dest = parent.join(&name);
    let tmp = parent.join(format!(".tmp-{name}"));
    let wrap = |what: &str, e: &dyn std::fmt::Display| fail(format!("{what}: {e}"), last_good);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| wrap(&format!("removing {}", tmp.display()), &e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| wrap(&format!("creating {}", tmp.display()), &e))?;
    export_ply(&state.scene, tmp.join(SCENE_FILE)).map_err(|e| wrap("writing scene", &e))?;
    let doc = StateFile {
        format: FORMAT,
        config: config.clone(),
        state: state.clone(),
    };
    let json = serde_json::to_vec(&doc).expect("state serializes");
    std::fs::write(tmp.join(STATE_FILE), json).map_err(|e| wrap("writing state", &e))?;
    if dest.exists() {
        std::fs::remove_dir_all(&dest).map_err(|e| wrap(&format!("removing {}", dest.display()), &e))?;
    }
    std::fs::rename(&tmp, &dest).map_err(|e| wrap(&format!("renaming into {}", dest.display()), &e))?;
    Ok(dest)
}

/// Loads and cross-checks a checkpoint directory.
pub fn load(dir: &Path) -> Result<(RunConfig, TrainState)> {
    let corrupt = |m: String| fail(format!("{}: {m}", dir.display()), None);
    let bytes = std::fs::read(dir.join(STATE_FILE)).map_err(|e| corrupt(format!("reading {STATE_FILE}: {e}")))?;
    let doc: StateFile =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("parsing {STATE_FILE}: {e}")))?;
    if doc.format != FORMAT {
        return Err(corrupt(format!("unsupported checkpoint format {}", doc.format)));
    }
    doc.config.validate().map_err(|e| corrupt(format!("stored configuration: {e}")))?;
    let scene = import_ply(dir.join(SCENE_FILE)).map_err(|e| corrupt(e.to_string()))?;
    let mut state = doc.state;
    state.scene = scene;
    state.check().map_err(|e| corrupt(e.to_string()))?;
    Ok((doc.config, state))
}

/// Checkpoint directories under `parent`, oldest first.
pub fn list(parent: &Path) -> Vec<PathBuf> {
    let Ok(entries) = std::fs::read_dir(parent) else {
        return Vec::new();
    };
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with('s') && p.join(STATE_FILE).exists())
        })
        .collect();
    out.sort();
    out
}
