use std::path::{Path, PathBuf};

use gauss_distill::config::RunConfig;
use gauss_distill::trainer::output::{CHECKPOINT_DIR, CONFIG_FILE};

use crate::{CliResult, Failure, EXIT_FAILURE};

/// Creates `<base>/<hash>-<timestamp><suffix>`, adding a counter on collision,
/// and writes the resolved configuration into it.
pub fn create(base: &Path, config: &RunConfig, suffix: &str) -> CliResult<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let stem = format!("{}-{stamp}{suffix}", config.hash());
    let mut dir = base.join(&stem);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{stem}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("creating {}: {e}", dir.display())))?;
    write_config(&dir, config)?;
    Ok(dir)
}

pub fn write_config(dir: &Path, config: &RunConfig) -> CliResult {
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, config.to_toml_string())
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("writing {}: {e}", path.display())))
}

/// The run directory a checkpoint belongs to, or the checkpoint itself when
/// it is not inside one.
pub fn run_root_of(checkpoint: &Path) -> PathBuf {
    match checkpoint.parent() {
        Some(p) if p.file_name().is_some_and(|n| n == CHECKPOINT_DIR) => {
            p.parent().map(Path::to_path_buf).unwrap_or_else(|| checkpoint.to_path_buf())
        }
        _ => checkpoint.to_path_buf(),
    }
}
