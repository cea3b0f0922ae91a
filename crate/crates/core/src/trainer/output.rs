use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::DensityEvent;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const VIS_DIR: &str = "vis";

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub stage: u8,
    pub iteration: usize,
    /// `‖grad_image‖²`.
    pub loss_proxy: f64,
    pub n: usize,
    pub u: f64,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    pub skipped: bool,
    pub ms: f64,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub stage: u8,
    #[serde(flatten)]
    pub event: DensityEvent,
}

/// Append-only logs under a run directory.
#[derive(Debug)]
pub struct RunOutput {
    root: PathBuf,
    metrics: BufWriter<File>,
    events: BufWriter<File>,
}

impl RunOutput {
    /// Creates the directory tree if needed and appends to existing logs.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in [root.clone(), root.join(CHECKPOINT_DIR), root.join(VIS_DIR)] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = root.join(name);
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            Ok(BufWriter::new(f))
        };
        Ok(Self {
            metrics: open(METRICS_FILE)?,
            events: open(EVENTS_FILE)?,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join(CHECKPOINT_DIR)
    }

    pub fn vis_dir(&self) -> PathBuf {
        self.root.join(VIS_DIR)
    }

    fn line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, record: &T) -> Result<()> {
        let mut s = serde_json::to_string(record).expect("records serialize");
        s.push('\n');
        w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn metric(&mut self, record: &MetricsRecord) -> Result<()> {
        let p = self.root.join(METRICS_FILE);
        Self::line(&mut self.metrics, &p, record)
    }

    pub fn event(&mut self, record: &LoggedEvent) -> Result<()> {
        let p = self.root.join(EVENTS_FILE);
        Self::line(&mut self.events, &p, record)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.root.join(METRICS_FILE), e))?;
        self.events.flush().map_err(|e| Error::io(self.root.join(EVENTS_FILE), e))
    }
}

impl Drop for RunOutput {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
