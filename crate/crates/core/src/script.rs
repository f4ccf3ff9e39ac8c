//! Recorded command sequences with a deterministic clock, used to drive the
//! same session through the CLI, the HTTP service and tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ids::Timestamp;
use crate::session::{Command, Settings};

fn default_step() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub template: String,
    #[serde(default)]
    pub settings: Settings,
    /// Creation time in ms; commands follow `step_ms` apart. Wall clock when absent.
    #[serde(default)]
    pub start_at: Option<u64>,
    #[serde(default = "default_step")]
    pub step_ms: u64,
    pub commands: Vec<Command>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad script: {0}")]
    Json(#[from] serde_json::Error),
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Time of step `n`; step 0 creates the document.
    pub fn time_of(&self, n: usize) -> Timestamp {
        match self.start_at {
            Some(start) => Timestamp(start + n as u64 * self.step_ms),
            None => Timestamp::now(),
        }
    }
}
