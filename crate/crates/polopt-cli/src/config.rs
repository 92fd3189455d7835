//! Versioned JSON run configuration. Command-line flags override file
//! values, which override the defaults here.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use polopt::mdp::FiniteMdp;
use polopt::rules::RuleConfig;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// On-disk configuration; every field optional so partial files compose
/// with flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub version: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub rewards: Option<Vec<f64>>,
    pub rule: Option<RuleConfig>,
    pub horizon: Option<usize>,
    pub trials: Option<usize>,
    pub delta: Option<f64>,
    pub probes: Option<usize>,
    pub reps: Option<usize>,
    pub arm: Option<usize>,
    pub init_logits: Option<Vec<f64>>,
    pub commit_threshold: Option<f64>,
    pub suites: Option<Vec<String>>,
    pub mdp: Option<FiniteMdp>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        if let Some(v) = cfg.version {
            if v != CONFIG_VERSION {
                return Err(CliError::config(format!(
                    "config version {v} unsupported (expected {CONFIG_VERSION})"
                )));
            }
        }
        Ok(cfg)
    }
}

/// Default output directory: flag > config > POLOPT_OUT_DIR > ./polopt-out.
pub fn resolve_out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os("POLOPT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("polopt-out"))
}
