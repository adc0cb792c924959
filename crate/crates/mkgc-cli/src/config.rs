//! Training-configuration assembly: defaults, then a `key = value`
//! file, then command-line overrides. Later sources win, and the
//! fully resolved config is what lands in the run manifest.

use std::fs;
use std::path::Path;

use mkgc::trainer::{Mode, TrainConfig};

use crate::{CliError, CliResult};

/// Builds the effective config: defaults ← config file ← `--set`
/// pairs (in order) ← dedicated `--mode`/`--seed` flags.
pub fn build_config(
    file: Option<&Path>,
    sets: &[String],
    mode: Option<Mode>,
    seed: Option<u64>,
) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        apply_file(&mut cfg, path)?;
    }
    for pair in sets {
        let (key, value) = split_pair(pair)
            .ok_or_else(|| CliError::usage(format!("--set needs KEY=VALUE, got {pair:?}")))?;
        cfg.set(key, value)
            .map_err(|e| CliError::usage(format!("--set {pair:?}: {e}")))?;
    }
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

/// Applies one `key = value` per line; blank lines and `#` comments
/// are ignored.
fn apply_file(cfg: &mut TrainConfig, path: &Path) -> CliResult<()> {
    let content = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let position = || format!("config {}:{}", path.display(), idx + 1);
        let (key, value) = split_pair(line).ok_or_else(|| {
            CliError::usage(format!("{}: expected key = value, got {line:?}", position()))
        })?;
        cfg.set(key, value)
            .map_err(|e| CliError::usage(format!("{}: {e}", position())))?;
    }
    Ok(())
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (key, value) = s.split_once('=')?;
    let (key, value) = (key.trim(), value.trim());
    (!key.is_empty() && !value.is_empty()).then_some((key, value))
}
