//! Artifact plumbing shared by the subcommands: dataset loading,
//! output-directory collision handling, dataset fingerprints, and run
//! manifests. Everything written here is deterministic — no
//! timestamps, no environment-dependent content — so identical
//! invocations produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use mkgc::alignment::TextEmbeddingStore;
use mkgc::graph::io::{is_dataset_file, load_dataset};
use mkgc::kgc::Metrics;
use mkgc::trainer::TrainData;

use crate::{CliError, CliResult};

/// `name version` of this binary; recorded in every manifest.
pub const VERSION_STRING: &str = concat!("mkgc ", env!("CARGO_PKG_VERSION"));

/// Completion marker: a directory holding one is a finished run.
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PROPOSED_PAIRS_FILE: &str = "proposed_pairs.tsv";
pub const CHECKPOINT_BEST_FILE: &str = "checkpoint_best.json";
pub const CHECKPOINT_LAST_FILE: &str = "checkpoint_last.json";
pub const METRICS_VALID_FILE: &str = "metrics_valid.json";
pub const METRICS_TEST_FILE: &str = "metrics_test.json";

/// Dataset location and split policy shared by every data-consuming
/// command. Files on disk are unsplit; the fractions and seed decide
/// the train/valid/test partition at load time, so they must match
/// between a training run and later evaluations of its checkpoints.
#[derive(clap::Args, Debug)]
pub struct DataArgs {
    /// Dataset directory (`triples_<lang>.tsv` files and friends).
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Train/valid/test fractions applied when loading the triples.
    #[arg(long, value_name = "TRAIN,VALID,TEST", default_value = "0.6,0.3,0.1")]
    pub split_fractions: String,
    /// Seed of the deterministic split shuffle.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl DataArgs {
    /// Loads the corpus, seed pairs, and optional text vectors.
    pub fn load(&self) -> CliResult<TrainData> {
        let split = parse_split(&self.split_fractions)?;
        let loaded = load_dataset(&self.data, split, self.split_seed)?;
        let text = match &loaded.text_path {
            Some(path) => TextEmbeddingStore::load(path, &loaded.corpus)?,
            None => TextEmbeddingStore::empty(),
        };
        Ok(TrainData::new(loaded.corpus, loaded.seed_pairs, text))
    }

    /// Manifest fragment describing the dataset exactly as consumed.
    pub fn manifest_entry(&self) -> CliResult<serde_json::Value> {
        Ok(serde_json::json!({
            "dir": self.data.display().to_string(),
            "split_fractions": parse_split(&self.split_fractions)?,
            "split_seed": self.split_seed,
            "files": dataset_hashes(&self.data)?,
        }))
    }
}

/// Refuses to reuse a completed run directory unless `force`; with
/// `force`, the previous run is deleted first. Creates the directory.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.join(MANIFEST_FILE).exists() {
        if !force {
            return Err(CliError::usage(format!(
                "{} already contains a completed run; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(mkgc::Error::from)?;
    }
    fs::create_dir_all(dir).map_err(mkgc::Error::from)?;
    Ok(())
}

/// Refuses to overwrite an existing output file unless `force`.
pub fn prepare_out_file(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() {
        if !force {
            return Err(CliError::usage(format!(
                "{} already exists; pass --force to replace it",
                path.display()
            )));
        }
        fs::remove_file(path).map_err(mkgc::Error::from)?;
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(mkgc::Error::from)?;
        }
    }
    Ok(())
}

/// `file name → sha256:<hex>` over every dataset-format file in
/// `dir`, sorted by name.
pub fn dataset_hashes(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(mkgc::Error::from)? {
        let path = entry.map_err(mkgc::Error::from)?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if !path.is_file() || !is_dataset_file(name) {
            continue;
        }
        let bytes = fs::read(&path).map_err(mkgc::Error::from)?;
        out.insert(
            name.to_string(),
            format!("sha256:{}", hex::encode(Sha256::digest(&bytes))),
        );
    }
    Ok(out)
}

/// Writes the pretty-printed manifest. Callers write it last, so its
/// presence marks a completed run.
pub fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> CliResult<()> {
    fs::write(dir.join(MANIFEST_FILE), pretty(manifest)?).map_err(mkgc::Error::from)?;
    Ok(())
}

/// Metrics as a pretty JSON file.
pub fn write_metrics(path: &Path, metrics: &Metrics) -> CliResult<()> {
    fs::write(path, pretty(&metrics.to_json())?).map_err(mkgc::Error::from)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn pretty(value: &serde_json::Value) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(mkgc::Error::from)?;
    text.push('\n');
    Ok(text)
}

/// Comma-separated floats; rejects empty or non-numeric entries.
pub fn parse_f64_list(raw: &str, flag: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::usage(format!("--{flag} needs comma-separated numbers, got {raw:?}"))
            })
        })
        .collect()
}

/// Comma-separated unsigned integers.
pub fn parse_u64_list(raw: &str, flag: &str) -> CliResult<Vec<u64>> {
    raw.split(',')
        .map(|s| {
            s.trim().parse::<u64>().map_err(|_| {
                CliError::usage(format!("--{flag} needs comma-separated integers, got {raw:?}"))
            })
        })
        .collect()
}

/// Exactly three fractions: train, valid, test.
pub fn parse_split(raw: &str) -> CliResult<(f64, f64, f64)> {
    let fracs = parse_f64_list(raw, "split-fractions")?;
    if fracs.len() != 3 {
        return Err(CliError::usage(format!(
            "--split-fractions needs exactly three values, got {raw:?}"
        )));
    }
    Ok((fracs[0], fracs[1], fracs[2]))
}
