//! The seven subcommands. Each one validates its flags, loads inputs
//! through the library's own loaders, runs the engine, and writes
//! artifacts that those same loaders can read back.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mkgc::alignment::{
    append_candidates, propose_pairs_all, recovery_report, SimilarityConfig, TextEmbeddingStore,
};
use mkgc::encoder::{attention_report, encode};
use mkgc::graph::io::{write_dataset, write_id_maps, STATS_FILE, TEXT_EMBEDDINGS_FILE};
use mkgc::graph::{generate_synthetic, synthetic_text_vectors, SyntheticSpec};
use mkgc::trainer::{
    ablation_table, eval_graph, evaluate_state, load_checkpoint, run_ablation, save_checkpoint,
    sweep_alignment, train_epoch, EpochReport, EvalSplit, Mode, ModelState, SweepPoint,
};

use crate::config::build_config;
use crate::run::{
    dataset_hashes, parse_f64_list, parse_u64_list, prepare_out_dir, prepare_out_file, pretty,
    write_manifest, write_metrics, DataArgs, CHECKPOINT_BEST_FILE, CHECKPOINT_LAST_FILE,
    METRICS_TEST_FILE, METRICS_VALID_FILE, PROPOSED_PAIRS_FILE, TRAIN_LOG_FILE, VERSION_STRING,
};
use crate::{CliError, CliResult};

/// Flags of `generate-synthetic`.
#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of languages.
    #[arg(long, default_value_t = 2)]
    pub languages: usize,
    /// Entities in the shared latent world.
    #[arg(long, default_value_t = 200)]
    pub base_entities: usize,
    /// Relations shared by every language.
    #[arg(long, default_value_t = 8)]
    pub base_relations: usize,
    /// Latent facts; each language keeps those its entities cover.
    #[arg(long, default_value_t = 600)]
    pub base_triples: usize,
    /// Per-language fraction of the latent entities (one per language).
    #[arg(long, value_name = "C0,C1,...", default_value = "1.0,0.6")]
    pub coverage: String,
    /// Fraction of the true cross-language pairs revealed as seeds.
    #[arg(long, default_value_t = 0.4)]
    pub seed_ratio: f64,
    /// Fraction of corrupted triples mixed into each language.
    #[arg(long, default_value_t = 0.05)]
    pub noise_ratio: f64,
    /// Generation seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dimension of synthetic text vectors; 0 writes none.
    #[arg(long, default_value_t = 0)]
    pub text_dim: usize,
    /// Per-language noise around the shared latent text vector.
    #[arg(long, default_value_t = 0.05)]
    pub text_noise: f64,
    /// Replace an existing dataset at --out.
    #[arg(long)]
    pub force: bool,
}

pub fn generate_synthetic_cmd(args: &GenerateArgs) -> CliResult<()> {
    let coverage = parse_f64_list(&args.coverage, "coverage")?;
    prepare_out_dir(&args.out, args.force)?;
    let spec = SyntheticSpec {
        languages: args.languages,
        base_entities: args.base_entities,
        base_relations: args.base_relations,
        base_triples: args.base_triples,
        coverage,
        seed_alignment_ratio: args.seed_ratio,
        noise_ratio: args.noise_ratio,
        ..SyntheticSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = generate_synthetic(&spec, &mut rng)?;
    write_dataset(&args.out, &data)?;
    if args.text_dim > 0 {
        let vectors = synthetic_text_vectors(&data, args.text_dim, args.text_noise, &mut rng);
        let store = TextEmbeddingStore::from_map(vectors)?;
        store.write(&args.out.join(TEXT_EMBEDDINGS_FILE), &data.corpus)?;
    }
    let manifest = json!({
        "version": VERSION_STRING,
        "command": "generate-synthetic",
        "spec": {
            "languages": args.languages,
            "base_entities": args.base_entities,
            "base_relations": args.base_relations,
            "base_triples": args.base_triples,
            "coverage": spec.coverage,
            "seed_ratio": args.seed_ratio,
            "noise_ratio": args.noise_ratio,
            "seed": args.seed,
            "text_dim": args.text_dim,
            "text_noise": args.text_noise,
        },
        "files": dataset_hashes(&args.out)?,
    });
    write_manifest(&args.out, &manifest)?;
    print!(
        "{}",
        fs::read_to_string(args.out.join(STATS_FILE)).map_err(mkgc::Error::from)?
    );
    println!(
        "seed pairs: {}   true pairs: {}",
        data.seed_pairs.len(),
        data.ground_truth.len()
    );
    println!("wrote dataset to {}", args.out.display());
    Ok(())
}

/// Flags of `train`.
#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory for checkpoints, logs, metrics, and the manifest.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Optional `key = value` config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Config override (repeatable; later ones win).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Model variant; overrides the config file.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Run seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace a completed run at --out.
    #[arg(long)]
    pub force: bool,
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let cfg = build_config(args.config.as_deref(), &args.set, args.mode, args.seed)?;
    let data = args.data.load()?;
    let mut state = ModelState::new(&data, &cfg)?;
    prepare_out_dir(&args.out, args.force)?;
    println!(
        "training {} (dim {}, layers {}, up to {} epochs, seed {}) on {} languages",
        cfg.mode,
        cfg.dim,
        cfg.layers,
        cfg.epochs,
        cfg.seed,
        data.corpus.num_languages()
    );

    let mut log =
        fs::File::create(args.out.join(TRAIN_LOG_FILE)).map_err(mkgc::Error::from)?;
    let pairs_path = args.out.join(PROPOSED_PAIRS_FILE);

    // Same selection rule as the library's full-run entry point: keep
    // the state with the strictly best macro validation MRR, stop when
    // it has been stale for `patience` epochs.
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    for _ in 0..cfg.epochs {
        let report = train_epoch(&mut state, &data, &cfg)?;
        let line = serde_json::to_string(&report).map_err(mkgc::Error::from)?;
        writeln!(log, "{line}").map_err(mkgc::Error::from)?;
        if !report.proposals.is_empty() {
            append_candidates(&pairs_path, &data.corpus, &report.proposals, report.epoch)?;
        }
        println!("{}", epoch_line(&report));
        let mrr = report.validation.macro_avg.mrr;
        match &best {
            Some((best_mrr, _, _)) if mrr <= *best_mrr => stale += 1,
            _ => {
                best = Some((mrr, report.epoch, state.clone()));
                stale = 0;
            }
        }
        epochs_run += 1;
        if cfg.patience > 0 && stale >= cfg.patience {
            println!("stopping early: {stale} epochs without improvement");
            break;
        }
    }
    log.flush().map_err(mkgc::Error::from)?;
    let (best_mrr, best_epoch, best_state) =
        best.expect("training always runs at least one epoch");

    save_checkpoint(&best_state, &args.out.join(CHECKPOINT_BEST_FILE))?;
    save_checkpoint(&state, &args.out.join(CHECKPOINT_LAST_FILE))?;
    write_id_maps(&args.out, &data.corpus)?;

    let valid = evaluate_state(&best_state, &data, EvalSplit::Valid)?;
    let test = evaluate_state(&best_state, &data, EvalSplit::Test)?;
    write_metrics(&args.out.join(METRICS_VALID_FILE), &valid)?;
    write_metrics(&args.out.join(METRICS_TEST_FILE), &test)?;

    let manifest = json!({
        "version": VERSION_STRING,
        "command": "train",
        "config": cfg,
        "dataset": args.data.manifest_entry()?,
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
    });
    write_manifest(&args.out, &manifest)?;

    println!("\nbest epoch {best_epoch} (validation mrr {best_mrr:.4})");
    println!("validation:\n{}", valid.to_table());
    println!("test:\n{}", test.to_table());
    println!("artifacts in {}", args.out.display());
    Ok(())
}

/// One stdout line per epoch, four-decimal metrics.
fn epoch_line(report: &EpochReport) -> String {
    let j_a = match report.j_a {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    };
    format!(
        "epoch {:>3}  J_a {:>8}  J_k {:>8.4}  val mrr {:.4} hits@10 {:.4}  pairs +{} ({} active)",
        report.epoch,
        j_a,
        report.j_k,
        report.validation.macro_avg.mrr,
        report.validation.macro_avg.hits10,
        report.pairs_proposed,
        report.pairs_active,
    )
}

/// Flags of `evaluate`.
#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trained model state (checkpoint JSON).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to score: valid or test.
    #[arg(long, default_value = "test")]
    pub split: EvalSplit,
    /// Optional file for the metrics JSON; default prints it instead.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Replace an existing --out file.
    #[arg(long)]
    pub force: bool,
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> CliResult<()> {
    let data = args.data.load()?;
    let state = load_checkpoint(&args.checkpoint, &data.corpus)?;
    let metrics = evaluate_state(&state, &data, args.split)?;
    print!("{}", metrics.to_table());
    let text = pretty(&metrics.to_json())?;
    match &args.out {
        Some(path) => {
            prepare_out_file(path, args.force)?;
            fs::write(path, text).map_err(mkgc::Error::from)?;
            println!("wrote {}", path.display());
        }
        None => print!("\n{text}"),
    }
    Ok(())
}

/// Flags of `propose-pairs`.
#[derive(Args, Debug)]
pub struct ProposeArgs {
    /// Trained model state (checkpoint JSON).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Neighborhood size of the local similarity rescaling.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Output TSV of proposed pairs.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Replace an existing --out file.
    #[arg(long)]
    pub force: bool,
}

pub fn propose_pairs_cmd(args: &ProposeArgs) -> CliResult<()> {
    let data = args.data.load()?;
    let state = load_checkpoint(&args.checkpoint, &data.corpus)?;
    let graph = eval_graph(&state, &data)?;
    let text_features = state.text_features(&data)?;
    let embeddings = encode(&graph, &state.encoder_a, &state.tensors, text_features.as_ref())?;
    let sim_cfg = SimilarityConfig {
        k: args.k,
        use_structure: true,
        use_text: !data.text.is_empty(),
    };
    sim_cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    // How well the current embeddings rank the known (seed) pairs; a
    // sanity check on alignment quality before trusting proposals.
    let recovery = recovery_report(&data.seed_pairs, &embeddings, &data.text, &sim_cfg, &data.corpus)?;
    println!(
        "seed-pair recovery: mrr {:.4} hits@1 {:.4} hits@10 {:.4} ({} queries)",
        recovery.mrr, recovery.hits1, recovery.hits10, recovery.n
    );

    let existing: HashSet<(usize, usize)> = state
        .active_pairs(&data)
        .iter()
        .map(|p| p.key())
        .collect();
    let proposals = propose_pairs_all(&data.corpus, &embeddings, &data.text, &sim_cfg, &existing)?;
    prepare_out_file(&args.out, args.force)?;
    append_candidates(&args.out, &data.corpus, &proposals, state.epoch)?;
    println!(
        "proposed {} new pairs beyond the {} active ones -> {}",
        proposals.len(),
        existing.len(),
        args.out.display()
    );
    Ok(())
}

/// Flags of `attention-report`.
#[derive(Args, Debug)]
pub struct AttentionArgs {
    /// Trained model state (checkpoint JSON).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Optional file for the report JSON; default prints it instead.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Replace an existing --out file.
    #[arg(long)]
    pub force: bool,
}

pub fn attention_report_cmd(args: &AttentionArgs) -> CliResult<()> {
    let data = args.data.load()?;
    let state = load_checkpoint(&args.checkpoint, &data.corpus)?;
    let graph = eval_graph(&state, &data)?;
    let text_features = state.text_features(&data)?;
    let report = attention_report(&graph, &state.encoder_k, &state.tensors, text_features.as_ref())?;
    print!("{}", report.to_table());
    let text = pretty(&serde_json::to_value(&report).map_err(mkgc::Error::from)?)?;
    match &args.out {
        Some(path) => {
            prepare_out_file(path, args.force)?;
            fs::write(path, text).map_err(mkgc::Error::from)?;
            println!("wrote {}", path.display());
        }
        None => print!("\n{text}"),
    }
    Ok(())
}

/// Flags of `ablate`.
#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Optional `key = value` config file shared by every variant.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Config override (repeatable; later ones win).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed shared by every variant; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional directory for the comparison table and JSON.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace a completed run at --out.
    #[arg(long)]
    pub force: bool,
}

pub fn ablate_cmd(args: &AblateArgs) -> CliResult<()> {
    let cfg = build_config(args.config.as_deref(), &args.set, None, args.seed)?;
    if let Some(dir) = &args.out {
        prepare_out_dir(dir, args.force)?;
    }
    let data = args.data.load()?;
    let rows = run_ablation(&data, &cfg)?;
    let table = ablation_table(&rows);
    print!("{table}");
    if let Some(dir) = &args.out {
        fs::write(dir.join("ablation.tsv"), &table).map_err(mkgc::Error::from)?;
        fs::write(
            dir.join("ablation.json"),
            pretty(&serde_json::to_value(&rows).map_err(mkgc::Error::from)?)?,
        )
        .map_err(mkgc::Error::from)?;
        let manifest = json!({
            "version": VERSION_STRING,
            "command": "ablate",
            "config": cfg,
            "dataset": args.data.manifest_entry()?,
        });
        write_manifest(dir, &manifest)?;
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

/// Flags of `sweep-alignment`.
#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Optional `key = value` config file shared by every run.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Config override (repeatable; later ones win).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed-alignment ratios to train at.
    #[arg(long, value_name = "R0,R1,...", default_value = "0.2,0.6,1.0")]
    pub ratios: String,
    /// Run seeds averaged at every ratio.
    #[arg(long, value_name = "S0,S1,...", default_value = "0,1,2")]
    pub seeds: String,
    /// Optional directory for the series table and JSON.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace a completed run at --out.
    #[arg(long)]
    pub force: bool,
}

pub fn sweep_alignment_cmd(args: &SweepArgs) -> CliResult<()> {
    let ratios = parse_f64_list(&args.ratios, "ratios")?;
    let seeds = parse_u64_list(&args.seeds, "seeds")?;
    let cfg = build_config(args.config.as_deref(), &args.set, None, None)?;
    if let Some(dir) = &args.out {
        prepare_out_dir(dir, args.force)?;
    }
    let data = args.data.load()?;
    let points = sweep_alignment(&data, &cfg, &ratios, &seeds)?;
    let table = sweep_table(&points);
    print!("{table}");
    if let Some(dir) = &args.out {
        fs::write(dir.join("sweep.tsv"), &table).map_err(mkgc::Error::from)?;
        fs::write(
            dir.join("sweep.json"),
            pretty(&serde_json::to_value(&points).map_err(mkgc::Error::from)?)?,
        )
        .map_err(mkgc::Error::from)?;
        let manifest = json!({
            "version": VERSION_STRING,
            "command": "sweep-alignment",
            "config": cfg,
            "dataset": args.data.manifest_entry()?,
            "ratios": ratios,
            "seeds": seeds,
        });
        write_manifest(dir, &manifest)?;
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

/// `ratio pairs runs` followed by per-language Hits@10 and MRR
/// columns in sorted language order.
fn sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::from("ratio\tpairs\truns");
    let langs: Vec<&String> = points
        .first()
        .map(|p| p.hits10_by_language.keys().collect())
        .unwrap_or_default();
    for lang in &langs {
        out.push_str(&format!("\thits@10[{lang}]"));
    }
    for lang in &langs {
        out.push_str(&format!("\tmrr[{lang}]"));
    }
    out.push('\n');
    for point in points {
        out.push_str(&format!(
            "{:.4}\t{}\t{}",
            point.ratio, point.pairs_used, point.runs
        ));
        for lang in &langs {
            out.push_str(&format!("\t{:.4}", point.hits10_by_language[*lang]));
        }
        for lang in &langs {
            out.push_str(&format!("\t{:.4}", point.mrr_by_language[*lang]));
        }
        out.push('\n');
    }
    out
}
