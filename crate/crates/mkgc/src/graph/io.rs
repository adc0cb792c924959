//! TSV interchange formats and dataset-directory loading.
//!
//! A dataset directory holds `triples_<lang>.tsv` (one per language,
//! unsplit; `head<TAB>relation<TAB>tail`), optional `alignment.tsv`
//! and `ground_truth.tsv` (`lang_a<TAB>entity_a<TAB>lang_b<TAB>
//! entity_b`), optional `entities_<lang>.tsv` (one label per line,
//! declaring the full entity set including triple-less entities, in
//! id order), and optional `text_embeddings.jsonl`. Blank lines and
//! `#` comments are ignored everywhere. Splitting into train/valid/
//! test happens at load time from an explicit seed, so a dataset plus
//! a split seed fully determines the corpus.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{
    AlignmentPair, CorpusBuilder, MultiKg, Provenance, RawAlignment, RawLanguage, RawTriple,
    SyntheticData,
};

pub const TEXT_EMBEDDINGS_FILE: &str = "text_embeddings.jsonl";
const TRIPLES_PREFIX: &str = "triples_";
const ENTITIES_PREFIX: &str = "entities_";
const TRIPLES_SUFFIX: &str = ".tsv";
const ALIGNMENT_FILE: &str = "alignment.tsv";
const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";
pub const STATS_FILE: &str = "stats.tsv";

/// Whether `name` is one of the dataset-directory files this module
/// reads or writes (used e.g. to fingerprint a dataset).
pub fn is_dataset_file(name: &str) -> bool {
    let prefixed = |prefix: &str| {
        name.strip_prefix(prefix)
            .and_then(|s| s.strip_suffix(TRIPLES_SUFFIX))
            .is_some_and(|lang| !lang.is_empty())
    };
    name == ALIGNMENT_FILE
        || name == GROUND_TRUTH_FILE
        || name == TEXT_EMBEDDINGS_FILE
        || name == STATS_FILE
        || prefixed(TRIPLES_PREFIX)
        || prefixed(ENTITIES_PREFIX)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let content = fs::read_to_string(path)?;
    Ok(content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect())
}

/// Parse a three-column triple file.
pub fn parse_triples(path: &Path) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols.iter().any(|c| c.is_empty()) {
            return Err(parse_error(path, line_no, "empty column"));
        }
        out.push(RawTriple::new(cols[0], cols[1], cols[2]));
    }
    Ok(out)
}

/// Parse a four-column alignment file.
pub fn parse_alignment(path: &Path) -> Result<Vec<RawAlignment>> {
    let mut out = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols.iter().any(|c| c.is_empty()) {
            return Err(parse_error(path, line_no, "empty column"));
        }
        out.push(RawAlignment {
            left_lang: cols[0].to_string(),
            left: cols[1].to_string(),
            right_lang: cols[2].to_string(),
            right: cols[3].to_string(),
        });
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[RawTriple]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for t in triples {
        writeln!(f, "{}\t{}\t{}", t.head, t.rel, t.tail)?;
    }
    Ok(())
}

pub fn write_alignment(path: &Path, pairs: &[RawAlignment]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for p in pairs {
        writeln!(f, "{}\t{}\t{}\t{}", p.left_lang, p.left, p.right_lang, p.right)?;
    }
    Ok(())
}

/// A corpus loaded from disk together with its alignment supervision.
#[derive(Debug)]
pub struct LoadedDataset {
    pub corpus: Arc<MultiKg>,
    pub seed_pairs: Vec<AlignmentPair>,
    pub ground_truth: Vec<AlignmentPair>,
    pub text_path: Option<PathBuf>,
}

/// Load a dataset directory; languages are discovered from
/// `triples_*.tsv` file names and processed in sorted order.
pub fn load_dataset(dir: &Path, split: (f64, f64, f64), split_seed: u64) -> Result<LoadedDataset> {
    let mut triple_files: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name
            .strip_prefix(TRIPLES_PREFIX)
            .and_then(|s| s.strip_suffix(TRIPLES_SUFFIX))
        {
            triple_files.push((stem.to_string(), path.clone()));
        }
    }
    if triple_files.is_empty() {
        return Err(Error::invalid(format!(
            "no {TRIPLES_PREFIX}<lang>{TRIPLES_SUFFIX} files in {}",
            dir.display()
        )));
    }
    triple_files.sort();

    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let mut builder = CorpusBuilder::new();
    for (lang, path) in &triple_files {
        let triples = parse_triples(path)?;
        if triples.is_empty() {
            return Err(Error::invalid(format!(
                "{}: no triples for language {lang:?}",
                path.display()
            )));
        }
        let mut language = RawLanguage::from_unsplit(lang.clone(), triples, split, &mut rng)?;
        let entity_list = dir.join(format!("{ENTITIES_PREFIX}{lang}{TRIPLES_SUFFIX}"));
        if entity_list.exists() {
            language.extra_entities = data_lines(&entity_list)?
                .into_iter()
                .map(|(_, l)| l)
                .collect();
        }
        builder.add_language(language)?;
    }
    let corpus = Arc::new(builder.build()?);

    let resolve_file = |file: &str, provenance: Provenance| -> Result<Vec<AlignmentPair>> {
        let path = dir.join(file);
        if !path.exists() {
            return Ok(Vec::new());
        }
        parse_alignment(&path)?
            .iter()
            .map(|raw| corpus.resolve_pair(raw, provenance))
            .collect()
    };
    let seed_pairs = resolve_file(ALIGNMENT_FILE, Provenance::Seed)?;
    let ground_truth = resolve_file(GROUND_TRUTH_FILE, Provenance::Seed)?;

    let text = dir.join(TEXT_EMBEDDINGS_FILE);
    Ok(LoadedDataset {
        corpus,
        seed_pairs,
        ground_truth,
        text_path: text.exists().then_some(text),
    })
}

fn pair_to_raw(corpus: &MultiKg, p: &AlignmentPair) -> RawAlignment {
    RawAlignment {
        left_lang: corpus.language(p.left.language).name.clone(),
        left: corpus.label_of(p.left.global_id).to_string(),
        right_lang: corpus.language(p.right.language).name.clone(),
        right: corpus.label_of(p.right.global_id).to_string(),
    }
}

/// Write a synthetic corpus as a loadable dataset directory, plus a
/// per-language stats table.
pub fn write_dataset(dir: &Path, data: &SyntheticData) -> Result<()> {
    fs::create_dir_all(dir)?;
    let corpus = &data.corpus;
    for kg in corpus.languages() {
        let rels = corpus.relation_labels();
        let rows: Vec<RawTriple> = kg
            .train
            .iter()
            .chain(&kg.valid)
            .chain(&kg.test)
            .map(|t| {
                RawTriple::new(
                    kg.label(t.head.local_id),
                    rels[t.relation.id].clone(),
                    kg.label(t.tail.local_id),
                )
            })
            .collect();
        write_triples(
            &dir.join(format!("{TRIPLES_PREFIX}{}{TRIPLES_SUFFIX}", kg.name)),
            &rows,
        )?;
        let mut entity_list = String::new();
        for local in 0..kg.entity_count() {
            entity_list.push_str(kg.label(local));
            entity_list.push('\n');
        }
        fs::write(
            dir.join(format!("{ENTITIES_PREFIX}{}{TRIPLES_SUFFIX}", kg.name)),
            entity_list,
        )?;
    }
    let to_raw = |pairs: &[AlignmentPair]| -> Vec<RawAlignment> {
        pairs.iter().map(|p| pair_to_raw(corpus, p)).collect()
    };
    write_alignment(&dir.join(ALIGNMENT_FILE), &to_raw(&data.seed_pairs))?;
    write_alignment(&dir.join(GROUND_TRUTH_FILE), &to_raw(&data.ground_truth))?;

    let mut stats = String::from("# language\tentities\trelations\ttriples\n");
    for kg in corpus.languages() {
        stats.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            kg.name,
            kg.entity_count(),
            kg.relations.len(),
            kg.triple_count()
        ));
    }
    fs::write(dir.join(STATS_FILE), stats)?;
    Ok(())
}

/// Emit `label<TAB>id` maps for entities (language-qualified labels,
/// global ids) and relations next to a checkpoint.
pub fn write_id_maps(dir: &Path, corpus: &MultiKg) -> Result<()> {
    let mut entities = String::new();
    for g in 0..corpus.total_entities() {
        entities.push_str(&format!("{}\t{g}\n", corpus.qualified_label(g)));
    }
    fs::write(dir.join("entity_ids.tsv"), entities)?;

    let mut relations = String::new();
    for (id, label) in corpus.relation_labels().iter().enumerate() {
        relations.push_str(&format!("{label}\t{id}\n"));
    }
    fs::write(dir.join("relation_ids.tsv"), relations)?;
    Ok(())
}
