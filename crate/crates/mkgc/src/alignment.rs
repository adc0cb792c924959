//! Cross-lingual pair generation and masked-recovery training.
//!
//! Two embedding views feed a pairwise similarity: structural vectors from
//! the alignment encoder and precomputed per-entity text vectors. The
//! similarity of a cross-language pair is the *maximum* of the cosines the
//! enabled-and-covered views provide. Raw similarities are rescaled with
//! CSLS — `csls(i, j) = 2 sim(i, j) − s(i) − s(j)`, where `s(·)` is the
//! mean of an entity's K best similarities into the other language — which
//! suppresses hub entities, and new pairs are proposed where two entities
//! are each other's CSLS argmax ([`propose_pairs`]).
//!
//! Training signal comes from masked recovery: some alignment edges are
//! hidden from the graph, and [`alignment_loss`] pulls the hidden pairs
//! together while pushing sampled unaligned pairs apart by a margin.
//! [`recovery_report`] measures how well CSLS ranking recovers the hidden
//! counterparts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{DiffValue, Recording, Tensor};
use crate::encoder::{ContextEmbeddings, TextFeatures};
use crate::error::{Error, Result};
use crate::graph::{AlignmentPair, EntityRef, MultiKg, Provenance};
use crate::kgc::{embedding_param_name, RankSummary, NEGATIVE_RETRY_LIMIT};

/// Per-entity text vectors in their own dimension, keyed by global id.
/// Coverage is explicit: an entity without a record has *no* vector, it is
/// never treated as zero.
#[derive(Clone, Debug, Default)]
pub struct TextEmbeddingStore {
    dim: usize,
    vectors: HashMap<usize, Vec<f64>>,
}

/// One line of the text-embedding JSON-lines file.
#[derive(Serialize, Deserialize)]
struct TextRecord {
    lang: String,
    entity: String,
    vec: Vec<f64>,
}

impl TextEmbeddingStore {
    /// Empty store covering nothing.
    pub fn empty() -> Self {
        TextEmbeddingStore::default()
    }

    /// Builds a store from global-id-keyed vectors, checking that all
    /// vectors share one dimension.
    pub fn from_map(vectors: HashMap<usize, Vec<f64>>) -> Result<Self> {
        let mut dim = 0;
        for (id, v) in &vectors {
            if v.is_empty() {
                return Err(Error::invalid(format!("empty text vector for entity {id}")));
            }
            if dim == 0 {
                dim = v.len();
            } else if v.len() != dim {
                return Err(Error::invalid(format!(
                    "text vector for entity {id} has length {}, expected {dim}",
                    v.len()
                )));
            }
        }
        Ok(TextEmbeddingStore { dim, vectors })
    }

    /// Loads a JSON-lines file of `{"lang", "entity", "vec"}` records,
    /// resolving labels against `corpus`. Duplicate entities, unknown
    /// labels, and dimension mismatches are line-numbered errors.
    pub fn load(path: &Path, corpus: &MultiKg) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let file = File::open(path)?;
        let mut dim = 0usize;
        let mut vectors: HashMap<usize, Vec<f64>> = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let record: TextRecord = serde_json::from_str(trimmed)
                .map_err(|e| parse_err(line_no, format!("malformed record: {e}")))?;
            let entity = corpus
                .lookup(&record.lang, &record.entity)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            if record.vec.is_empty() {
                return Err(parse_err(line_no, "empty embedding vector".to_string()));
            }
            if dim == 0 {
                dim = record.vec.len();
            } else if record.vec.len() != dim {
                return Err(parse_err(
                    line_no,
                    format!("vector length {} does not match {dim}", record.vec.len()),
                ));
            }
            if vectors.insert(entity.global_id, record.vec).is_some() {
                return Err(parse_err(
                    line_no,
                    format!("duplicate entry for {}/{}", record.lang, record.entity),
                ));
            }
        }
        Ok(TextEmbeddingStore { dim, vectors })
    }

    /// Writes the store as JSON-lines, sorted by global id.
    pub fn write(&self, path: &Path, corpus: &MultiKg) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut ids: Vec<usize> = self.vectors.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            let e = corpus.to_ref(id);
            let record = TextRecord {
                lang: corpus.language(e.language).name.clone(),
                entity: corpus.language(e.language).label(e.local_id).to_string(),
                vec: self.vectors[&id].clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn covers(&self, global: usize) -> bool {
        self.vectors.contains_key(&global)
    }

    pub fn get(&self, global: usize) -> Option<&[f64]> {
        self.vectors.get(&global).map(Vec::as_slice)
    }

    /// Dense per-entity view for seeding the encoder's base vectors.
    pub fn to_text_features(&self, corpus: &MultiKg) -> TextFeatures {
        TextFeatures {
            dim: self.dim,
            vectors: (0..corpus.total_entities())
                .map(|g| self.vectors.get(&g).cloned())
                .collect(),
        }
    }
}

/// How pairwise similarity and CSLS are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Neighbor count for CSLS local scaling.
    pub k: usize,
    /// Use cosine over structural (encoder) embeddings.
    pub use_structure: bool,
    /// Use cosine over text embeddings where both entities are covered.
    pub use_text: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            k: 10,
            use_structure: true,
            use_text: true,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("CSLS neighbor count K must be at least 1"));
        }
        if !self.use_structure && !self.use_text {
            return Err(Error::invalid(
                "at least one similarity source (structure or text) must be enabled",
            ));
        }
        Ok(())
    }
}

/// A proposed cross-language entity pair with its scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub left: EntityRef,
    pub right: EntityRef,
    /// Rescaled score that made the pair mutual.
    pub csls: f64,
    /// Raw max-of-cosines similarity.
    pub sim: f64,
}

impl CandidatePair {
    /// Converts into a graph pair tagged as generated.
    pub fn to_alignment(&self) -> Result<AlignmentPair> {
        AlignmentPair::new(self.left, self.right, Provenance::Generated)
    }
}

/// Cosine similarity of two equal-length vectors; zero-norm inputs are an
/// error because their direction is undefined.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::numeric("cosine similarity of a zero-norm vector"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Max-of-cosines similarity between two entities.
///
/// Each enabled view contributes its cosine only when it covers both
/// entities; the result is the maximum of the contributions. No view
/// covering the pair is an error.
pub fn pair_similarity(
    a: usize,
    b: usize,
    structural: &ContextEmbeddings,
    text: &TextEmbeddingStore,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    cfg.validate()?;
    let mut best: Option<f64> = None;
    if cfg.use_structure {
        if let (Some(x), Some(y)) = (structural.get(a), structural.get(b)) {
            best = Some(cosine(x, y)?);
        }
    }
    if cfg.use_text {
        if let (Some(x), Some(y)) = (text.get(a), text.get(b)) {
            let c = cosine(x, y)?;
            best = Some(best.map_or(c, |v| v.max(c)));
        }
    }
    best.ok_or_else(|| {
        Error::invalid(format!(
            "no enabled similarity source covers both entities {a} and {b}"
        ))
    })
}

/// Dense cross-language similarity block: `values[i * right.len() + j]` is
/// the similarity of `left[i]` and `right[j]`.
#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    /// Global ids of the first language's entities, ascending.
    pub left: Vec<usize>,
    /// Global ids of the second language's entities, ascending.
    pub right: Vec<usize>,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.right.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.right.len();
        &self.values[i * w..(i + 1) * w]
    }
}

/// Computes the full similarity block between two languages, with rows
/// evaluated in parallel.
pub fn similarity_matrix(
    corpus: &MultiKg,
    lang_a: usize,
    lang_b: usize,
    structural: &ContextEmbeddings,
    text: &TextEmbeddingStore,
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    cfg.validate()?;
    if lang_a == lang_b {
        return Err(Error::invalid(
            "similarity candidates are cross-language only",
        ));
    }
    let left: Vec<usize> = corpus.global_range(lang_a).collect();
    let right: Vec<usize> = corpus.global_range(lang_b).collect();
    if left.is_empty() || right.is_empty() {
        return Err(Error::invalid(
            "cannot compare languages with no entities",
        ));
    }
    let rows: Vec<Vec<f64>> = left
        .par_iter()
        .map(|&gi| {
            right
                .iter()
                .map(|&gj| pair_similarity(gi, gj, structural, text, cfg))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(SimilarityMatrix {
        left,
        right,
        values: rows.concat(),
    })
}

/// Mean of the `k` largest values (all of them when fewer than `k` exist).
/// Returns the mean and the count actually used.
pub fn mean_top_k(values: &[f64], k: usize) -> (f64, usize) {
    let used = k.min(values.len());
    if used == 0 {
        return (0.0, 0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mean = sorted[..used].iter().sum::<f64>() / used as f64;
    (mean, used)
}

/// Per-entity local scalings for one similarity block: `s(e)` is the mean
/// of `e`'s K largest similarities into the other language.
#[derive(Clone, Debug)]
pub struct CslsScores {
    pub k: usize,
    pub s_left: Vec<f64>,
    pub s_right: Vec<f64>,
    /// How many entities had fewer than K candidates and used them all;
    /// surfaced in reports rather than treated as an error.
    pub truncated: usize,
}

impl CslsScores {
    pub fn new(sims: &SimilarityMatrix, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("CSLS neighbor count K must be at least 1"));
        }
        let n_left = sims.left.len();
        let n_right = sims.right.len();
        let mut truncated = 0usize;
        let mut s_left = Vec::with_capacity(n_left);
        for i in 0..n_left {
            let (mean, used) = mean_top_k(sims.row(i), k);
            if used < k {
                truncated += 1;
            }
            s_left.push(mean);
        }
        let mut s_right = Vec::with_capacity(n_right);
        let mut column = vec![0.0; n_left];
        for j in 0..n_right {
            for (i, slot) in column.iter_mut().enumerate() {
                *slot = sims.value(i, j);
            }
            let (mean, used) = mean_top_k(&column, k);
            if used < k {
                truncated += 1;
            }
            s_right.push(mean);
        }
        Ok(CslsScores {
            k,
            s_left,
            s_right,
            truncated,
        })
    }

    /// `2 sim(i, j) − s(left_i) − s(right_j)`.
    pub fn score(&self, sims: &SimilarityMatrix, i: usize, j: usize) -> f64 {
        2.0 * sims.value(i, j) - self.s_left[i] - self.s_right[j]
    }
}

/// Index pairs `(i, j)` that are mutual CSLS argmaxes of each other.
/// Ties resolve to the smallest index on both sides, so the result is
/// deterministic.
pub fn mutual_argmax(sims: &SimilarityMatrix, csls: &CslsScores) -> Vec<(usize, usize)> {
    let n_left = sims.left.len();
    let n_right = sims.right.len();
    // First strict maximum = smallest index among ties.
    let mut best_right = vec![0usize; n_left];
    for (i, slot) in best_right.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for j in 0..n_right {
            let s = csls.score(sims, i, j);
            if s > best {
                best = s;
                *slot = j;
            }
        }
    }
    let mut best_left = vec![0usize; n_right];
    for (j, slot) in best_left.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for i in 0..n_left {
            let s = csls.score(sims, i, j);
            if s > best {
                best = s;
                *slot = i;
            }
        }
    }
    (0..n_left)
        .filter_map(|i| {
            let j = best_right[i];
            (best_left[j] == i).then_some((i, j))
        })
        .collect()
}

/// Proposes new cross-language pairs between two languages: entities that
/// are mutual nearest neighbors under CSLS and not already actively
/// aligned.
///
/// `existing` holds canonical `(lower global id, higher global id)` keys of
/// every active pair (seed and previously accepted). The result is sorted
/// by the left entity's id; swapping the two languages yields the same
/// unordered pair set.
pub fn propose_pairs(
    corpus: &MultiKg,
    lang_a: usize,
    lang_b: usize,
    structural: &ContextEmbeddings,
    text: &TextEmbeddingStore,
    cfg: &SimilarityConfig,
    existing: &HashSet<(usize, usize)>,
) -> Result<Vec<CandidatePair>> {
    let sims = similarity_matrix(corpus, lang_a, lang_b, structural, text, cfg)?;
    let csls = CslsScores::new(&sims, cfg.k)?;
    let mut out = Vec::new();
    for (i, j) in mutual_argmax(&sims, &csls) {
        let gi = sims.left[i];
        let gj = sims.right[j];
        let key = (gi.min(gj), gi.max(gj));
        if existing.contains(&key) {
            continue;
        }
        out.push(CandidatePair {
            left: corpus.to_ref(gi),
            right: corpus.to_ref(gj),
            csls: csls.score(&sims, i, j),
            sim: sims.value(i, j),
        });
    }
    Ok(out)
}

/// Runs [`propose_pairs`] over every unordered language pair of the corpus
/// and concatenates the results (ascending language pairs, then left id).
pub fn propose_pairs_all(
    corpus: &MultiKg,
    structural: &ContextEmbeddings,
    text: &TextEmbeddingStore,
    cfg: &SimilarityConfig,
    existing: &HashSet<(usize, usize)>,
) -> Result<Vec<CandidatePair>> {
    let m = corpus.num_languages();
    let mut out = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            out.extend(propose_pairs(corpus, a, b, structural, text, cfg, existing)?);
        }
    }
    Ok(out)
}

/// Appends candidate pairs to a TSV report
/// (`lang_a entity_a lang_b entity_b csls sim epoch`), creating the file
/// with a header comment on first use.
pub fn append_candidates(
    path: &Path,
    corpus: &MultiKg,
    pairs: &[CandidatePair],
    epoch: usize,
) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut out = BufWriter::new(file);
    if fresh {
        writeln!(out, "# lang_a\tentity_a\tlang_b\tentity_b\tcsls\tsim\tepoch")?;
    }
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            corpus.language(p.left.language).name,
            corpus.language(p.left.language).label(p.left.local_id),
            corpus.language(p.right.language).name,
            corpus.language(p.right.language).label(p.right.local_id),
            p.csls,
            p.sim,
            epoch
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a candidate report written by [`append_candidates`] back into
/// `(pair, epoch)` rows. Scores carry the file's written precision, not
/// the original bits.
pub fn read_candidates(path: &Path, corpus: &MultiKg) -> Result<Vec<(CandidatePair, usize)>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(parse_err(
                number,
                format!("expected 7 tab-separated fields, found {}", fields.len()),
            ));
        }
        let left = corpus.lookup(fields[0], fields[1])?;
        let right = corpus.lookup(fields[2], fields[3])?;
        let number_field = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(number, format!("bad {name} {:?}: {e}", fields[i])))
        };
        let csls = number_field(4, "csls")?;
        let sim = number_field(5, "sim")?;
        let epoch = fields[6]
            .parse::<usize>()
            .map_err(|e| parse_err(number, format!("bad epoch {:?}: {e}", fields[6])))?;
        out.push((
            CandidatePair {
                left,
                right,
                csls,
                sim,
            },
            epoch,
        ));
    }
    Ok(out)
}

/// Counters for alignment negative sampling.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlignNegStats {
    /// Negatives successfully drawn.
    pub drawn: u64,
    /// Negative slots abandoned because no unaligned replacement could be
    /// found on either side (e.g. singleton languages).
    pub skipped: u64,
}

/// A masked positive pair with its sampled unaligned contrast pairs.
#[derive(Clone, Debug)]
pub struct ContrastPair {
    pub positive: AlignmentPair,
    pub negatives: Vec<(EntityRef, EntityRef)>,
}

/// Draws `per_positive` unaligned negatives for each positive by replacing
/// one side with a random entity of the same language.
///
/// A candidate is accepted only if the replaced pair is not an active
/// alignment (`active` uses canonical keys and must include the positives
/// themselves). For each slot a coin picks the side to replace; if that
/// side cannot produce an unaligned pair within the retry budget, the
/// other side is tried, and if both fail the slot is skipped and counted.
pub fn draw_alignment_negatives<R: Rng>(
    positives: &[AlignmentPair],
    corpus: &MultiKg,
    active: &HashSet<(usize, usize)>,
    per_positive: usize,
    rng: &mut R,
    stats: &mut AlignNegStats,
) -> Vec<ContrastPair> {
    let draw_side = |positive: &AlignmentPair,
                         replace_left: bool,
                         rng: &mut R|
     -> Option<(EntityRef, EntityRef)> {
        let (replaced, kept) = if replace_left {
            (positive.left, positive.right)
        } else {
            (positive.right, positive.left)
        };
        let n = corpus.language(replaced.language).entity_count();
        if n < 2 {
            return None;
        }
        for _ in 0..NEGATIVE_RETRY_LIMIT {
            let candidate = corpus.entity_ref(replaced.language, rng.random_range(0..n));
            let key = (
                candidate.global_id.min(kept.global_id),
                candidate.global_id.max(kept.global_id),
            );
            if !active.contains(&key) && key != positive.key() {
                // Preserve the positive's orientation: the replaced side
                // stays on its side of the pair.
                return Some(if replace_left {
                    (candidate, kept)
                } else {
                    (kept, candidate)
                });
            }
        }
        None
    };

    positives
        .iter()
        .map(|positive| {
            let mut negatives = Vec::with_capacity(per_positive);
            for _ in 0..per_positive {
                let left_first = rng.random_range(0..2u8) == 0;
                let drawn = draw_side(positive, left_first, rng)
                    .or_else(|| draw_side(positive, !left_first, rng));
                match drawn {
                    Some(neg) => {
                        stats.drawn += 1;
                        negatives.push(neg);
                    }
                    None => stats.skipped += 1,
                }
            }
            ContrastPair {
                positive: *positive,
                negatives,
            }
        })
        .collect()
}

/// Margin loss over pre-drawn contrast pairs on an existing recording.
///
/// Each term is `[‖ẽ_h − ẽ_t‖ − ‖ẽ_h' − ẽ_t'‖ + margin]₊` for a positive
/// `(h, t)` and negative `(h', t')`; the result is their sum. `embed` maps
/// a global id to its `(dim, 1)` handle. Erroring on zero terms keeps a
/// silently-empty loss from masquerading as convergence.
pub fn alignment_loss_terms(
    rec: &mut Recording,
    contrasts: &[ContrastPair],
    mut embed: impl FnMut(&mut Recording, usize) -> Result<DiffValue>,
    margin: f64,
) -> Result<DiffValue> {
    if !(margin > 0.0) {
        return Err(Error::invalid(format!(
            "alignment margin must be strictly positive, got {margin}"
        )));
    }
    let mut terms = Vec::new();
    for contrast in contrasts {
        if contrast.negatives.is_empty() {
            continue;
        }
        let e_h = embed(rec, contrast.positive.left.global_id)?;
        let e_t = embed(rec, contrast.positive.right.global_id)?;
        let d_pos = rec.l2_norm_diff(e_h, e_t)?;
        for &(nh, nt) in &contrast.negatives {
            let e_nh = embed(rec, nh.global_id)?;
            let e_nt = embed(rec, nt.global_id)?;
            let d_neg = rec.l2_norm_diff(e_nh, e_nt)?;
            let gap = rec.sub(d_pos, d_neg)?;
            terms.push(rec.hinge(gap, margin)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::invalid(
            "alignment loss has no contrast terms (all negatives skipped)",
        ));
    }
    rec.sum_scalars(&terms)
}

/// A self-contained alignment loss with the touched embeddings registered
/// as trainable leaves.
pub struct AlignLossBundle {
    pub rec: Recording,
    pub loss: DiffValue,
    pub stats: AlignNegStats,
}

/// Masked-recovery loss over `masked_positives` with freshly drawn
/// unaligned negatives.
///
/// Embeddings come from the alignment encoder run on the masked graph;
/// each touched entity is registered as a leaf parameter (named like the
/// completion loss does), so `backward` yields per-embedding gradients.
pub fn alignment_loss<R: Rng>(
    masked_positives: &[AlignmentPair],
    embeddings: &ContextEmbeddings,
    corpus: &MultiKg,
    active: &HashSet<(usize, usize)>,
    margin: f64,
    negatives_per_positive: usize,
    rng: &mut R,
) -> Result<AlignLossBundle> {
    if masked_positives.is_empty() {
        return Err(Error::invalid("alignment loss over no masked positives"));
    }
    let mut stats = AlignNegStats::default();
    let contrasts = draw_alignment_negatives(
        masked_positives,
        corpus,
        active,
        negatives_per_positive,
        rng,
        &mut stats,
    );
    let mut rec = Recording::new();
    let mut handles: HashMap<usize, DiffValue> = HashMap::new();
    let loss = alignment_loss_terms(
        &mut rec,
        &contrasts,
        |rec, id| {
            if let Some(h) = handles.get(&id) {
                return Ok(*h);
            }
            let vec = embeddings.require(id)?;
            let h = rec.param(&embedding_param_name(id), &Tensor::column(vec.to_vec()))?;
            handles.insert(id, h);
            Ok(h)
        },
        margin,
    )?;
    Ok(AlignLossBundle { rec, loss, stats })
}

/// How well CSLS ranking recovers hidden counterparts.
///
/// Every masked pair contributes two queries: rank the right entity among
/// all of its language's entities by CSLS from the left entity, and vice
/// versa. Ranks are optimistic (1 + strictly-better count) and aggregated
/// like the completion metrics.
pub fn recovery_report(
    masked: &[AlignmentPair],
    structural: &ContextEmbeddings,
    text: &TextEmbeddingStore,
    cfg: &SimilarityConfig,
    corpus: &MultiKg,
) -> Result<RankSummary> {
    let mut by_langs: BTreeMap<(usize, usize), Vec<&AlignmentPair>> = BTreeMap::new();
    for pair in masked {
        by_langs
            .entry((pair.left.language, pair.right.language))
            .or_default()
            .push(pair);
    }
    let mut ranks = Vec::with_capacity(2 * masked.len());
    for ((lang_a, lang_b), pairs) in by_langs {
        let sims = similarity_matrix(corpus, lang_a, lang_b, structural, text, cfg)?;
        let csls = CslsScores::new(&sims, cfg.k)?;
        let left_start = sims.left[0];
        let right_start = sims.right[0];
        for pair in pairs {
            let i = pair.left.global_id - left_start;
            let j = pair.right.global_id - right_start;
            let target = csls.score(&sims, i, j);
            let better_right = (0..sims.right.len())
                .filter(|&jj| jj != j && csls.score(&sims, i, jj) > target)
                .count();
            ranks.push(1 + better_right);
            let better_left = (0..sims.left.len())
                .filter(|&ii| ii != i && csls.score(&sims, ii, j) > target)
                .count();
            ranks.push(1 + better_left);
        }
    }
    Ok(RankSummary::from_ranks(&ranks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check;
    use crate::graph::corpus_with_entities;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Two languages, `n_a` and `n_b` entities, one filler triple each so
    /// the corpus builds.
    fn bilingual(n_a: usize, n_b: usize) -> Arc<MultiKg> {
        let a: Vec<String> = (0..n_a).map(|i| format!("a{i}")).collect();
        let b: Vec<String> = (0..n_b).map(|i| format!("b{i}")).collect();
        let a_refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let b_refs: Vec<&str> = b.iter().map(String::as_str).collect();
        corpus_with_entities(&[
            ("la", &a_refs, &[(a_refs[0], "r0", a_refs[n_a.min(2) - 1])]),
            ("lb", &b_refs, &[(b_refs[0], "r0", b_refs[n_b.min(2) - 1])]),
        ])
        .unwrap()
    }

    fn random_embeddings(corpus: &MultiKg, dim: usize, seed: u64) -> ContextEmbeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vecs: HashMap<usize, Vec<f64>> = (0..corpus.total_entities())
            .map(|g| {
                (
                    g,
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        ContextEmbeddings::from_map(dim, vecs)
    }

    fn no_text() -> TextEmbeddingStore {
        TextEmbeddingStore::empty()
    }

    fn struct_only(k: usize) -> SimilarityConfig {
        SimilarityConfig {
            k,
            use_structure: true,
            use_text: false,
        }
    }

    fn text_only(k: usize) -> SimilarityConfig {
        SimilarityConfig {
            k,
            use_structure: false,
            use_text: true,
        }
    }

    #[test]
    fn similarity_takes_the_best_covered_view() {
        // Global ids as in `bilingual(2, 2)`: a0=0, a1=1, b0=2, b1=3.
        // Structural: cos(a0, b0) = 0.2 exactly.
        let structural = ContextEmbeddings::from_map(
            2,
            HashMap::from([
                (0usize, vec![1.0, 0.0]),
                (2usize, vec![0.2, (1.0f64 - 0.04).sqrt()]),
            ]),
        );
        // Text: cos(a0, b0) = 0.9 exactly.
        let text = TextEmbeddingStore::from_map(HashMap::from([
            (0usize, vec![1.0, 0.0, 0.0]),
            (2usize, vec![0.9, (1.0f64 - 0.81).sqrt(), 0.0]),
        ]))
        .unwrap();

        // Identical structural vectors, no text coverage → 1.0.
        let same = ContextEmbeddings::from_map(
            2,
            HashMap::from([(0usize, vec![0.4, -0.3]), (2usize, vec![0.4, -0.3])]),
        );
        let s = pair_similarity(0, 2, &same, &no_text(), &SimilarityConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);

        // Both views covered → max(0.2, 0.9) = 0.9.
        let s = pair_similarity(0, 2, &structural, &text, &SimilarityConfig::default()).unwrap();
        assert!((s - 0.9).abs() < 1e-12, "sim {s}");

        // Text disabled → structural cosine 0.2 alone.
        let s = pair_similarity(0, 2, &structural, &text, &struct_only(1)).unwrap();
        assert!((s - 0.2).abs() < 1e-12, "sim {s}");

        // Nothing covers entity 1 → error.
        let err = pair_similarity(1, 2, &structural, &text, &SimilarityConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("covers"), "{err}");
    }

    #[test]
    fn similarity_matches_direct_cosine_oracle() {
        let corpus = bilingual(4, 3);
        let structural = random_embeddings(&corpus, 5, 9);
        let cfg = struct_only(2);
        let sims =
            similarity_matrix(&corpus, 0, 1, &structural, &no_text(), &cfg).unwrap();
        for (i, &gi) in sims.left.iter().enumerate() {
            for (j, &gj) in sims.right.iter().enumerate() {
                let x = structural.get(gi).unwrap();
                let y = structural.get(gj).unwrap();
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let na: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let oracle = dot / (na * nb);
                assert!((sims.value(i, j) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_norm_vector_is_an_error() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    /// The worked 2×2 example: K = 1, similarities [[0.9, 0.1], [0.2, 0.8]].
    fn two_by_two() -> SimilarityMatrix {
        SimilarityMatrix {
            left: vec![0, 1],
            right: vec![2, 3],
            values: vec![0.9, 0.1, 0.2, 0.8],
        }
    }

    #[test]
    fn csls_two_by_two_case() {
        let sims = two_by_two();
        let csls = CslsScores::new(&sims, 1).unwrap();
        // s(a1) = 0.9, s(a2) = 0.8, s(b1) = 0.9, s(b2) = 0.8.
        assert_eq!(csls.s_left, vec![0.9, 0.8]);
        assert_eq!(csls.s_right, vec![0.9, 0.8]);
        assert!((csls.score(&sims, 0, 0) - 0.0).abs() < 1e-12);
        assert!((csls.score(&sims, 0, 1) - (-1.5)).abs() < 1e-12);
        assert!((csls.score(&sims, 1, 0) - (-1.3)).abs() < 1e-12);
        assert!((csls.score(&sims, 1, 1) - 0.0).abs() < 1e-12);
        assert_eq!(csls.truncated, 0);

        // Mutual argmaxes are exactly the diagonal.
        assert_eq!(mutual_argmax(&sims, &csls), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn constant_similarities_give_zero_csls_everywhere() {
        let sims = SimilarityMatrix {
            left: vec![0, 1, 2],
            right: vec![3, 4],
            values: vec![0.37; 6],
        };
        for k in [1, 2, 5] {
            let csls = CslsScores::new(&sims, k).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert!(csls.score(&sims, i, j).abs() < 1e-12);
                }
            }
        }
        // K = 5 exceeds both side sizes: every entity notes truncation.
        let csls = CslsScores::new(&sims, 5).unwrap();
        assert_eq!(csls.truncated, 5);
    }

    #[test]
    fn csls_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (n, m) = (6, 5);
        let values: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sims = SimilarityMatrix {
            left: (0..n).collect(),
            right: (n..n + m).collect(),
            values,
        };
        let csls = CslsScores::new(&sims, 3).unwrap();

        // Permute rows and columns and recompute.
        let perm_rows: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let perm_cols: Vec<usize> = vec![2, 4, 0, 1, 3];
        let mut values2 = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                values2[i * m + j] = sims.value(perm_rows[i], perm_cols[j]);
            }
        }
        let sims2 = SimilarityMatrix {
            left: (0..n).collect(),
            right: (n..n + m).collect(),
            values: values2,
        };
        let csls2 = CslsScores::new(&sims2, 3).unwrap();
        for i in 0..n {
            for j in 0..m {
                let a = csls.score(&sims, perm_rows[i], perm_cols[j]);
                let b = csls2.score(&sims2, i, j);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_shift_is_absorbed_by_local_scaling() {
        // Regime where the shifted row stays out of every column's top-K:
        // row 0 is weak, row 1 dominates all columns, K = 1.
        let base = SimilarityMatrix {
            left: vec![0, 1],
            right: vec![2, 3, 4],
            values: vec![0.30, 0.20, 0.10, 0.90, 0.95, 0.93],
        };
        let delta = 0.05;
        let shifted = SimilarityMatrix {
            left: base.left.clone(),
            right: base.right.clone(),
            values: base
                .values
                .iter()
                .enumerate()
                .map(|(idx, &v)| if idx < 3 { v + delta } else { v })
                .collect(),
        };
        let c0 = CslsScores::new(&base, 1).unwrap();
        let c1 = CslsScores::new(&shifted, 1).unwrap();
        // s(row 0) absorbs the shift...
        assert!((c1.s_left[0] - (c0.s_left[0] + delta)).abs() < 1e-12);
        // ...and every CSLS value of row 0 moves by the same constant, so
        // the ordering over candidates (and the argmax) is unchanged.
        let diffs: Vec<f64> = (0..3)
            .map(|j| c1.score(&shifted, 0, j) - c0.score(&base, 0, j))
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn proposals_match_brute_force_oracle() {
        let corpus = bilingual(12, 9);
        for k in [1usize, 5, 10] {
            let structural = random_embeddings(&corpus, 6, 40 + k as u64);
            let cfg = struct_only(k);
            let got: HashSet<(usize, usize)> =
                propose_pairs(&corpus, 0, 1, &structural, &no_text(), &cfg, &HashSet::new())
                    .unwrap()
                    .into_iter()
                    .map(|c| (c.left.global_id, c.right.global_id))
                    .collect();

            // Independent oracle: cosines from scratch, top-K means via
            // sorting, mutual argmax via exhaustive double loop.
            let left: Vec<usize> = corpus.global_range(0).collect();
            let right: Vec<usize> = corpus.global_range(1).collect();
            let cos = |a: usize, b: usize| -> f64 {
                let x = structural.get(a).unwrap();
                let y = structural.get(b).unwrap();
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (nx * ny)
            };
            let top_mean = |mut v: Vec<f64>| -> f64 {
                v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let used = k.min(v.len());
                v[..used].iter().sum::<f64>() / used as f64
            };
            let s_l: Vec<f64> = left
                .iter()
                .map(|&a| top_mean(right.iter().map(|&b| cos(a, b)).collect()))
                .collect();
            let s_r: Vec<f64> = right
                .iter()
                .map(|&b| top_mean(left.iter().map(|&a| cos(a, b)).collect()))
                .collect();
            let score =
                |i: usize, j: usize| 2.0 * cos(left[i], right[j]) - s_l[i] - s_r[j];
            let mut want = HashSet::new();
            for i in 0..left.len() {
                let mut bj = 0;
                for j in 1..right.len() {
                    if score(i, j) > score(i, bj) {
                        bj = j;
                    }
                }
                let mut bi = 0;
                for ii in 1..left.len() {
                    if score(ii, bj) > score(bi, bj) {
                        bi = ii;
                    }
                }
                if bi == i {
                    want.insert((left[i], right[bj]));
                }
            }
            assert_eq!(got, want, "K = {k}");
        }
    }

    #[test]
    fn proposals_are_symmetric_in_language_order() {
        let corpus = bilingual(8, 11);
        let structural = random_embeddings(&corpus, 4, 77);
        let cfg = struct_only(3);
        let ab: HashSet<(usize, usize)> =
            propose_pairs(&corpus, 0, 1, &structural, &no_text(), &cfg, &HashSet::new())
                .unwrap()
                .into_iter()
                .map(|c| {
                    let (x, y) = (c.left.global_id, c.right.global_id);
                    (x.min(y), x.max(y))
                })
                .collect();
        let ba: HashSet<(usize, usize)> =
            propose_pairs(&corpus, 1, 0, &structural, &no_text(), &cfg, &HashSet::new())
                .unwrap()
                .into_iter()
                .map(|c| {
                    let (x, y) = (c.left.global_id, c.right.global_id);
                    (x.min(y), x.max(y))
                })
                .collect();
        assert_eq!(ab, ba);
        assert!(!ab.is_empty());
    }

    #[test]
    fn counterpart_text_vectors_recover_ground_truth() {
        // Three latent entities, identical text vectors per counterpart.
        let corpus = bilingual(3, 3);
        let latent = [
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mut vectors = HashMap::new();
        for l in 0..3 {
            vectors.insert(l, latent[l].clone()); // a_l
            vectors.insert(3 + l, latent[l].clone()); // b_l
        }
        let text = TextEmbeddingStore::from_map(vectors).unwrap();
        let structural = ContextEmbeddings::from_map(0, HashMap::new());
        let cfg = text_only(1);
        let got = propose_pairs(&corpus, 0, 1, &structural, &text, &cfg, &HashSet::new()).unwrap();
        let keys: Vec<(usize, usize)> = got
            .iter()
            .map(|c| (c.left.global_id, c.right.global_id))
            .collect();
        assert_eq!(keys, vec![(0, 3), (1, 4), (2, 5)]);
        for c in &got {
            assert!((c.sim - 1.0).abs() < 1e-12);
        }

        // Already-active pairs are never re-proposed.
        let existing: HashSet<(usize, usize)> = keys.into_iter().collect();
        let again =
            propose_pairs(&corpus, 0, 1, &structural, &text, &cfg, &existing).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn equal_similarities_tie_break_to_one_pair() {
        // All-equal similarities: every entity's argmax is index 0 on the
        // other side, so exactly one mutual pair (the two first entities)
        // survives.
        let sims = SimilarityMatrix {
            left: vec![0, 1, 2],
            right: vec![3, 4],
            values: vec![0.5; 6],
        };
        let csls = CslsScores::new(&sims, 1).unwrap();
        assert_eq!(mutual_argmax(&sims, &csls), vec![(0, 0)]);
    }

    fn pair(corpus: &MultiKg, a: usize, b: usize) -> AlignmentPair {
        AlignmentPair::new(corpus.to_ref(a), corpus.to_ref(b), Provenance::Seed).unwrap()
    }

    #[test]
    fn alignment_loss_hand_cases() {
        let corpus = bilingual(2, 2);
        // Global ids: a0=0, a1=1, b0=2, b1=3.
        let positive = pair(&corpus, 0, 2);

        // Embeddings: d(a0, b0) = 1.0 (positive), d(a1, b0) = 0.2 (negative).
        let vecs: HashMap<usize, Vec<f64>> = HashMap::from([
            (0usize, vec![0.0, 0.0]),
            (1usize, vec![0.8, 0.0]),
            (2usize, vec![1.0, 0.0]),
            (3usize, vec![5.0, 5.0]),
        ]);
        let embed_from = |vecs: &HashMap<usize, Vec<f64>>| {
            let vecs = vecs.clone();
            move |rec: &mut Recording, id: usize| -> Result<DiffValue> {
                Ok(rec.constant_column(&vecs[&id]))
            }
        };

        // Positive distance 1.0, negative distance 0.2, margin 0.5 → 1.3.
        let contrasts = vec![ContrastPair {
            positive,
            negatives: vec![(corpus.to_ref(1), corpus.to_ref(2))],
        }];
        let mut rec = Recording::new();
        let loss = alignment_loss_terms(&mut rec, &contrasts, embed_from(&vecs), 0.5).unwrap();
        assert!((rec.scalar_value(loss) - 1.3).abs() < 1e-12);

        // Positive equal to negative → the margin itself.
        let contrasts = vec![ContrastPair {
            positive,
            negatives: vec![(corpus.to_ref(0), corpus.to_ref(2))],
        }];
        let mut rec = Recording::new();
        let loss = alignment_loss_terms(&mut rec, &contrasts, embed_from(&vecs), 0.5).unwrap();
        assert!((rec.scalar_value(loss) - 0.5).abs() < 1e-12);

        // Identical positive embeddings and a far negative → saturated 0.
        let snug: HashMap<usize, Vec<f64>> = HashMap::from([
            (0usize, vec![0.3, 0.3]),
            (2usize, vec![0.3, 0.3]),
            (1usize, vec![9.0, 0.0]),
            (3usize, vec![5.0, 5.0]),
        ]);
        let contrasts = vec![ContrastPair {
            positive,
            negatives: vec![(corpus.to_ref(1), corpus.to_ref(3))],
        }];
        let mut rec = Recording::new();
        let loss = alignment_loss_terms(&mut rec, &contrasts, embed_from(&snug), 0.5).unwrap();
        assert_eq!(rec.scalar_value(loss), 0.0);
    }

    #[test]
    fn negatives_replace_one_side_and_avoid_active_pairs() {
        let corpus = bilingual(5, 5);
        let positives = vec![pair(&corpus, 0, 5), pair(&corpus, 1, 6)];
        let active: HashSet<(usize, usize)> = positives.iter().map(|p| p.key()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut stats = AlignNegStats::default();
        let contrasts =
            draw_alignment_negatives(&positives, &corpus, &active, 3, &mut rng, &mut stats);
        assert_eq!(contrasts.len(), 2);
        assert_eq!(stats.drawn, 6);
        assert_eq!(stats.skipped, 0);
        for c in &contrasts {
            assert_eq!(c.negatives.len(), 3);
            for &(h, t) in &c.negatives {
                // Cross-language, unaligned, and exactly one side changed.
                assert_ne!(h.language, t.language);
                let key = (
                    h.global_id.min(t.global_id),
                    h.global_id.max(t.global_id),
                );
                assert!(!active.contains(&key));
                let keeps_left = h == c.positive.left;
                let keeps_right = t == c.positive.right;
                assert!(keeps_left ^ keeps_right);
            }
        }
    }

    #[test]
    fn singleton_languages_skip_with_counter() {
        let corpus = bilingual(1, 1);
        let positives = vec![pair(&corpus, 0, 1)];
        let active: HashSet<(usize, usize)> = positives.iter().map(|p| p.key()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut stats = AlignNegStats::default();
        let contrasts =
            draw_alignment_negatives(&positives, &corpus, &active, 2, &mut rng, &mut stats);
        assert_eq!(stats.skipped, 2);
        assert_eq!(stats.drawn, 0);
        assert!(contrasts[0].negatives.is_empty());

        // The self-contained loss surfaces the empty contrast set.
        let embeddings = random_embeddings(&corpus, 3, 2);
        let err = alignment_loss(
            &positives,
            &embeddings,
            &corpus,
            &active,
            1.0,
            1,
            &mut rng,
        )
        .err()
        .unwrap();
        assert!(err.to_string().contains("no contrast terms"), "{err}");
    }

    #[test]
    fn loss_gradients_pass_finite_difference_check() {
        // ≤ 10 entities across two languages, embeddings as leaves.
        let corpus = bilingual(4, 4);
        let positives = vec![pair(&corpus, 0, 4), pair(&corpus, 1, 5), pair(&corpus, 2, 6)];
        let active: HashSet<(usize, usize)> = positives.iter().map(|p| p.key()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut stats = AlignNegStats::default();
        let contrasts =
            draw_alignment_negatives(&positives, &corpus, &active, 2, &mut rng, &mut stats);

        let dim = 4;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for g in 0..corpus.total_entities() {
            tensors.insert(
                embedding_param_name(g),
                Tensor::randn(dim, 1, 1.0, &mut rng),
            );
        }
        let run = |params: &BTreeMap<String, Tensor>| -> Result<(f64, BTreeMap<String, Tensor>)> {
            let mut rec = Recording::new();
            let mut handles: HashMap<usize, DiffValue> = HashMap::new();
            let loss = alignment_loss_terms(
                &mut rec,
                &contrasts,
                |rec, id| {
                    if let Some(h) = handles.get(&id) {
                        return Ok(*h);
                    }
                    let name = embedding_param_name(id);
                    let h = rec.param(&name, &params[&name])?;
                    handles.insert(id, h);
                    Ok(h)
                },
                1.0,
            )?;
            let value = rec.scalar_value(loss);
            let grads = rec.backward(loss)?;
            Ok((value, grads))
        };
        let (_, grads) = run(&tensors).unwrap();
        let report = finite_diff_check(&tensors, &grads, 123, |p| Ok(run(p)?.0)).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {} at {}[{}]",
            report.max_rel_error,
            report.worst_param,
            report.worst_index
        );
    }

    #[test]
    fn perfect_embeddings_recover_masked_pairs_at_rank_one() {
        let corpus = bilingual(4, 4);
        // Counterparts share a one-hot direction; strangers are orthogonal.
        let mut vecs = HashMap::new();
        for l in 0..4usize {
            let mut v = vec![0.0; 4];
            v[l] = 1.0;
            vecs.insert(l, v.clone());
            vecs.insert(4 + l, v);
        }
        let structural = ContextEmbeddings::from_map(4, vecs);
        let masked = vec![pair(&corpus, 0, 4), pair(&corpus, 2, 6)];
        let report = recovery_report(
            &masked,
            &structural,
            &no_text(),
            &struct_only(2),
            &corpus,
        )
        .unwrap();
        assert_eq!(report.n, 4); // two queries per masked pair
        assert_eq!(report.hits1, 1.0);
        assert_eq!(report.hits10, 1.0);
        assert_eq!(report.mrr, 1.0);
    }

    #[test]
    fn store_round_trips_and_validates() {
        let corpus = bilingual(3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text_embeddings.jsonl");
        let store = TextEmbeddingStore::from_map(HashMap::from([
            (0usize, vec![0.25, -1.5]),
            (3usize, vec![1.0, 2.0]),
        ]))
        .unwrap();
        store.write(&path, &corpus).unwrap();
        let loaded = TextEmbeddingStore::load(&path, &corpus).unwrap();
        assert_eq!(loaded.dim(), 2);
        assert_eq!(loaded.len(), 2);
        assert!(loaded.covers(0) && loaded.covers(3));
        assert!(!loaded.covers(1));
        assert_eq!(loaded.get(0).unwrap(), &[0.25, -1.5]);

        // Dense features for the encoder: uncovered slots stay empty.
        let features = loaded.to_text_features(&corpus);
        assert_eq!(features.dim, 2);
        assert!(features.covers(0) && !features.covers(2));

        // Ragged dimensions are rejected up front.
        let err = TextEmbeddingStore::from_map(HashMap::from([
            (0usize, vec![1.0]),
            (1usize, vec![1.0, 2.0]),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("length"), "{err}");

        // Unknown entities are line-numbered parse errors.
        std::fs::write(
            &path,
            "{\"lang\":\"la\",\"entity\":\"nope\",\"vec\":[1.0,2.0]}\n",
        )
        .unwrap();
        let err = TextEmbeddingStore::load(&path, &corpus).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn candidate_report_appends_with_header_once() {
        let corpus = bilingual(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proposed_pairs.tsv");
        let cand = CandidatePair {
            left: corpus.to_ref(0),
            right: corpus.to_ref(2),
            csls: 0.5,
            sim: 0.75,
        };
        append_candidates(&path, &corpus, &[cand], 1).unwrap();
        append_candidates(&path, &corpus, &[cand], 2).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], "la\ta0\tlb\tb0\t0.500000\t0.750000\t1");
        assert!(lines[2].ends_with("\t2"));
    }

    #[test]
    fn candidate_report_round_trips_through_its_reader() {
        let corpus = bilingual(3, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proposed_pairs.tsv");
        let written = [
            CandidatePair {
                left: corpus.to_ref(0),
                right: corpus.to_ref(4),
                csls: 0.125,
                sim: 0.5,
            },
            CandidatePair {
                left: corpus.to_ref(2),
                right: corpus.to_ref(3),
                csls: -1.5,
                sim: 0.25,
            },
        ];
        append_candidates(&path, &corpus, &written[..1], 1).unwrap();
        append_candidates(&path, &corpus, &written[1..], 2).unwrap();

        let rows = read_candidates(&path, &corpus).unwrap();
        assert_eq!(rows.len(), 2);
        // The chosen scores are exact at six decimals, so the round trip
        // reproduces them bit-for-bit here.
        assert_eq!(rows[0], (written[0], 1));
        assert_eq!(rows[1], (written[1], 2));

        std::fs::write(&path, "la\ta0\tlb\tb0\tnot-a-number\t0.5\t1\n").unwrap();
        let err = read_candidates(&path, &corpus).err().unwrap();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
