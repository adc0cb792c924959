//! Translational scoring and link-prediction evaluation.
//!
//! Facts are scored with a translation decoder: a triple `(h, r, t)` gets
//! score `-‖e_h + v_r - e_t‖₂`, where `v_r` is a learned per-relation
//! displacement and `e_h`, `e_t` come from the graph encoder. Higher is
//! better; an exact translation scores `0`.
//!
//! The module provides:
//! - [`DecoderParams`] and its relation-vector table (the cross-lingual
//!   alignment relation deliberately has no vector and cannot be scored),
//! - margin-ranking training losses over corrupted negatives
//!   ([`kgc_loss`], [`kgc_loss_terms`]),
//! - same-language negative sampling ([`negative_sample`]),
//! - filtered ranking ([`rank_query`]) and corpus evaluation ([`evaluate`])
//!   producing per-language MRR / Hits@1 / Hits@10.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::{DiffValue, Recording, Tensor};
use crate::encoder::ContextEmbeddings;
use crate::error::{Error, Result};
use crate::graph::{EntityRef, MultiKg, RelationRef, Triple};

/// How many times [`negative_sample`] redraws a corrupted triple that
/// collides with a training fact before giving up and keeping the last draw.
pub const NEGATIVE_RETRY_LIMIT: usize = 100;

/// Number of top-ranked candidates counted by the Hits@k metrics.
pub const HITS_AT: (usize, usize) = (1, 10);

/// Configuration of the translation decoder.
///
/// The decoder owns one displacement vector per scorable relation, stored as
/// columns of a single `(dim, R)` tensor where `R` excludes the alignment
/// relation. Alignment edges exist only to carry messages in the encoder;
/// scoring one is an error.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct DecoderParams {
    /// Name prefix of the decoder tensors inside the shared parameter map.
    pub prefix: String,
    /// Embedding dimension; must match the encoder output dimension.
    pub dim: usize,
    /// Ranking margin used by the hinge losses. Strictly positive.
    pub margin: f64,
    /// Number of scorable relations (alignment excluded).
    pub num_relations: usize,
}

impl DecoderParams {
    /// Builds a decoder description for `corpus` with the given margin.
    pub fn new(prefix: &str, dim: usize, margin: f64, corpus: &MultiKg) -> Result<Self> {
        if !(margin > 0.0) {
            return Err(Error::invalid(format!(
                "ranking margin must be strictly positive, got {margin}"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("decoder dimension must be positive"));
        }
        // The alignment relation is always interned last, so the scorable
        // relations are exactly the ids below it.
        let num_relations = corpus.num_relations() - 1;
        if num_relations == 0 {
            return Err(Error::invalid(
                "corpus has no scorable relations (only the alignment relation)",
            ));
        }
        Ok(DecoderParams {
            prefix: prefix.to_string(),
            dim,
            margin,
            num_relations,
        })
    }

    /// Name of the relation-displacement table in the parameter map.
    pub fn rel_vecs_name(&self) -> String {
        format!("{}.rel_vecs", self.prefix)
    }

    /// Fresh decoder tensors: one `(dim, R)` table of small random
    /// displacements.
    pub fn init_tensors<R: Rng>(&self, rng: &mut R) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(
            self.rel_vecs_name(),
            Tensor::randn(self.dim, self.num_relations, 0.02, rng),
        );
        out
    }

    /// Checks that `rel` is scorable and returns its column index.
    fn column_of(&self, rel: RelationRef) -> Result<usize> {
        if rel.is_align {
            return Err(Error::invalid(
                "the alignment relation has no decoder vector and cannot be scored",
            ));
        }
        if rel.id >= self.num_relations {
            return Err(Error::invalid(format!(
                "relation id {} out of range for decoder with {} relations",
                rel.id, self.num_relations
            )));
        }
        Ok(rel.id)
    }

    /// Borrows the relation table from a parameter map, validating its shape.
    pub fn rel_table<'t>(&self, tensors: &'t BTreeMap<String, Tensor>) -> Result<&'t Tensor> {
        let name = self.rel_vecs_name();
        let table = tensors
            .get(&name)
            .ok_or_else(|| Error::invalid(format!("missing decoder tensor `{name}`")))?;
        if table.rows != self.dim || table.cols != self.num_relations {
            return Err(Error::invalid(format!(
                "decoder tensor `{name}` has shape ({}, {}), expected ({}, {})",
                table.rows, table.cols, self.dim, self.num_relations
            )));
        }
        Ok(table)
    }
}

/// Plain-value triple score `-‖e_h + v_r - e_t‖₂`.
///
/// `e_h` and `e_t` are entity embeddings of length `decoder.dim`. Returns an
/// error when the relation is the alignment relation or out of range.
pub fn triple_score(
    e_h: &[f64],
    rel: RelationRef,
    e_t: &[f64],
    decoder: &DecoderParams,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<f64> {
    let col = decoder.column_of(rel)?;
    let table = decoder.rel_table(tensors)?;
    if e_h.len() != decoder.dim || e_t.len() != decoder.dim {
        return Err(Error::invalid(format!(
            "entity embeddings of length {} / {} do not match decoder dimension {}",
            e_h.len(),
            e_t.len(),
            decoder.dim
        )));
    }
    let mut sq = 0.0;
    for i in 0..decoder.dim {
        let diff = e_h[i] + table.get(i, col) - e_t[i];
        sq += diff * diff;
    }
    Ok(-sq.sqrt())
}

/// Differentiable triple score on an existing recording.
///
/// `e_h` and `e_t` are `(dim, 1)` handles (typically encoder outputs) and
/// `rel_table` is the registered decoder table. The score is
/// `-‖e_h + v_r - e_t‖₂`, so gradients flow into both entity embeddings and
/// the relation displacement.
pub fn triple_score_diff(
    rec: &mut Recording,
    e_h: DiffValue,
    rel: RelationRef,
    e_t: DiffValue,
    rel_table: DiffValue,
    decoder: &DecoderParams,
) -> Result<DiffValue> {
    let col = decoder.column_of(rel)?;
    let v_r = rec.col(rel_table, col)?;
    let translated = rec.add(e_h, v_r)?;
    let dist = rec.l2_norm_diff(translated, e_t)?;
    Ok(rec.scale(dist, -1.0))
}

/// Running counters for negative sampling.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NegSampleStats {
    /// Corrupted triples returned after the retry limit without finding one
    /// outside the training set.
    pub fallbacks: u64,
    /// Total negatives drawn.
    pub drawn: u64,
}

/// Draws one corrupted triple for `triple` by replacing its head or tail
/// (an even coin) with a uniform entity from the same language.
///
/// Candidates that already appear in the training set are redrawn up to
/// [`NEGATIVE_RETRY_LIMIT`] times; if every retry collides, the last
/// candidate is returned anyway and `stats.fallbacks` is bumped so the
/// caller can surface how often that happened.
pub fn negative_sample<R: Rng>(
    triple: &Triple,
    corpus: &MultiKg,
    rng: &mut R,
    stats: &mut NegSampleStats,
) -> Result<Triple> {
    if triple.relation.is_align {
        return Err(Error::invalid(
            "negative sampling corrupts knowledge facts, not alignment edges",
        ));
    }
    stats.drawn += 1;
    let mut last = *triple;
    for _ in 0..NEGATIVE_RETRY_LIMIT {
        let corrupt_head = rng.random_range(0..2u8) == 0;
        let language = if corrupt_head {
            triple.head.language
        } else {
            triple.tail.language
        };
        let n = corpus.language(language).entity_count();
        if n < 2 {
            return Err(Error::invalid(format!(
                "language `{}` has fewer than two entities; cannot corrupt triples",
                corpus.language(language).name
            )));
        }
        let replacement = corpus.entity_ref(language, rng.random_range(0..n));
        let candidate = if corrupt_head {
            Triple {
                head: replacement,
                ..*triple
            }
        } else {
            Triple {
                tail: replacement,
                ..*triple
            }
        };
        if !corpus.train_contains(candidate.key()) {
            return Ok(candidate);
        }
        last = candidate;
    }
    stats.fallbacks += 1;
    Ok(last)
}

/// One positive fact paired with its corrupted negatives.
#[derive(Debug, Clone)]
pub struct RankedPair {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

/// Draws `negatives_per_positive` corrupted triples for every fact in
/// `batch`.
pub fn draw_negatives<R: Rng>(
    batch: &[Triple],
    corpus: &MultiKg,
    negatives_per_positive: usize,
    rng: &mut R,
    stats: &mut NegSampleStats,
) -> Result<Vec<RankedPair>> {
    batch
        .iter()
        .map(|t| {
            let negatives = (0..negatives_per_positive)
                .map(|_| negative_sample(t, corpus, rng, stats))
                .collect::<Result<Vec<_>>>()?;
            Ok(RankedPair {
                positive: *t,
                negatives,
            })
        })
        .collect()
}

/// Margin-ranking loss over pre-paired positives and negatives, expressed on
/// an existing recording.
///
/// `embed` maps a global entity id to its `(dim, 1)` handle; the loss is
/// `Σ max(0, score(neg) - score(pos) + margin)` over every pair, so it is
/// non-negative, zero exactly when every negative is beaten by at least the
/// margin, and differentiable through both the embeddings and the decoder
/// table.
pub fn kgc_loss_terms(
    rec: &mut Recording,
    pairs: &[RankedPair],
    mut embed: impl FnMut(&mut Recording, usize) -> Result<DiffValue>,
    rel_table: DiffValue,
    decoder: &DecoderParams,
) -> Result<DiffValue> {
    let mut terms = Vec::new();
    for pair in pairs {
        let pos = score_one(rec, &pair.positive, &mut embed, rel_table, decoder)?;
        for negative in &pair.negatives {
            let neg = score_one(rec, negative, &mut embed, rel_table, decoder)?;
            let gap = rec.sub(neg, pos)?;
            terms.push(rec.hinge(gap, decoder.margin)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::invalid("ranking loss over an empty batch"));
    }
    rec.sum_scalars(&terms)
}

fn score_one(
    rec: &mut Recording,
    triple: &Triple,
    embed: &mut impl FnMut(&mut Recording, usize) -> Result<DiffValue>,
    rel_table: DiffValue,
    decoder: &DecoderParams,
) -> Result<DiffValue> {
    let e_h = embed(rec, triple.head.global_id)?;
    let e_t = embed(rec, triple.tail.global_id)?;
    triple_score_diff(rec, e_h, triple.relation, e_t, rel_table, decoder)
}

/// A self-contained ranking loss: its own recording with the touched entity
/// embeddings and the decoder table registered as trainable leaves.
pub struct KgcLossBundle {
    pub rec: Recording,
    pub loss: DiffValue,
    pub stats: NegSampleStats,
}

/// Name under which [`kgc_loss`] registers the embedding of entity `id`.
pub fn embedding_param_name(global_id: usize) -> String {
    format!("emb.e{global_id}")
}

/// Margin-ranking loss over `batch` with freshly drawn same-language
/// negatives (one per positive).
///
/// Entity embeddings are looked up in `embeddings` and registered as leaf
/// parameters named by [`embedding_param_name`], alongside the decoder
/// table, so `backward` yields gradients with respect to every touched
/// embedding and the relation displacements.
pub fn kgc_loss<R: Rng>(
    batch: &[Triple],
    embeddings: &ContextEmbeddings,
    decoder: &DecoderParams,
    tensors: &BTreeMap<String, Tensor>,
    corpus: &MultiKg,
    rng: &mut R,
) -> Result<KgcLossBundle> {
    if batch.is_empty() {
        return Err(Error::invalid("ranking loss over an empty batch"));
    }
    let mut stats = NegSampleStats::default();
    let pairs = draw_negatives(batch, corpus, 1, rng, &mut stats)?;

    let mut rec = Recording::new();
    let table = rec.param(&decoder.rel_vecs_name(), decoder.rel_table(tensors)?)?;
    let mut handles: HashMap<usize, DiffValue> = HashMap::new();
    let loss = kgc_loss_terms(
        &mut rec,
        &pairs,
        |rec, id| {
            if let Some(h) = handles.get(&id) {
                return Ok(*h);
            }
            let vec = embeddings.require(id)?;
            let h = rec.param(&embedding_param_name(id), &Tensor::column(vec.to_vec()))?;
            handles.insert(id, h);
            Ok(h)
        },
        table,
        decoder,
    )?;
    Ok(KgcLossBundle { rec, loss, stats })
}

/// Which slot of a triple a ranking query asks the model to fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum QueryDirection {
    /// Given `(h, r, ?)`, rank candidate tails.
    PredictTail,
    /// Given `(?, r, t)`, rank candidate heads.
    PredictHead,
}

/// One link-prediction query: a known entity, a relation, and the slot to
/// fill. Candidates are all entities of the answer's language.
#[derive(Debug, Clone, Copy)]
pub struct Query {
    /// The given entity: the head when predicting tails, the tail when
    /// predicting heads.
    pub known: EntityRef,
    pub relation: RelationRef,
    pub direction: QueryDirection,
}

impl Query {
    /// Tail-prediction query for a test triple.
    pub fn predict_tail(triple: &Triple) -> Self {
        Query {
            known: triple.head,
            relation: triple.relation,
            direction: QueryDirection::PredictTail,
        }
    }

    /// The full triple formed by answering this query with `candidate`.
    fn completed(&self, candidate: EntityRef) -> Triple {
        match self.direction {
            QueryDirection::PredictTail => Triple {
                head: self.known,
                relation: self.relation,
                tail: candidate,
            },
            QueryDirection::PredictHead => Triple {
                head: candidate,
                relation: self.relation,
                tail: self.known,
            },
        }
    }
}

/// Filtered optimistic rank of `answer` among all entities of its language.
///
/// Every entity of the answer's language is scored as the missing slot.
/// Candidates other than the answer whose completed triple is already a
/// known fact (train, valid or test) are excluded, so unrelated true facts
/// never push the answer down. The rank is `1 +` the number of surviving
/// candidates scoring strictly higher than the answer; ties do not hurt.
pub fn rank_query(
    query: &Query,
    answer: EntityRef,
    embeddings: &ContextEmbeddings,
    decoder: &DecoderParams,
    tensors: &BTreeMap<String, Tensor>,
    corpus: &MultiKg,
) -> Result<usize> {
    let known_vec = embeddings.require(query.known.global_id)?;
    let answer_vec = embeddings.require(answer.global_id)?;
    let answer_score = match query.direction {
        QueryDirection::PredictTail => {
            triple_score(known_vec, query.relation, answer_vec, decoder, tensors)?
        }
        QueryDirection::PredictHead => {
            triple_score(answer_vec, query.relation, known_vec, decoder, tensors)?
        }
    };

    let range = corpus.global_range(answer.language);
    if !range.contains(&answer.global_id) {
        return Err(Error::invalid(format!(
            "query answer {} is not an entity of its own language",
            answer.global_id
        )));
    }
    let mut higher = 0usize;
    for global in range {
        if global == answer.global_id {
            continue;
        }
        let candidate = corpus.to_ref(global);
        if corpus.known_fact(self_key(query, candidate)) {
            continue;
        }
        let vec = embeddings.require(global)?;
        let score = match query.direction {
            QueryDirection::PredictTail => {
                triple_score(known_vec, query.relation, vec, decoder, tensors)?
            }
            QueryDirection::PredictHead => {
                triple_score(vec, query.relation, known_vec, decoder, tensors)?
            }
        };
        if score > answer_score {
            higher += 1;
        }
    }
    Ok(1 + higher)
}

fn self_key(query: &Query, candidate: EntityRef) -> (usize, usize, usize) {
    query.completed(candidate).key()
}

/// Ranking quality over one set of queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RankSummary {
    /// Mean reciprocal rank.
    pub mrr: f64,
    /// Fraction of queries ranked first.
    pub hits1: f64,
    /// Fraction of queries ranked in the top ten.
    pub hits10: f64,
    /// Number of queries.
    pub n: usize,
}

impl RankSummary {
    /// Aggregates a list of ranks (empty lists yield all-zero metrics).
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return RankSummary {
                mrr: 0.0,
                hits1: 0.0,
                hits10: 0.0,
                n: 0,
            };
        }
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits1 = ranks.iter().filter(|&&r| r <= HITS_AT.0).count() as f64 / n;
        let hits10 = ranks.iter().filter(|&&r| r <= HITS_AT.1).count() as f64 / n;
        RankSummary {
            mrr,
            hits1,
            hits10,
            n: ranks.len(),
        }
    }
}

/// Link-prediction metrics, split by the language of the predicted entity.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Metrics {
    /// Per-language summaries, keyed by language name in sorted order.
    pub per_language: BTreeMap<String, RankSummary>,
    /// Unweighted mean of the per-language summaries; its `n` is the total
    /// query count.
    pub macro_avg: RankSummary,
}

impl Metrics {
    fn from_language_ranks(by_language: BTreeMap<String, Vec<usize>>) -> Self {
        let per_language: BTreeMap<String, RankSummary> = by_language
            .iter()
            .map(|(name, ranks)| (name.clone(), RankSummary::from_ranks(ranks)))
            .collect();
        let k = per_language.len() as f64;
        let total: usize = per_language.values().map(|s| s.n).sum();
        let macro_avg = if per_language.is_empty() {
            RankSummary::from_ranks(&[])
        } else {
            RankSummary {
                mrr: per_language.values().map(|s| s.mrr).sum::<f64>() / k,
                hits1: per_language.values().map(|s| s.hits1).sum::<f64>() / k,
                hits10: per_language.values().map(|s| s.hits10).sum::<f64>() / k,
                n: total,
            }
        };
        Metrics {
            per_language,
            macro_avg,
        }
    }

    /// JSON object mapping each language name (plus `"macro_avg"`) to its
    /// summary. Key order is deterministic.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (name, summary) in &self.per_language {
            map.insert(name.clone(), serde_json::to_value(summary).unwrap());
        }
        map.insert(
            "macro_avg".to_string(),
            serde_json::to_value(self.macro_avg).unwrap(),
        );
        serde_json::Value::Object(map)
    }

    /// Fixed-width text table with four-decimal metric columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>8} {:>8}",
            "language", "mrr", "hits@1", "hits@10", "queries"
        );
        for (name, s) in &self.per_language {
            let _ = writeln!(
                out,
                "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8}",
                name, s.mrr, s.hits1, s.hits10, s.n
            );
        }
        let s = self.macro_avg;
        let _ = writeln!(
            out,
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8}",
            "macro_avg", s.mrr, s.hits1, s.hits10, s.n
        );
        out
    }
}

/// Evaluates tail prediction over `test` with filtered optimistic ranking.
///
/// Each triple becomes one `(h, r, ?)` query; ranks are grouped by the
/// language of the predicted tail. Queries are scored in parallel but
/// aggregated in input order, so the result is deterministic.
pub fn evaluate(
    test: &[Triple],
    embeddings: &ContextEmbeddings,
    decoder: &DecoderParams,
    tensors: &BTreeMap<String, Tensor>,
    corpus: &MultiKg,
) -> Result<Metrics> {
    let ranks: Vec<(usize, usize)> = test
        .par_iter()
        .map(|triple| {
            let query = Query::predict_tail(triple);
            let rank = rank_query(&query, triple.tail, embeddings, decoder, tensors, corpus)?;
            Ok((triple.tail.language, rank))
        })
        .collect::<Result<_>>()?;
    let mut by_language: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (language, rank) in ranks {
        let name = corpus.language(language).name.clone();
        by_language.entry(name).or_default().push(rank);
    }
    Ok(Metrics::from_language_ranks(by_language))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check;
    use crate::graph::{corpus_from_labels, corpus_with_entities, CorpusBuilder, RawLanguage, RawTriple};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Single-language corpus over entities `e0..e{n}` (all interned, even
    /// if no triple mentions them) with the given train triples by local
    /// index; relation 0 is `r0`, anything else `r1`.
    fn tiny_corpus(n: usize, train: &[(usize, usize, usize)]) -> Arc<MultiKg> {
        let entities: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
        let mut builder = CorpusBuilder::new();
        builder
            .add_language(RawLanguage {
                name: "l0".to_string(),
                train: train
                    .iter()
                    .map(|&(h, r, t)| {
                        RawTriple::new(
                            entities[h].clone(),
                            if r == 0 { "r0" } else { "r1" },
                            entities[t].clone(),
                        )
                    })
                    .collect(),
                valid: Vec::new(),
                test: Vec::new(),
                extra_entities: entities.clone(),
            })
            .unwrap();
        Arc::new(builder.build().unwrap())
    }

    fn embeddings_from(vecs: &[Vec<f64>]) -> ContextEmbeddings {
        let dim = vecs[0].len();
        let map: HashMap<usize, Vec<f64>> = vecs.iter().cloned().enumerate().collect();
        ContextEmbeddings::from_map(dim, map)
    }

    fn decoder_with_columns(
        corpus: &MultiKg,
        margin: f64,
        columns: &[Vec<f64>],
    ) -> (DecoderParams, BTreeMap<String, Tensor>) {
        let dim = columns[0].len();
        let decoder = DecoderParams::new("dec", dim, margin, corpus).unwrap();
        assert_eq!(decoder.num_relations, columns.len());
        let mut table = Tensor::zeros(dim, columns.len());
        for (c, col) in columns.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                table.set(r, c, v);
            }
        }
        let mut tensors = BTreeMap::new();
        tensors.insert(decoder.rel_vecs_name(), table);
        (decoder, tensors)
    }

    #[test]
    fn exact_translation_scores_zero() {
        let corpus = tiny_corpus(2, &[(0, 0, 1)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![1.0, -2.0, 0.5]]);
        let rel = corpus.relation_ref(0);
        let e_h = [0.2, 0.4, -1.0];
        let e_t = [1.2, -1.6, -0.5];
        let score = triple_score(&e_h, rel, &e_t, &decoder, &tensors).unwrap();
        assert!(score.abs() < 1e-12, "score {score}");
    }

    #[test]
    fn three_four_five_displacement_scores_minus_five() {
        let corpus = tiny_corpus(2, &[(0, 0, 1)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![0.0, 0.0]]);
        let rel = corpus.relation_ref(0);
        // e_h + v_r - e_t = (3, 4), so the distance is 5.
        let score = triple_score(&[3.0, 4.0], rel, &[0.0, 0.0], &decoder, &tensors).unwrap();
        assert!((score + 5.0).abs() < 1e-12, "score {score}");
    }

    #[test]
    fn score_matches_dense_oracle_and_is_translation_invariant() {
        let corpus = tiny_corpus(2, &[(0, 0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 4;
        let col: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[col.clone()]);
        let rel = corpus.relation_ref(0);
        let e_h: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e_t: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let oracle = -(0..dim)
            .map(|i| (e_h[i] + col[i] - e_t[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let score = triple_score(&e_h, rel, &e_t, &decoder, &tensors).unwrap();
        assert!((score - oracle).abs() < 1e-12);

        // Adding a common offset to both entity embeddings cancels out.
        let shift = 3.25;
        let e_h2: Vec<f64> = e_h.iter().map(|v| v + shift).collect();
        let e_t2: Vec<f64> = e_t.iter().map(|v| v + shift).collect();
        let shifted = triple_score(&e_h2, rel, &e_t2, &decoder, &tensors).unwrap();
        assert!((score - shifted).abs() < 1e-12);
    }

    #[test]
    fn alignment_relation_is_not_scorable() {
        let corpus = tiny_corpus(2, &[(0, 0, 1)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![0.0]]);
        let err =
            triple_score(&[0.0], corpus.align_relation(), &[0.0], &decoder, &tensors).unwrap_err();
        assert!(err.to_string().contains("alignment"), "{err}");
    }

    #[test]
    fn margin_must_be_positive() {
        let corpus = tiny_corpus(2, &[(0, 0, 1)]);
        assert!(DecoderParams::new("dec", 3, 0.0, &corpus).is_err());
        assert!(DecoderParams::new("dec", 3, -0.1, &corpus).is_err());
        assert!(DecoderParams::new("dec", 3, 0.3, &corpus).is_ok());
    }

    #[test]
    fn negatives_stay_in_language_and_avoid_train_set() {
        // Two languages so a corrupted head/tail must stay on its own side.
        let corpus = corpus_with_entities(&[
            (
                "l0",
                &["a0", "a1", "a2", "a3"],
                &[("a0", "r0", "a1"), ("a1", "r0", "a2")],
            ),
            ("l1", &["b0", "b1", "b2"], &[("b0", "r0", "b1")]),
        ])
        .unwrap();
        let triple = corpus.language(0).train[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut stats = NegSampleStats::default();
        for _ in 0..200 {
            let neg = negative_sample(&triple, &corpus, &mut rng, &mut stats).unwrap();
            assert_eq!(neg.head.language, 0);
            assert_eq!(neg.tail.language, 0);
            assert_eq!(neg.relation.id, triple.relation.id);
            assert!(!corpus.train_contains(neg.key()));
            // Exactly one endpoint changed.
            let head_changed = neg.head != triple.head;
            let tail_changed = neg.tail != triple.tail;
            assert!(head_changed ^ tail_changed);
        }
        assert_eq!(stats.fallbacks, 0);
        assert_eq!(stats.drawn, 200);
    }

    #[test]
    fn saturated_language_falls_back_with_counter() {
        // Every possible (h, r0, t) combination over {a, b} is a training
        // fact, so no corruption can escape the train set.
        let corpus = corpus_from_labels(&[(
            "l0",
            &[
                ("a", "r0", "a"),
                ("a", "r0", "b"),
                ("b", "r0", "a"),
                ("b", "r0", "b"),
            ],
        )])
        .unwrap();
        let triple = corpus.language(0).train[0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut stats = NegSampleStats::default();
        let neg = negative_sample(&triple, &corpus, &mut rng, &mut stats).unwrap();
        assert!(corpus.train_contains(neg.key()));
        assert_eq!(stats.fallbacks, 1);
    }

    #[test]
    fn loss_is_margin_when_positive_equals_negative() {
        // With identical scores the hinge reduces to the margin itself.
        let corpus = tiny_corpus(3, &[(0, 0, 1)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![0.0, 0.0]]);
        let positive = corpus.language(0).train[0];
        let pairs = vec![RankedPair {
            positive,
            negatives: vec![positive],
        }];
        let mut rec = Recording::new();
        let table = rec
            .param("dec.rel_vecs", &tensors[&decoder.rel_vecs_name()])
            .unwrap();
        let embs = embeddings_from(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]);
        let loss = kgc_loss_terms(
            &mut rec,
            &pairs,
            |rec, id| Ok(rec.constant_column(embs.require(id).unwrap())),
            table,
            &decoder,
        )
        .unwrap();
        assert!((rec.scalar_value(loss) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_hinge_case() {
        // One positive scoring -1 and one negative scoring -2 with margin
        // 0.3: the hinge is max(0, -2 - (-1) + 0.3) = 0. Flip the pair and
        // the hinge is max(0, -1 - (-2) + 0.3) = 1.3.
        let corpus = tiny_corpus(3, &[(0, 0, 1), (0, 0, 2)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![0.0]]);
        // e0 = 0, e1 = 1, e2 = 2 on a line: (e0, r0, e1) scores -1 and
        // (e0, r0, e2) scores -2.
        let embs = embeddings_from(&[vec![0.0], vec![1.0], vec![2.0]]);
        let train = &corpus.language(0).train;
        let near = train[0];
        let far = train[1];
        assert_eq!(near.tail.local_id, 1);
        assert_eq!(far.tail.local_id, 2);

        for (pos, neg, want) in [(near, far, 0.0), (far, near, 1.3)] {
            let pairs = vec![RankedPair {
                positive: pos,
                negatives: vec![neg],
            }];
            let mut rec = Recording::new();
            let table = rec
                .param("dec.rel_vecs", &tensors[&decoder.rel_vecs_name()])
                .unwrap();
            let loss = kgc_loss_terms(
                &mut rec,
                &pairs,
                |rec, id| Ok(rec.constant_column(embs.require(id).unwrap())),
                table,
                &decoder,
            )
            .unwrap();
            let got = rec.scalar_value(loss);
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn loss_gradients_pass_finite_difference_check() {
        let corpus = corpus_from_labels(&[(
            "l0",
            &[("a", "r0", "b"), ("b", "r1", "c"), ("c", "r0", "d")],
        )])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 5;
        let decoder = DecoderParams::new("dec", dim, 0.3, &corpus).unwrap();
        let mut tensors = decoder.init_tensors(&mut rng);
        for e in 0..4 {
            tensors.insert(embedding_param_name(e), Tensor::randn(dim, 1, 1.0, &mut rng));
        }
        // Fixed positive/negative pairing so the loss is a deterministic
        // function of the parameter map.
        let train: Vec<Triple> = corpus.train_triples().copied().collect();
        let mut neg_rng = ChaCha8Rng::seed_from_u64(5);
        let mut stats = NegSampleStats::default();
        let pairs = draw_negatives(&train, &corpus, 2, &mut neg_rng, &mut stats).unwrap();

        let run = |params: &BTreeMap<String, Tensor>| -> Result<(f64, BTreeMap<String, Tensor>)> {
            let mut rec = Recording::new();
            let table = rec.param(
                &decoder.rel_vecs_name(),
                &params[&decoder.rel_vecs_name()],
            )?;
            let mut handles: HashMap<usize, DiffValue> = HashMap::new();
            let loss = kgc_loss_terms(
                &mut rec,
                &pairs,
                |rec, id| {
                    if let Some(h) = handles.get(&id) {
                        return Ok(*h);
                    }
                    let name = embedding_param_name(id);
                    let h = rec.param(&name, &params[&name])?;
                    handles.insert(id, h);
                    Ok(h)
                },
                table,
                &decoder,
            )?;
            let value = rec.scalar_value(loss);
            let grads = rec.backward(loss)?;
            Ok((value, grads))
        };
        let (_, grads) = run(&tensors).unwrap();
        let report = finite_diff_check(&tensors, &grads, 99, |p| Ok(run(p)?.0)).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {} at {}[{}]",
            report.max_rel_error,
            report.worst_param,
            report.worst_index
        );
    }

    #[test]
    fn self_contained_loss_draws_negatives_and_yields_gradients() {
        let corpus = corpus_from_labels(&[(
            "l0",
            &[("a", "r0", "b"), ("b", "r0", "c"), ("d", "r0", "e")],
        )])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dim = 3;
        let decoder = DecoderParams::new("dec", dim, 0.3, &corpus).unwrap();
        let tensors = decoder.init_tensors(&mut rng);
        let vecs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let embeddings = embeddings_from(&vecs);
        let batch: Vec<Triple> = corpus.train_triples().copied().collect();
        let mut bundle =
            kgc_loss(&batch, &embeddings, &decoder, &tensors, &corpus, &mut rng).unwrap();
        let value = bundle.rec.scalar_value(bundle.loss);
        assert!(value >= 0.0);
        assert_eq!(bundle.stats.drawn, 3);
        let grads = bundle.rec.backward(bundle.loss).unwrap();
        assert!(grads.contains_key("dec.rel_vecs"));
        // Entities a and b appear in positives, so their embeddings are
        // registered leaves.
        assert!(grads.contains_key(&embedding_param_name(0)));
        assert!(grads.contains_key(&embedding_param_name(1)));
    }

    #[test]
    fn rank_counts_only_strictly_better_unfiltered_candidates() {
        // Entities on a line with a zero displacement: the nearest tail
        // ranks first.
        let corpus = tiny_corpus(4, &[(0, 0, 1), (0, 0, 3)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![0.0]]);
        let embs = embeddings_from(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let train = &corpus.language(0).train;
        // Query (e0, r0, ?) with answer e3 at distance 3. Candidates are
        // e1 (distance 1, but (e0, r0, e1) is a known fact, filtered),
        // e2 (distance 2, strictly better) and e0 (distance 0, strictly
        // better). Rank = 1 + 2 = 3.
        let far = train.iter().find(|t| t.tail.local_id == 3).unwrap();
        let rank = rank_query(
            &Query::predict_tail(far),
            far.tail,
            &embs,
            &decoder,
            &tensors,
            &corpus,
        )
        .unwrap();
        assert_eq!(rank, 3);

        // The near answer ranks behind only the head itself (distance 0).
        let near = train.iter().find(|t| t.tail.local_id == 1).unwrap();
        let rank = rank_query(
            &Query::predict_tail(near),
            near.tail,
            &embs,
            &decoder,
            &tensors,
            &corpus,
        )
        .unwrap();
        assert_eq!(rank, 2);
    }

    #[test]
    fn rank_matches_brute_force_oracle() {
        // Random embeddings over 20 entities; compare against a sort-based
        // oracle that filters known facts the same way.
        let n = 20;
        let train: Vec<(usize, usize, usize)> =
            vec![(0, 0, 1), (1, 0, 2), (2, 1, 3), (4, 0, 5), (6, 1, 7)];
        let corpus = tiny_corpus(n, &train);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 6;
        let decoder = DecoderParams::new("dec", dim, 0.3, &corpus).unwrap();
        let tensors = decoder.init_tensors(&mut rng);
        let vecs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let embs = embeddings_from(&vecs);

        for triple in &corpus.language(0).train {
            let rank = rank_query(
                &Query::predict_tail(triple),
                triple.tail,
                &embs,
                &decoder,
                &tensors,
                &corpus,
            )
            .unwrap();

            // Oracle: score every candidate, drop known facts other than the
            // answer, sort descending, and locate the answer's optimistic
            // position.
            let mut scored: Vec<(usize, f64)> = (0..n)
                .filter_map(|local| {
                    let cand = corpus.entity_ref(0, local);
                    let key = (triple.head.global_id, triple.relation.id, cand.global_id);
                    if cand != triple.tail && corpus.known_fact(key) {
                        return None;
                    }
                    let score = triple_score(
                        &vecs[triple.head.local_id],
                        triple.relation,
                        &vecs[local],
                        &decoder,
                        &tensors,
                    )
                    .unwrap();
                    Some((local, score))
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let answer_score = scored
                .iter()
                .find(|(local, _)| *local == triple.tail.local_id)
                .unwrap()
                .1;
            let oracle = scored.partition_point(|&(_, s)| s > answer_score) + 1;
            assert_eq!(rank, oracle, "triple {triple:?}");
        }
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let corpus = tiny_corpus(3, &[(0, 0, 1)]);
        let (decoder, tensors) = decoder_with_columns(&corpus, 0.3, &[vec![0.0]]);
        // Only two of the three entities have embeddings.
        let embs =
            ContextEmbeddings::from_map(1, HashMap::from([(0, vec![0.0]), (1, vec![1.0])]));
        let triple = corpus.language(0).train[0];
        let err = rank_query(
            &Query::predict_tail(&triple),
            triple.tail,
            &embs,
            &decoder,
            &tensors,
            &corpus,
        )
        .unwrap_err();
        assert!(err.to_string().contains("covered"), "{err}");
    }

    #[test]
    fn evaluate_groups_by_language_and_bounds_hits() {
        let corpus = corpus_with_entities(&[
            (
                "en",
                &["a", "b", "c", "d"],
                &[("a", "r0", "b"), ("c", "r0", "d")],
            ),
            ("fr", &["x", "y", "z"], &[("x", "r0", "y")]),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dim = 4;
        let decoder = DecoderParams::new("dec", dim, 0.3, &corpus).unwrap();
        let tensors = decoder.init_tensors(&mut rng);
        let vecs: HashMap<usize, Vec<f64>> = (0..corpus.total_entities())
            .map(|g| (g, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let embs = ContextEmbeddings::from_map(dim, vecs);
        let mut test: Vec<Triple> = corpus.language(0).train.clone();
        test.extend_from_slice(&corpus.language(1).train);

        let metrics = evaluate(&test, &embs, &decoder, &tensors, &corpus).unwrap();
        assert_eq!(metrics.per_language.len(), 2);
        assert_eq!(metrics.per_language["en"].n, 2);
        assert_eq!(metrics.per_language["fr"].n, 1);
        assert_eq!(metrics.macro_avg.n, 3);
        for s in metrics.per_language.values() {
            assert!(s.hits1 <= s.hits10 + 1e-12);
            assert!(s.mrr > 0.0 && s.mrr <= 1.0);
        }
        let avg_mrr = (metrics.per_language["en"].mrr + metrics.per_language["fr"].mrr) / 2.0;
        assert!((metrics.macro_avg.mrr - avg_mrr).abs() < 1e-12);

        // The JSON view lists every language plus the macro average, keys
        // sorted.
        let json = metrics.to_json();
        let obj = json.as_object().unwrap();
        assert_eq!(obj.keys().collect::<Vec<_>>(), vec!["en", "fr", "macro_avg"]);
        let table = metrics.to_table();
        assert!(table.contains("macro_avg"));
    }
}
