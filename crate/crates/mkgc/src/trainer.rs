//! Alternating training driver.
//!
//! Each epoch runs up to three phases in a fixed order. First the
//! alignment phase: seed pairs are partially masked out of the fused
//! graph, the alignment encoder re-embeds the masked graph, and a margin
//! loss pulls the hidden pairs back together at learning rate `λ·lr`.
//! Second, pair generation: the full graph is encoded and new
//! cross-language pairs are proposed by mutual CSLS nearest neighbors.
//! Third, the completion phase: the graph — now including generated
//! pairs as edges — is encoded in sampled k-hop mini-batches and the
//! translation decoder's ranking loss takes Adam steps at rate `lr`.
//!
//! [`Mode`] ablates the phases: `no-ssl` and `no-npg` drop one phase
//! each, `r-gnn` drops both, and `plain-gnn` additionally removes
//! alignment edges and relation awareness, replacing the masked loss
//! with a direct one over all seed pairs.
//!
//! Every epoch's randomness is derived from `(config.seed, epoch)`, so
//! a run is reproducible from its config alone and a resumed run
//! continues exactly where the original would have gone.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    alignment_loss, draw_alignment_negatives, propose_pairs_all, recovery_report,
    alignment_loss_terms, AlignLossBundle, AlignNegStats, CandidatePair, SimilarityConfig,
    TextEmbeddingStore,
};
use crate::autograd::Adam;
use crate::encoder::{encode, ContextEmbeddings, EncoderParams, EncoderPass, TextFeatures};
use crate::error::{Error, Result};
use crate::graph::{
    build_fused, sample_khop, AlignmentPair, FusedKg, GraphView, MultiKg, Triple,
};
use crate::kgc::{
    draw_negatives, evaluate, kgc_loss_terms, DecoderParams, Metrics, NegSampleStats,
    RankSummary,
};

/// Which phases an epoch runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Masked alignment training, pair generation, and completion.
    Full,
    /// Pair generation and completion; no masked alignment steps.
    NoSsl,
    /// Masked alignment training and completion; no pair generation.
    NoNpg,
    /// Completion only, with alignment pairs present as graph edges.
    RGnn,
    /// Relation-unaware encoder, no alignment edges; alignment enters
    /// through a direct loss over all seed pairs.
    PlainGnn,
}

const MODE_NAMES: [(Mode, &str); 5] = [
    (Mode::Full, "full"),
    (Mode::NoSsl, "no-ssl"),
    (Mode::NoNpg, "no-npg"),
    (Mode::RGnn, "r-gnn"),
    (Mode::PlainGnn, "plain-gnn"),
];

impl Mode {
    /// Whether the epoch takes masked-alignment optimizer steps.
    pub fn ssl(self) -> bool {
        matches!(self, Mode::Full | Mode::NoNpg)
    }

    /// Whether the epoch proposes new alignment pairs.
    pub fn npg(self) -> bool {
        matches!(self, Mode::Full | Mode::NoSsl)
    }

    /// Whether alignment pairs become graph edges.
    pub fn align_edges(self) -> bool {
        self != Mode::PlainGnn
    }

    /// Whether the encoders condition messages and attention on relations.
    pub fn relation_aware(self) -> bool {
        self != Mode::PlainGnn
    }

    /// Whether the epoch runs the direct (unmasked) alignment loss.
    pub fn direct_align_loss(self) -> bool {
        self == Mode::PlainGnn
    }

    pub fn label(self) -> &'static str {
        MODE_NAMES.iter().find(|(m, _)| *m == self).unwrap().1
    }

    pub fn all() -> [Mode; 5] {
        [
            Mode::Full,
            Mode::NoSsl,
            Mode::NoNpg,
            Mode::RGnn,
            Mode::PlainGnn,
        ]
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MODE_NAMES
            .iter()
            .find(|(_, name)| *name == s)
            .map(|(m, _)| *m)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown mode {s:?} (expected one of full, no-ssl, no-npg, r-gnn, plain-gnn)"
                ))
            })
    }
}

/// What happens to generated pairs between epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPolicy {
    /// Discard last epoch's generated pairs and propose from the seed
    /// graph alone; the active set is exactly this epoch's proposals.
    Regenerate,
    /// Keep generated pairs across epochs and propose additions from
    /// the seed-plus-generated graph.
    Accumulate,
}

impl FromStr for PairPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regenerate" => Ok(PairPolicy::Regenerate),
            "accumulate" => Ok(PairPolicy::Accumulate),
            other => Err(Error::invalid(format!(
                "unknown pair policy {other:?} (expected regenerate or accumulate)"
            ))),
        }
    }
}

impl fmt::Display for PairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairPolicy::Regenerate => "regenerate",
            PairPolicy::Accumulate => "accumulate",
        })
    }
}

/// All hyperparameters of a run. [`TrainConfig::set`] accepts every
/// field as a `key=value` string pair, which is how config files and
/// flag overrides reach it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Embedding dimension of entities, relations and messages.
    pub dim: usize,
    /// Number of message-passing layers.
    pub layers: usize,
    /// Base Adam learning rate; the completion loss trains at this rate.
    pub lr: f64,
    /// Triples (or alignment positives) per optimizer step.
    pub batch_size: usize,
    /// Ranking margin of the completion loss.
    pub margin: f64,
    /// Margin of the alignment contrast loss.
    pub align_margin: f64,
    /// The alignment loss trains at `lambda · lr`.
    pub lambda: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a validation-MRR improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    /// Fraction of seed pairs hidden per epoch for masked recovery.
    pub mask_ratio: f64,
    /// Neighbor count for CSLS local scaling.
    pub csls_k: usize,
    pub negatives_per_positive: usize,
    pub pair_policy: PairPolicy,
    pub mode: Mode,
    /// Train both losses against one encoder instead of two.
    pub share_encoders: bool,
    pub seed: u64,
    /// Hops of the mini-batch neighborhood sampler.
    pub khop_depth: usize,
    /// Max adjacency entries kept per entity and hop while sampling.
    pub khop_fanout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 256,
            layers: 2,
            lr: 0.005,
            batch_size: 512,
            margin: 0.3,
            align_margin: 1.0,
            lambda: 1.0,
            epochs: 30,
            patience: 0,
            mask_ratio: 0.3,
            csls_k: 10,
            negatives_per_positive: 1,
            pair_policy: PairPolicy::Regenerate,
            mode: Mode::Full,
            share_encoders: false,
            seed: 0,
            khop_depth: 2,
            khop_fanout: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be strictly positive, got {v}"
                )))
            }
        }
        if self.dim == 0 || self.layers == 0 {
            return Err(Error::invalid("dim and layers must be at least 1"));
        }
        positive("lr", self.lr)?;
        positive("margin", self.margin)?;
        positive("align_margin", self.align_margin)?;
        positive("lambda", self.lambda)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid(format!(
                "mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if self.csls_k == 0 {
            return Err(Error::invalid("csls_k must be at least 1"));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::invalid("negatives_per_positive must be at least 1"));
        }
        if self.khop_depth == 0 || self.khop_fanout == 0 {
            return Err(Error::invalid("khop_depth and khop_fanout must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate of the alignment phase: `lambda · lr`.
    pub fn align_rate(&self) -> f64 {
        self.lambda * self.lr
    }

    /// Learning rate of the completion phase.
    pub fn kgc_rate(&self) -> f64 {
        self.lr
    }

    /// Assigns one field from its `key=value` string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| {
                Error::invalid(format!("config key {key}: cannot parse {value:?}: {e}"))
            })
        }
        match key {
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "align_margin" => self.align_margin = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "mask_ratio" => self.mask_ratio = parse(key, value)?,
            "csls_k" => self.csls_k = parse(key, value)?,
            "negatives_per_positive" => self.negatives_per_positive = parse(key, value)?,
            "pair_policy" => self.pair_policy = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "share_encoders" => self.share_encoders = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "khop_depth" => self.khop_depth = parse(key, value)?,
            "khop_fanout" => self.khop_fanout = parse(key, value)?,
            other => {
                return Err(Error::invalid(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }
}

/// A corpus with its alignment supervision and optional text vectors —
/// everything a run consumes besides the config.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub corpus: Arc<MultiKg>,
    pub seed_pairs: Vec<AlignmentPair>,
    pub text: TextEmbeddingStore,
}

impl TrainData {
    pub fn new(
        corpus: Arc<MultiKg>,
        seed_pairs: Vec<AlignmentPair>,
        text: TextEmbeddingStore,
    ) -> Self {
        TrainData {
            corpus,
            seed_pairs,
            text,
        }
    }
}

/// Shape snapshot of the corpus a model was trained on; checked when a
/// checkpoint is loaded against a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFingerprint {
    /// `(language name, entity count)` in language-id order.
    pub languages: Vec<(String, usize)>,
    pub relations: Vec<String>,
}

impl CorpusFingerprint {
    pub fn of(corpus: &MultiKg) -> Self {
        CorpusFingerprint {
            languages: corpus
                .languages()
                .iter()
                .map(|l| (l.name.clone(), l.entity_count()))
                .collect(),
            relations: corpus.relation_labels().to_vec(),
        }
    }

    pub fn ensure_matches(&self, corpus: &MultiKg) -> Result<()> {
        let now = CorpusFingerprint::of(corpus);
        if *self == now {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint was trained on a different corpus \
                 (saved {:?} / {} relations, loaded {:?} / {} relations)",
                self.languages,
                self.relations.len(),
                now.languages,
                now.relations.len()
            )))
        }
    }
}

/// Everything that evolves during training. Serializable as-is: a
/// checkpoint is exactly this struct.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelState {
    pub mode: Mode,
    pub encoder_k: EncoderParams,
    /// Alignment encoder; shares `encoder_k`'s prefix (and therefore its
    /// tensors) when the config asked for shared encoders.
    pub encoder_a: EncoderParams,
    pub decoder: DecoderParams,
    pub tensors: BTreeMap<String, crate::autograd::Tensor>,
    pub opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Currently active generated pairs.
    pub generated: Vec<AlignmentPair>,
    pub fingerprint: CorpusFingerprint,
}

impl ModelState {
    /// Fresh state for `data` under `cfg`; all tensors are drawn from
    /// the config seed.
    pub fn new(data: &TrainData, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = &data.corpus;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let relation_aware = cfg.mode.relation_aware();
        let text_dim = (!data.text.is_empty()).then(|| data.text.dim());
        let encoder_k =
            EncoderParams::new("k", cfg.dim, cfg.layers, relation_aware).with_text_dim(text_dim);
        let encoder_a = if cfg.share_encoders {
            encoder_k.clone()
        } else {
            EncoderParams::new("a", cfg.dim, cfg.layers, relation_aware).with_text_dim(text_dim)
        };
        let decoder = DecoderParams::new("dec", cfg.dim, cfg.margin, corpus)?;

        let mut tensors = encoder_k.init_tensors(corpus, &mut rng);
        if !cfg.share_encoders {
            tensors.extend(encoder_a.init_tensors(corpus, &mut rng));
        }
        tensors.extend(decoder.init_tensors(&mut rng));

        Ok(ModelState {
            mode: cfg.mode,
            encoder_k,
            encoder_a,
            decoder,
            tensors,
            opt: Adam::new(cfg.lr),
            epoch: 0,
            generated: Vec::new(),
            fingerprint: CorpusFingerprint::of(corpus),
        })
    }

    /// Whether both losses train one shared encoder.
    pub fn shared_encoders(&self) -> bool {
        self.encoder_k.prefix == self.encoder_a.prefix
    }

    /// Dense text features when this model consumes them, validated
    /// against the data's store.
    pub fn text_features(&self, data: &TrainData) -> Result<Option<TextFeatures>> {
        match self.encoder_k.text_dim {
            None => Ok(None),
            Some(d) => {
                if data.text.is_empty() {
                    return Err(Error::invalid(
                        "model was trained with text embeddings but the dataset has none",
                    ));
                }
                if data.text.dim() != d {
                    return Err(Error::invalid(format!(
                        "model expects {d}-dimensional text embeddings, dataset has {}",
                        data.text.dim()
                    )));
                }
                Ok(Some(data.text.to_text_features(&data.corpus)))
            }
        }
    }

    /// All pairs that are currently edges: seeds plus generated.
    pub fn active_pairs(&self, data: &TrainData) -> Vec<AlignmentPair> {
        let mut pairs = data.seed_pairs.clone();
        pairs.extend(self.generated.iter().copied());
        pairs
    }
}

/// One epoch's record. Equality ignores wall time, so determinism
/// checks compare everything that should reproduce.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based epoch number after this epoch completed.
    pub epoch: usize,
    /// Mean alignment loss per contrast term; absent when the mode takes
    /// no alignment steps or nothing was masked.
    pub j_a: Option<f64>,
    /// Mean completion loss per ranking term.
    pub j_k: f64,
    pub ssl_steps: usize,
    pub kgc_steps: usize,
    /// Positives the alignment phase trained on (masked pairs, or all
    /// seed pairs under the direct loss).
    pub align_positives: usize,
    pub pairs_proposed: usize,
    /// Generated pairs active after this epoch.
    pub pairs_active: usize,
    /// This epoch's proposals with their scores.
    pub proposals: Vec<CandidatePair>,
    /// CSLS ranking of the masked counterparts (structure only).
    pub recovery: Option<RankSummary>,
    pub validation: Metrics,
    /// Completion negatives that exhausted their retry budget.
    pub neg_fallbacks: u64,
    /// Alignment negative slots skipped for lack of unaligned candidates.
    pub align_negatives_skipped: u64,
    /// Excluded from equality: timing is not reproducible.
    pub wall_ms: u64,
}

impl PartialEq for EpochReport {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.j_a == other.j_a
            && self.j_k == other.j_k
            && self.ssl_steps == other.ssl_steps
            && self.kgc_steps == other.kgc_steps
            && self.align_positives == other.align_positives
            && self.pairs_proposed == other.pairs_proposed
            && self.pairs_active == other.pairs_active
            && self.proposals == other.proposals
            && self.recovery == other.recovery
            && self.validation == other.validation
            && self.neg_fallbacks == other.neg_fallbacks
            && self.align_negatives_skipped == other.align_negatives_skipped
    }
}

/// RNG for one epoch: stream `epoch + 1` of the config seed (stream 0
/// initializes parameters).
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Direct alignment objective: every pair is a positive, nothing is
/// masked. This is the relation-unaware baseline's way of using
/// alignment supervision; the full model replaces it with graph edges
/// plus masked recovery.
pub fn alignment_as_loss(
    pairs: &[AlignmentPair],
    embeddings: &ContextEmbeddings,
    corpus: &MultiKg,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AlignLossBundle> {
    let active: HashSet<(usize, usize)> = pairs.iter().map(|p| p.key()).collect();
    alignment_loss(pairs, embeddings, corpus, &active, margin, 1, rng)
}

/// Alignment optimizer steps over `positives` on `graph`: encode,
/// contrast against sampled unaligned pairs, step at `align_rate`.
/// Returns `(summed loss, term count, steps)`.
#[allow(clippy::too_many_arguments)]
fn align_steps<G: GraphView>(
    state: &mut ModelState,
    graph: &G,
    positives: &[AlignmentPair],
    active: &HashSet<(usize, usize)>,
    text: Option<&TextFeatures>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    stats: &mut AlignNegStats,
) -> Result<(f64, usize, usize)> {
    let corpus = graph.corpus();
    let mut total = 0.0;
    let mut terms = 0usize;
    let mut steps = 0usize;
    for batch in positives.chunks(cfg.batch_size) {
        let contrasts = draw_alignment_negatives(
            batch,
            corpus,
            active,
            cfg.negatives_per_positive,
            rng,
            stats,
        );
        let batch_terms: usize = contrasts.iter().map(|c| c.negatives.len()).sum();
        if batch_terms == 0 {
            continue;
        }
        let mut pass = EncoderPass::new(&state.encoder_a, &state.tensors, corpus)?;
        let handles = pass.encode(graph, text)?;
        let loss = alignment_loss_terms(
            &mut pass.rec,
            &contrasts,
            |_, id| {
                handles.get(&id).copied().ok_or_else(|| {
                    Error::invalid(format!("entity {id} missing from the encoded graph"))
                })
            },
            cfg.align_margin,
        )?;
        let value = pass.rec.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite alignment loss in epoch {}",
                state.epoch + 1
            )));
        }
        let grads = pass.rec.backward(loss)?;
        state.opt.step_with_lr(&mut state.tensors, &grads, cfg.align_rate())?;
        total += value;
        terms += batch_terms;
        steps += 1;
    }
    Ok((total, terms, steps))
}

/// Runs one epoch in phase order and advances `state.epoch`.
pub fn train_epoch(
    state: &mut ModelState,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<EpochReport> {
    cfg.validate()?;
    state.fingerprint.ensure_matches(&data.corpus)?;
    if cfg.mode != state.mode {
        return Err(Error::invalid(format!(
            "state was initialized for mode {} but the config asks for {}",
            state.mode, cfg.mode
        )));
    }
    let started = Instant::now();
    let corpus = &data.corpus;
    let mut rng = epoch_rng(cfg.seed, state.epoch);
    let text_features = state.text_features(data)?;
    let text = text_features.as_ref();
    let struct_sim = SimilarityConfig {
        k: cfg.csls_k,
        use_structure: true,
        use_text: false,
    };

    let seed_graph = build_fused(
        Arc::clone(corpus),
        if cfg.mode.align_edges() {
            data.seed_pairs.clone()
        } else {
            Vec::new()
        },
    )?;

    // Phase 1: alignment training.
    let mut j_a_total = 0.0;
    let mut j_a_terms = 0usize;
    let mut ssl_steps = 0usize;
    let mut align_positives = 0usize;
    let mut align_stats = AlignNegStats::default();
    let mut recovery = None;

    if cfg.mode.ssl() {
        let masked = seed_graph.mask_alignment(cfg.mask_ratio, &mut rng)?;
        let positives = masked.masked_pairs().to_vec();
        align_positives = positives.len();
        if !positives.is_empty() {
            let active: HashSet<(usize, usize)> = data
                .seed_pairs
                .iter()
                .chain(state.generated.iter())
                .map(|p| p.key())
                .collect();
            let (t, n, s) = align_steps(
                state,
                &masked,
                &positives,
                &active,
                text,
                cfg,
                &mut rng,
                &mut align_stats,
            )?;
            j_a_total += t;
            j_a_terms += n;
            ssl_steps += s;
            let emb = encode(&masked, &state.encoder_a, &state.tensors, text)?;
            recovery = Some(recovery_report(
                &positives,
                &emb,
                &data.text,
                &struct_sim,
                corpus,
            )?);
        }
    } else if cfg.mode.direct_align_loss() {
        let positives = data.seed_pairs.clone();
        align_positives = positives.len();
        if !positives.is_empty() {
            let active: HashSet<(usize, usize)> =
                positives.iter().map(|p| p.key()).collect();
            let (t, n, s) = align_steps(
                state,
                &seed_graph,
                &positives,
                &active,
                text,
                cfg,
                &mut rng,
                &mut align_stats,
            )?;
            j_a_total += t;
            j_a_terms += n;
            ssl_steps += s;
            let emb = encode(&seed_graph, &state.encoder_a, &state.tensors, text)?;
            recovery = Some(recovery_report(
                &positives,
                &emb,
                &data.text,
                &struct_sim,
                corpus,
            )?);
        }
    }

    // Phase 2: pair generation.
    let mut proposals: Vec<CandidatePair> = Vec::new();
    if cfg.mode.npg() {
        let sim_cfg = SimilarityConfig {
            k: cfg.csls_k,
            use_structure: true,
            use_text: !data.text.is_empty(),
        };
        let accumulate_graph;
        let npg_graph: &FusedKg = match cfg.pair_policy {
            PairPolicy::Regenerate => &seed_graph,
            PairPolicy::Accumulate => {
                accumulate_graph =
                    build_fused(Arc::clone(corpus), state.active_pairs(data))?;
                &accumulate_graph
            }
        };
        let existing = npg_graph.pair_keys().clone();
        let emb = encode(npg_graph, &state.encoder_a, &state.tensors, text)?;
        proposals = propose_pairs_all(corpus, &emb, &data.text, &sim_cfg, &existing)?;
        let new_pairs: Vec<AlignmentPair> = proposals
            .iter()
            .map(CandidatePair::to_alignment)
            .collect::<Result<_>>()?;
        match cfg.pair_policy {
            PairPolicy::Regenerate => state.generated = new_pairs,
            PairPolicy::Accumulate => state.generated.extend(new_pairs),
        }
    }

    // Phase 3: completion training on the augmented graph.
    let kgc_graph = if cfg.mode.align_edges() {
        build_fused(Arc::clone(corpus), state.active_pairs(data))?
    } else {
        seed_graph
    };
    let mut train_triples: Vec<Triple> = corpus.train_triples().copied().collect();
    train_triples.shuffle(&mut rng);

    let mut j_k_total = 0.0;
    let mut j_k_terms = 0usize;
    let mut kgc_steps = 0usize;
    let mut neg_stats = NegSampleStats::default();
    for batch in train_triples.chunks(cfg.batch_size) {
        let pairs = draw_negatives(
            batch,
            corpus,
            cfg.negatives_per_positive,
            &mut rng,
            &mut neg_stats,
        )?;
        let mut touched: BTreeSet<usize> = BTreeSet::new();
        for p in &pairs {
            touched.insert(p.positive.head.global_id);
            touched.insert(p.positive.tail.global_id);
            for n in &p.negatives {
                touched.insert(n.head.global_id);
                touched.insert(n.tail.global_id);
            }
        }
        let seeds: Vec<usize> = touched.into_iter().collect();
        let sample = sample_khop(
            &kgc_graph,
            &seeds,
            cfg.khop_depth,
            cfg.khop_fanout,
            &mut rng,
        )?;
        let mut pass = EncoderPass::new(&state.encoder_k, &state.tensors, corpus)?;
        let table = pass
            .rec
            .param(&state.decoder.rel_vecs_name(), state.decoder.rel_table(&state.tensors)?)?;
        let handles = pass.encode(&sample, text)?;
        let loss = kgc_loss_terms(
            &mut pass.rec,
            &pairs,
            |_, id| {
                handles.get(&id).copied().ok_or_else(|| {
                    Error::invalid(format!("entity {id} missing from the sampled subgraph"))
                })
            },
            table,
            &state.decoder,
        )?;
        let value = pass.rec.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite completion loss in epoch {}",
                state.epoch + 1
            )));
        }
        let grads = pass.rec.backward(loss)?;
        state.opt.step_with_lr(&mut state.tensors, &grads, cfg.kgc_rate())?;
        j_k_total += value;
        j_k_terms += pairs.iter().map(|p| p.negatives.len()).sum::<usize>();
        kgc_steps += 1;
    }

    // Validation with the completion encoder on the same graph.
    let valid_triples: Vec<Triple> = corpus
        .languages()
        .iter()
        .flat_map(|l| l.valid.iter().copied())
        .collect();
    let embeddings = encode(&kgc_graph, &state.encoder_k, &state.tensors, text)?;
    let validation = evaluate(
        &valid_triples,
        &embeddings,
        &state.decoder,
        &state.tensors,
        corpus,
    )?;

    state.epoch += 1;
    Ok(EpochReport {
        epoch: state.epoch,
        j_a: (j_a_terms > 0).then(|| j_a_total / j_a_terms as f64),
        j_k: if j_k_terms > 0 {
            j_k_total / j_k_terms as f64
        } else {
            0.0
        },
        ssl_steps,
        kgc_steps,
        align_positives,
        pairs_proposed: proposals.len(),
        pairs_active: state.generated.len(),
        proposals,
        recovery,
        validation,
        neg_fallbacks: neg_stats.fallbacks,
        align_negatives_skipped: align_stats.skipped,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Full run: epochs with early stopping on validation MRR. Returns the
/// best state (highest macro-average validation MRR; earliest epoch on
/// ties) and every epoch's report.
pub fn train(data: &TrainData, cfg: &TrainConfig) -> Result<(ModelState, Vec<EpochReport>)> {
    cfg.validate()?;
    let mut state = ModelState::new(data, cfg)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelState)> = None;
    let mut stale = 0usize;
    for _ in 0..cfg.epochs {
        let report = train_epoch(&mut state, data, cfg)?;
        let mrr = report.validation.macro_avg.mrr;
        match &best {
            Some((best_mrr, _)) if mrr <= *best_mrr => stale += 1,
            _ => {
                best = Some((mrr, state.clone()));
                stale = 0;
            }
        }
        reports.push(report);
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    let best_state = best.map(|(_, s)| s).expect("at least one epoch ran");
    Ok((best_state, reports))
}

/// Which split to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Valid,
    Test,
}

impl FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(EvalSplit::Valid),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::invalid(format!(
                "unknown split {other:?} (expected valid or test)"
            ))),
        }
    }
}

/// The graph a trained state predicts on: alignment edges included
/// exactly when the state's mode trains with them.
pub fn eval_graph(state: &ModelState, data: &TrainData) -> Result<FusedKg> {
    let pairs = if state.mode.align_edges() {
        state.active_pairs(data)
    } else {
        Vec::new()
    };
    build_fused(Arc::clone(&data.corpus), pairs)
}

/// Filtered ranking metrics of `state` on one split.
pub fn evaluate_state(
    state: &ModelState,
    data: &TrainData,
    split: EvalSplit,
) -> Result<Metrics> {
    state.fingerprint.ensure_matches(&data.corpus)?;
    let graph = eval_graph(state, data)?;
    let text_features = state.text_features(data)?;
    let embeddings = encode(
        &graph,
        &state.encoder_k,
        &state.tensors,
        text_features.as_ref(),
    )?;
    let triples: Vec<Triple> = data
        .corpus
        .languages()
        .iter()
        .flat_map(|l| match split {
            EvalSplit::Valid => l.valid.iter().copied(),
            EvalSplit::Test => l.test.iter().copied(),
        })
        .collect();
    evaluate(
        &triples,
        &embeddings,
        &state.decoder,
        &state.tensors,
        &data.corpus,
    )
}

/// One trained variant in the ablation comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mode: Mode,
    pub share_encoders: bool,
    pub test: Metrics,
}

/// Trains every mode (plus the shared-encoder variant of the full model)
/// with identical seeds and returns their test metrics in ascending
/// model-capability order.
pub fn run_ablation(data: &TrainData, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let variants: [(Mode, bool, &str); 6] = [
        (Mode::PlainGnn, false, "plain-gnn"),
        (Mode::RGnn, false, "r-gnn"),
        (Mode::NoSsl, false, "r-gnn+npg"),
        (Mode::NoNpg, false, "r-gnn+ssl"),
        (Mode::Full, false, "full"),
        (Mode::Full, true, "full(shared)"),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for (mode, shared, label) in variants {
        let cfg = TrainConfig {
            mode,
            share_encoders: shared,
            ..base.clone()
        };
        let (best, _) = train(data, &cfg)?;
        let test = evaluate_state(&best, data, EvalSplit::Test)?;
        rows.push(AblationRow {
            label: label.to_string(),
            mode,
            share_encoders: shared,
            test,
        });
    }
    Ok(rows)
}

/// Fixed-width text table of an ablation comparison (macro averages).
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tMRR\tHits@1\tHits@10\n");
    for row in rows {
        let m = &row.test.macro_avg;
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            row.label, m.mrr, m.hits1, m.hits10
        ));
    }
    out
}

/// Deterministic subsample of `round(ratio · n)` pairs. The draw depends
/// only on `(seed, ratio)`, so sweep points are reproducible and nested
/// runs at one ratio always see the same subset.
pub fn subsample_pairs(pairs: &[AlignmentPair], ratio: f64, seed: u64) -> Result<Vec<AlignmentPair>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("sample ratio {ratio} outside [0, 1]")));
    }
    let keep = ((pairs.len() as f64) * ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ratio.to_bits());
    let mut idx = index_sample(&mut rng, pairs.len(), keep).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pairs[i]).collect())
}

/// Test metrics at one seed-alignment ratio, averaged over seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    /// Seed pairs retained at this ratio.
    pub pairs_used: usize,
    pub runs: usize,
    /// Per-language Hits@10, averaged over the sweep seeds.
    pub hits10_by_language: BTreeMap<String, f64>,
    /// Per-language MRR, averaged over the sweep seeds.
    pub mrr_by_language: BTreeMap<String, f64>,
}

/// Trains at each seed-alignment ratio × seed and averages test metrics
/// per language. Ratios apply to the seed pair list only; the corpus,
/// text vectors and ground truth are untouched.
pub fn sweep_alignment(
    data: &TrainData,
    cfg: &TrainConfig,
    ratios: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    if ratios.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one ratio and one seed"));
    }
    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut hits10: BTreeMap<String, f64> = BTreeMap::new();
        let mut mrr: BTreeMap<String, f64> = BTreeMap::new();
        let mut pairs_used = 0;
        for &seed in seeds {
            let sub = subsample_pairs(&data.seed_pairs, ratio, seed)?;
            pairs_used = sub.len();
            let sub_data = TrainData {
                corpus: Arc::clone(&data.corpus),
                seed_pairs: sub,
                text: data.text.clone(),
            };
            let run_cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let (best, _) = train(&sub_data, &run_cfg)?;
            let metrics = evaluate_state(&best, &sub_data, EvalSplit::Test)?;
            for (lang, summary) in &metrics.per_language {
                *hits10.entry(lang.clone()).or_default() += summary.hits10;
                *mrr.entry(lang.clone()).or_default() += summary.mrr;
            }
        }
        let n = seeds.len() as f64;
        hits10.values_mut().for_each(|v| *v /= n);
        mrr.values_mut().for_each(|v| *v /= n);
        points.push(SweepPoint {
            ratio,
            pairs_used,
            runs: seeds.len(),
            hits10_by_language: hits10,
            mrr_by_language: mrr,
        });
    }
    Ok(points)
}

/// Writes `state` as JSON. Floats are emitted in shortest round-trip
/// form and parsed back exactly (the JSON dependency's precise-float
/// parser is enabled workspace-wide), so loading restores bit-identical
/// parameters and optimizer moments.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), state)?;
    Ok(())
}

/// Loads a checkpoint and validates it against `corpus`.
pub fn load_checkpoint(path: &Path, corpus: &MultiKg) -> Result<ModelState> {
    let file = File::open(path)?;
    let state: ModelState = serde_json::from_reader(BufReader::new(file))?;
    state.fingerprint.ensure_matches(corpus)?;
    for pair in &state.generated {
        for e in [pair.left, pair.right] {
            if e.language >= corpus.num_languages()
                || !corpus.global_range(e.language).contains(&e.global_id)
            {
                return Err(Error::Checkpoint(format!(
                    "generated pair references entity {} outside the corpus",
                    e.global_id
                )));
            }
        }
    }
    Ok(state)
}
