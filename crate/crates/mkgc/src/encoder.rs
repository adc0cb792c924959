//! Relation-aware attention encoder over the fused graph.
//!
//! Each layer sends, for every adjacency slot (i, r) of an entity j,
//! the message `Wv · [h_i; r]`, scores it with a scaled key/query dot
//! product times a learnable per-relation factor β_r, softmax-normalizes
//! the scores over j's bidirectional neighborhood, and applies a
//! residual update `h_j ← h_j + σ(Σ att · msg)` with a leaky-relu σ.
//! Entities with no neighbors pass through unchanged.
//!
//! The encoder is instantiated twice under different tensor-name
//! prefixes: one instance feeds the completion decoder, the other the
//! alignment generator. A relation-unaware variant (single shared
//! relation vector, no β factors) backs the plainest ablation mode.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{DiffValue, Recording, Tensor};
use crate::error::{Error, Result};
use crate::graph::{FusedKg, GraphView, MultiKg, RelationRef};

/// Per-entity text vectors used to seed h⁰, indexed by global id.
/// Entities without coverage fall back to a learned free vector.
#[derive(Clone, Debug)]
pub struct TextFeatures {
    pub dim: usize,
    pub vectors: Vec<Option<Vec<f64>>>,
}

impl TextFeatures {
    pub fn covers(&self, global: usize) -> bool {
        self.vectors.get(global).map(Option::is_some).unwrap_or(false)
    }
}

/// Architecture of one encoder instance. Tensors are stored separately
/// in a name → [`Tensor`] map under this instance's `prefix`, so the
/// optimizer and checkpoints can treat all parameters uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct EncoderParams {
    pub prefix: String,
    pub layers: usize,
    pub dim: usize,
    pub slope: f64,
    /// When false, one shared relation vector replaces the per-relation
    /// table and no β factor enters the attention logits.
    pub relation_aware: bool,
    pub text_dim: Option<usize>,
}

impl EncoderParams {
    pub fn new(prefix: &str, dim: usize, layers: usize, relation_aware: bool) -> Self {
        EncoderParams {
            prefix: prefix.to_string(),
            layers,
            dim,
            slope: 0.1,
            relation_aware,
            text_dim: None,
        }
    }

    pub fn with_text_dim(mut self, dim: Option<usize>) -> Self {
        self.text_dim = dim;
        self
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    pub fn wv_name(&self, layer: usize) -> String {
        self.name(&format!("layer{layer}.Wv"))
    }

    pub fn wk_name(&self, layer: usize) -> String {
        self.name(&format!("layer{layer}.Wk"))
    }

    pub fn wq_name(&self, layer: usize) -> String {
        self.name(&format!("layer{layer}.Wq"))
    }

    pub fn beta_name(&self, relation_label: &str) -> String {
        self.name(&format!("beta.{relation_label}"))
    }

    pub fn rel_vecs_name(&self) -> String {
        self.name("rel_vecs")
    }

    pub fn h0_name(&self) -> String {
        self.name("h0")
    }

    pub fn text_proj_name(&self) -> String {
        self.name("text_proj")
    }

    /// Fresh tensors for this instance over `corpus`: Xavier for the
    /// transforms, 0.02-std Gaussians for embeddings, β = 1.
    pub fn init_tensors(&self, corpus: &MultiKg, rng: &mut impl Rng) -> BTreeMap<String, Tensor> {
        let d = self.dim;
        let mut out = BTreeMap::new();
        for l in 0..self.layers {
            out.insert(self.wv_name(l), Tensor::xavier(d, 2 * d, rng));
            out.insert(self.wk_name(l), Tensor::xavier(d, d, rng));
            out.insert(self.wq_name(l), Tensor::xavier(d, d, rng));
        }
        if self.relation_aware {
            for label in corpus.relation_labels() {
                out.insert(self.beta_name(label), Tensor::scalar(1.0));
            }
            out.insert(
                self.rel_vecs_name(),
                Tensor::randn(d, corpus.num_relations(), 0.02, rng),
            );
        } else {
            out.insert(self.rel_vecs_name(), Tensor::randn(d, 1, 0.02, rng));
        }
        out.insert(
            self.h0_name(),
            Tensor::randn(d, corpus.total_entities(), 0.02, rng),
        );
        if let Some(td) = self.text_dim {
            out.insert(self.text_proj_name(), Tensor::xavier(d, td, rng));
        }
        out
    }
}

/// Top-layer embeddings produced by [`encode`], keyed by global id.
#[derive(Clone, Debug)]
pub struct ContextEmbeddings {
    dim: usize,
    vecs: HashMap<usize, Vec<f64>>,
}

impl ContextEmbeddings {
    pub fn from_map(dim: usize, vecs: HashMap<usize, Vec<f64>>) -> Self {
        ContextEmbeddings { dim, vecs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vecs.is_empty()
    }

    pub fn contains(&self, global: usize) -> bool {
        self.vecs.contains_key(&global)
    }

    pub fn get(&self, global: usize) -> Option<&[f64]> {
        self.vecs.get(&global).map(Vec::as_slice)
    }

    pub fn require(&self, global: usize) -> Result<&[f64]> {
        self.get(global).ok_or_else(|| {
            Error::invalid(format!("entity {global} is not covered by this encoding"))
        })
    }
}

/// Top-layer attention weights: entity → (neighbor, relation, weight).
pub type AttentionTrace = HashMap<usize, Vec<(usize, RelationRef, f64)>>;

/// One forward construction of the encoder on a recording. Holds the
/// registered parameter handles and lazily extracted relation columns.
pub struct EncoderPass<'p> {
    pub rec: Recording,
    params: &'p EncoderParams,
    wv: Vec<DiffValue>,
    wk: Vec<DiffValue>,
    wq: Vec<DiffValue>,
    beta: Vec<DiffValue>,
    rel_table: DiffValue,
    rel_cols: Vec<Option<DiffValue>>,
    h0: DiffValue,
    text_proj: Option<DiffValue>,
}

impl<'p> EncoderPass<'p> {
    /// Register this encoder's tensors on a fresh recording.
    pub fn new(
        params: &'p EncoderParams,
        tensors: &BTreeMap<String, Tensor>,
        corpus: &MultiKg,
    ) -> Result<Self> {
        let mut rec = Recording::new();
        let fetch = |name: &str| -> Result<&Tensor> {
            tensors
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter tensor {name:?}")))
        };
        let mut wv = Vec::new();
        let mut wk = Vec::new();
        let mut wq = Vec::new();
        for l in 0..params.layers {
            wv.push(rec.param(&params.wv_name(l), fetch(&params.wv_name(l))?)?);
            wk.push(rec.param(&params.wk_name(l), fetch(&params.wk_name(l))?)?);
            wq.push(rec.param(&params.wq_name(l), fetch(&params.wq_name(l))?)?);
        }
        let mut beta = Vec::new();
        if params.relation_aware {
            for label in corpus.relation_labels() {
                let name = params.beta_name(label);
                beta.push(rec.param(&name, fetch(&name)?)?);
            }
        }
        let rel_table = rec.param(&params.rel_vecs_name(), fetch(&params.rel_vecs_name())?)?;
        let h0 = rec.param(&params.h0_name(), fetch(&params.h0_name())?)?;
        let text_proj = if params.text_dim.is_some() {
            Some(rec.param(&params.text_proj_name(), fetch(&params.text_proj_name())?)?)
        } else {
            None
        };
        let rel_cols = vec![None; rel_table.cols];
        Ok(EncoderPass {
            rec,
            params,
            wv,
            wk,
            wq,
            beta,
            rel_table,
            rel_cols,
            h0,
            text_proj,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        self.params
    }

    fn rel_col(&mut self, rel: RelationRef) -> Result<DiffValue> {
        let idx = if self.params.relation_aware { rel.id } else { 0 };
        if idx >= self.rel_table.cols {
            return Err(Error::invalid(format!(
                "relation {} has no vector (table holds {})",
                rel.id, self.rel_table.cols
            )));
        }
        if let Some(c) = self.rel_cols[idx] {
            return Ok(c);
        }
        let c = self.rec.col(self.rel_table, idx)?;
        self.rel_cols[idx] = Some(c);
        Ok(c)
    }

    /// Initial vector of one entity: a projected text vector when
    /// covered, otherwise the entity's learned base column.
    pub fn base_vector(&mut self, global: usize, text: Option<&TextFeatures>) -> Result<DiffValue> {
        if let (Some(proj), Some(feat)) = (self.text_proj, text) {
            if let Some(Some(v)) = feat.vectors.get(global) {
                let tv = self.rec.constant_column(v);
                return self.rec.matmul(proj, tv);
            }
        }
        self.rec.col(self.h0, global)
    }

    /// `Wv · [h_i; r]` — the relation-conditioned message carried by
    /// one adjacency slot.
    pub fn message(&mut self, h_i: DiffValue, rel: RelationRef, layer: usize) -> Result<DiffValue> {
        let r = self.rel_col(rel)?;
        let cat = self.rec.concat_rows(h_i, r)?;
        self.rec.matmul(self.wv[layer], cat)
    }

    fn logit_from_key_query(
        &mut self,
        key: DiffValue,
        query: DiffValue,
        rel: RelationRef,
    ) -> Result<DiffValue> {
        let dot = self.rec.dot(key, query)?;
        let scaled = self.rec.scale(dot, 1.0 / (self.params.dim as f64).sqrt());
        if self.params.relation_aware {
            self.rec.mul(scaled, self.beta[rel.id])
        } else {
            Ok(scaled)
        }
    }

    /// `(Wk msg)ᵀ (Wq h_j) / √d · β_r`.
    pub fn attention_logit(
        &mut self,
        msg: DiffValue,
        h_j: DiffValue,
        rel: RelationRef,
        layer: usize,
    ) -> Result<DiffValue> {
        let key = self.rec.matmul(self.wk[layer], msg)?;
        let query = self.rec.matmul(self.wq[layer], h_j)?;
        self.logit_from_key_query(key, query, rel)
    }

    /// Softmax-normalized weights of `h_j`'s neighborhood slots.
    pub fn attention_weights(
        &mut self,
        h_j: DiffValue,
        neighborhood: &[(DiffValue, RelationRef)],
        layer: usize,
    ) -> Result<Vec<DiffValue>> {
        if neighborhood.is_empty() {
            return Err(Error::invalid(
                "attention weights need a nonempty neighborhood",
            ));
        }
        let mut logits = Vec::with_capacity(neighborhood.len());
        for &(h_i, rel) in neighborhood {
            let msg = self.message(h_i, rel, layer)?;
            logits.push(self.attention_logit(msg, h_j, rel, layer)?);
        }
        self.rec.softmax_over(&logits)
    }

    /// One message-passing layer over every entity of `graph`.
    /// `trace`, when given, collects the entities' attention weights.
    pub fn layer_forward<G: GraphView>(
        &mut self,
        graph: &G,
        h: &HashMap<usize, DiffValue>,
        layer: usize,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<HashMap<usize, DiffValue>> {
        // Message and key caches are valid within one layer: a neighbor
        // repeated under the same relation sends one shared message.
        let mut msg_cache: HashMap<(usize, usize), DiffValue> = HashMap::new();
        let mut key_cache: HashMap<(usize, usize), DiffValue> = HashMap::new();

        let mut next = HashMap::with_capacity(h.len());
        let mut slots: Vec<(usize, RelationRef)> = Vec::new();
        let mut seen: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
        for &j in graph.entities() {
            let h_j = h[&j];
            // The neighborhood is the set of (entity, relation) slots:
            // the two directed facts of an alignment pair (and any
            // repeated local fact) contribute a single softmax slot.
            slots.clear();
            seen.clear();
            graph.for_each_neighbor(j, &mut |e| {
                if seen.insert((e.neighbor, e.rel.id)) {
                    slots.push((e.neighbor, e.rel));
                }
            });
            if slots.is_empty() {
                next.insert(j, h_j);
                continue;
            }

            let query = self.rec.matmul(self.wq[layer], h_j)?;
            let mut msgs = Vec::with_capacity(slots.len());
            let mut logits = Vec::with_capacity(slots.len());
            for &(i, rel) in &slots {
                let msg = match msg_cache.get(&(i, rel.id)) {
                    Some(&m) => m,
                    None => {
                        let m = self.message(h[&i], rel, layer)?;
                        msg_cache.insert((i, rel.id), m);
                        m
                    }
                };
                let key = match key_cache.get(&(i, rel.id)) {
                    Some(&k) => k,
                    None => {
                        let k = self.rec.matmul(self.wk[layer], msg)?;
                        key_cache.insert((i, rel.id), k);
                        k
                    }
                };
                msgs.push(msg);
                logits.push(self.logit_from_key_query(key, query, rel)?);
            }
            let weights = self.rec.softmax_over(&logits)?;

            if let Some(t) = trace.as_deref_mut() {
                let row = slots
                    .iter()
                    .zip(&weights)
                    .map(|(&(i, rel), &w)| (i, rel, self.rec.scalar_value(w)))
                    .collect();
                t.insert(j, row);
            }

            let mut agg: Option<DiffValue> = None;
            for (msg, w) in msgs.iter().zip(&weights) {
                let term = self.rec.matmul(*msg, *w)?; // (d,1) × (1,1)
                agg = Some(match agg {
                    Some(a) => self.rec.add(a, term)?,
                    None => term,
                });
            }
            let activated = self.rec.leaky_relu(agg.unwrap(), self.params.slope);
            next.insert(j, self.rec.add(h_j, activated)?);
        }
        Ok(next)
    }

    /// Full L-layer forward pass; returns top-layer handles per entity.
    pub fn encode<G: GraphView>(
        &mut self,
        graph: &G,
        text: Option<&TextFeatures>,
    ) -> Result<HashMap<usize, DiffValue>> {
        self.encode_traced(graph, text, None)
    }

    pub fn encode_traced<G: GraphView>(
        &mut self,
        graph: &G,
        text: Option<&TextFeatures>,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<HashMap<usize, DiffValue>> {
        if self.params.text_dim.is_some() != text.is_some() {
            return Err(Error::invalid(
                "encoder text configuration does not match the provided text features",
            ));
        }
        let mut h = HashMap::with_capacity(graph.entities().len());
        for &e in graph.entities() {
            let v = self.base_vector(e, text)?;
            h.insert(e, v);
        }
        for layer in 0..self.params.layers {
            let want_trace = if layer + 1 == self.params.layers {
                trace.as_deref_mut()
            } else {
                None
            };
            h = self.layer_forward(graph, &h, layer, want_trace)?;
        }
        Ok(h)
    }
}

/// Value-level encoding: run a full pass and extract the embeddings.
pub fn encode<G: GraphView>(
    graph: &G,
    params: &EncoderParams,
    tensors: &BTreeMap<String, Tensor>,
    text: Option<&TextFeatures>,
) -> Result<ContextEmbeddings> {
    let (emb, _) = encode_with_attention(graph, params, tensors, text, false)?;
    Ok(emb)
}

/// Value-level encoding that can also return the top-layer attention
/// weights of every entity.
pub fn encode_with_attention<G: GraphView>(
    graph: &G,
    params: &EncoderParams,
    tensors: &BTreeMap<String, Tensor>,
    text: Option<&TextFeatures>,
    want_trace: bool,
) -> Result<(ContextEmbeddings, AttentionTrace)> {
    let mut pass = EncoderPass::new(params, tensors, graph.corpus())?;
    let mut trace = AttentionTrace::new();
    let handles = pass.encode_traced(graph, text, want_trace.then_some(&mut trace))?;
    let mut vecs = HashMap::with_capacity(handles.len());
    for (&e, &v) in &handles {
        vecs.insert(e, pass.rec.value(v).to_vec());
    }
    Ok((
        ContextEmbeddings {
            dim: params.dim,
            vecs,
        },
        trace,
    ))
}

/// Language × language attention summary: how much of each language's
/// incoming attention mass, averaged over its entities and normalized
/// per row, comes from each (neighbor) language.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionReport {
    pub languages: Vec<String>,
    /// `matrix[s][t]` = normalized average mass entities of language
    /// `s` put on neighbors living in language `t`.
    pub matrix: Vec<Vec<f64>>,
}

impl AttentionReport {
    /// Total mass a language places outside itself.
    pub fn off_diagonal(&self, lang: usize) -> f64 {
        self.matrix[lang]
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != lang)
            .map(|(_, m)| m)
            .sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("from\\to");
        for name in &self.languages {
            out.push_str(&format!("\t{name}"));
        }
        out.push('\n');
        for (s, name) in self.languages.iter().enumerate() {
            out.push_str(name);
            for v in &self.matrix[s] {
                out.push_str(&format!("\t{v:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn attention_report(
    graph: &FusedKg,
    params: &EncoderParams,
    tensors: &BTreeMap<String, Tensor>,
    text: Option<&TextFeatures>,
) -> Result<AttentionReport> {
    let corpus = graph.corpus();
    let (_, trace) = encode_with_attention(graph, params, tensors, text, true)?;
    let m = corpus.num_languages();
    let mut sums = vec![vec![0.0; m]; m];
    let mut counts = vec![0usize; m];
    for &j in graph.entities() {
        let Some(row) = trace.get(&j) else { continue };
        let s = corpus.language_of(j);
        counts[s] += 1;
        for &(neighbor, _, w) in row {
            sums[s][corpus.language_of(neighbor)] += w;
        }
    }
    let mut matrix = Vec::with_capacity(m);
    for s in 0..m {
        let row: Vec<f64> = if counts[s] == 0 {
            // No entity of this language aggregated anything; fall back
            // to the self-only pattern.
            (0..m).map(|t| if t == s { 1.0 } else { 0.0 }).collect()
        } else {
            let avg: Vec<f64> = sums[s].iter().map(|v| v / counts[s] as f64).collect();
            let total: f64 = avg.iter().sum();
            avg.iter().map(|v| v / total).collect()
        };
        matrix.push(row);
    }
    Ok(AttentionReport {
        languages: corpus.languages().iter().map(|l| l.name.clone()).collect(),
        matrix,
    })
}
