//! The fused multilingual graph: all languages' training triples plus
//! two directed alignment facts per active pair, with a bidirectional
//! adjacency index.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AlignmentPair, MultiKg, Provenance, RelationRef, Triple};

/// Which end of the underlying fact the indexed entity occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// The indexed entity is the head of the fact.
    Out,
    /// The indexed entity is the tail of the fact.
    In,
}

/// One adjacency slot: the fact, the entity at its other end, the
/// relation, and the indexed entity's role in the fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdjEntry {
    pub fact: usize,
    pub neighbor: usize,
    pub rel: RelationRef,
    pub dir: Direction,
}

/// Read-only view of a (sub)graph in the global id space; everything
/// the encoder needs to run message passing.
pub trait GraphView {
    fn corpus(&self) -> &MultiKg;
    /// Entities covered by this view, sorted ascending.
    fn entities(&self) -> &[usize];
    /// Visit every adjacency entry of `global` within this view.
    fn for_each_neighbor(&self, global: usize, f: &mut dyn FnMut(AdjEntry));
}

/// The fused graph. Immutable after construction.
#[derive(Debug)]
pub struct FusedKg {
    corpus: Arc<MultiKg>,
    facts: Vec<Triple>,
    local_fact_count: usize,
    pairs: Vec<AlignmentPair>,
    pair_keys: HashSet<(usize, usize)>,
    adjacency: Vec<Vec<AdjEntry>>,
    entity_ids: Vec<usize>,
}

/// Outcome of [`FusedKg::augment_with_pairs`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentReport {
    pub accepted: usize,
    pub skipped_duplicates: usize,
}

/// Union of every language's training triples plus, for each pair
/// (a, b), the two directed alignment facts (a, r_align, b) and
/// (b, r_align, a). Fact count is therefore Σ train + 2·|pairs|.
pub fn build_fused(corpus: Arc<MultiKg>, pairs: Vec<AlignmentPair>) -> Result<FusedKg> {
    let mut pair_keys = HashSet::with_capacity(pairs.len());
    for p in &pairs {
        for e in [p.left, p.right] {
            if e.global_id >= corpus.total_entities() || corpus.to_ref(e.global_id) != e {
                return Err(Error::invalid(format!(
                    "alignment pair ({}, {}): endpoint does not match the corpus index",
                    p.left.global_id, p.right.global_id
                )));
            }
        }
        if !pair_keys.insert(p.key()) {
            return Err(Error::DuplicatePair {
                left: corpus.qualified_label(p.left.global_id),
                right: corpus.qualified_label(p.right.global_id),
            });
        }
    }

    let local_fact_count = corpus.total_train_triples();
    let mut facts = Vec::with_capacity(local_fact_count + 2 * pairs.len());
    facts.extend(corpus.train_triples().copied());
    let align = corpus.align_relation();
    for p in &pairs {
        facts.push(Triple {
            head: p.left,
            relation: align,
            tail: p.right,
        });
        facts.push(Triple {
            head: p.right,
            relation: align,
            tail: p.left,
        });
    }

    let mut adjacency: Vec<Vec<AdjEntry>> = vec![Vec::new(); corpus.total_entities()];
    for (fact, t) in facts.iter().enumerate() {
        adjacency[t.head.global_id].push(AdjEntry {
            fact,
            neighbor: t.tail.global_id,
            rel: t.relation,
            dir: Direction::Out,
        });
        adjacency[t.tail.global_id].push(AdjEntry {
            fact,
            neighbor: t.head.global_id,
            rel: t.relation,
            dir: Direction::In,
        });
    }

    let entity_ids: Vec<usize> = (0..corpus.total_entities()).collect();
    Ok(FusedKg {
        corpus,
        facts,
        local_fact_count,
        pairs,
        pair_keys,
        adjacency,
        entity_ids,
    })
}

impl FusedKg {
    pub fn corpus_arc(&self) -> &Arc<MultiKg> {
        &self.corpus
    }

    pub fn facts(&self) -> &[Triple] {
        &self.facts
    }

    pub fn fact(&self, idx: usize) -> &Triple {
        &self.facts[idx]
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    /// Number of language-local (non-alignment) facts; alignment facts
    /// occupy indices `local_fact_count()..`.
    pub fn local_fact_count(&self) -> usize {
        self.local_fact_count
    }

    pub fn pairs(&self) -> &[AlignmentPair] {
        &self.pairs
    }

    pub fn has_pair(&self, key: (usize, usize)) -> bool {
        self.pair_keys.contains(&key)
    }

    /// Canonical `(lower global id, higher global id)` keys of every
    /// active pair.
    pub fn pair_keys(&self) -> &HashSet<(usize, usize)> {
        &self.pair_keys
    }

    /// Fact indices of the two directed alignment facts of pair `i`.
    pub fn align_fact_ids(&self, pair_idx: usize) -> (usize, usize) {
        let base = self.local_fact_count + 2 * pair_idx;
        (base, base + 1)
    }

    pub fn neighbors(&self, global: usize) -> &[AdjEntry] {
        &self.adjacency[global]
    }

    /// Remove `round(ratio · |pairs|)` pairs, chosen uniformly without
    /// replacement; their four adjacency slots (two facts, both ends)
    /// vanish from the returned view. Language-local facts are never
    /// touched.
    pub fn mask_alignment(&self, ratio: f64, rng: &mut impl Rng) -> Result<MaskedView<'_>> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1]")));
        }
        let count = ((self.pairs.len() as f64) * ratio).round() as usize;
        let mut chosen = if count == 0 {
            Vec::new()
        } else {
            sample(rng, self.pairs.len(), count).into_vec()
        };
        chosen.sort_unstable();

        let mut surviving = vec![true; self.facts.len()];
        let mut masked_pairs = Vec::with_capacity(count);
        for idx in chosen {
            let (f1, f2) = self.align_fact_ids(idx);
            surviving[f1] = false;
            surviving[f2] = false;
            masked_pairs.push(self.pairs[idx].with_provenance(Provenance::MaskedOut));
        }
        Ok(MaskedView {
            base: self,
            masked_pairs,
            surviving,
        })
    }

    /// New graph with `new_pairs` added as alignment facts. Pairs that
    /// duplicate an active pair (or an earlier entry of `new_pairs`)
    /// are skipped and counted; the original graph is untouched.
    pub fn augment_with_pairs(
        &self,
        new_pairs: impl IntoIterator<Item = AlignmentPair>,
    ) -> Result<(FusedKg, AugmentReport)> {
        let mut report = AugmentReport::default();
        let mut combined = self.pairs.clone();
        let mut keys = self.pair_keys.clone();
        for p in new_pairs {
            if keys.insert(p.key()) {
                combined.push(p);
                report.accepted += 1;
            } else {
                report.skipped_duplicates += 1;
            }
        }
        let fused = build_fused(Arc::clone(&self.corpus), combined)?;
        Ok((fused, report))
    }
}

impl GraphView for FusedKg {
    fn corpus(&self) -> &MultiKg {
        &self.corpus
    }

    fn entities(&self) -> &[usize] {
        &self.entity_ids
    }

    fn for_each_neighbor(&self, global: usize, f: &mut dyn FnMut(AdjEntry)) {
        for e in &self.adjacency[global] {
            f(*e);
        }
    }
}

/// A fused graph with some alignment pairs hidden; used to train the
/// alignment encoder to recover them.
#[derive(Debug)]
pub struct MaskedView<'a> {
    base: &'a FusedKg,
    masked_pairs: Vec<AlignmentPair>,
    surviving: Vec<bool>,
}

impl MaskedView<'_> {
    pub fn base(&self) -> &FusedKg {
        self.base
    }

    pub fn masked_pairs(&self) -> &[AlignmentPair] {
        &self.masked_pairs
    }

    pub fn fact_survives(&self, fact: usize) -> bool {
        self.surviving[fact]
    }

    pub fn surviving_fact_count(&self) -> usize {
        self.surviving.iter().filter(|s| **s).count()
    }
}

impl GraphView for MaskedView<'_> {
    fn corpus(&self) -> &MultiKg {
        self.base.corpus()
    }

    fn entities(&self) -> &[usize] {
        &self.base.entity_ids
    }

    fn for_each_neighbor(&self, global: usize, f: &mut dyn FnMut(AdjEntry)) {
        for e in &self.base.adjacency[global] {
            if self.surviving[e.fact] {
                f(*e);
            }
        }
    }
}
