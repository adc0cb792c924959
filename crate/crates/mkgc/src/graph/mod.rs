//! Multilingual knowledge-graph data model.
//!
//! A [`MultiKg`] is the immutable corpus: one [`LanguageKg`] per
//! language with train/valid/test triples, a unified relation table
//! whose last slot is the reserved cross-lingual alignment relation,
//! and a dense global entity index spanning every language. The fused
//! graph, masking, augmentation and sampling live in [`fused`] and
//! [`sample`]; [`synthetic`] generates desk-scale corpora and [`io`]
//! reads and writes the TSV interchange formats.

pub mod fused;
pub mod io;
pub mod sample;
pub mod synthetic;

pub use fused::{build_fused, AdjEntry, AugmentReport, Direction, FusedKg, GraphView, MaskedView};
pub use sample::{sample_khop, SubgraphSample};
pub use synthetic::{generate_synthetic, synthetic_text_vectors, SyntheticData, SyntheticSpec};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved label of the alignment relation; rejected in triple files.
pub const ALIGN_LABEL: &str = "r_align";

/// Position of one entity in both its language-local and fused
/// (global) index spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub language: usize,
    pub local_id: usize,
    pub global_id: usize,
}

/// Index into the unified relation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationRef {
    pub id: usize,
    pub is_align: bool,
}

/// A relational fact. Local facts connect entities of one language;
/// alignment facts connect entities of two different languages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityRef,
    pub relation: RelationRef,
    pub tail: EntityRef,
}

impl Triple {
    /// Global-id key used by membership sets and filters.
    pub fn key(&self) -> (usize, usize, usize) {
        (self.head.global_id, self.relation.id, self.tail.global_id)
    }
}

/// How an alignment pair entered the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Seed,
    Generated,
    MaskedOut,
}

/// An unordered cross-language entity pair, stored canonically with
/// `left.global_id < right.global_id`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub left: EntityRef,
    pub right: EntityRef,
    pub provenance: Provenance,
}

impl AlignmentPair {
    pub fn new(a: EntityRef, b: EntityRef, provenance: Provenance) -> Result<Self> {
        if a.language == b.language {
            return Err(Error::invalid(format!(
                "alignment pair endpoints share language {}: locals {} and {}",
                a.language, a.local_id, b.local_id
            )));
        }
        let (left, right) = if a.global_id < b.global_id { (a, b) } else { (b, a) };
        Ok(AlignmentPair {
            left,
            right,
            provenance,
        })
    }

    /// Canonical unordered key.
    pub fn key(&self) -> (usize, usize) {
        (self.left.global_id, self.right.global_id)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// One language-specific KG: interned entities, the relation ids it
/// uses, and its split triples.
#[derive(Clone, Debug)]
pub struct LanguageKg {
    pub name: String,
    entity_labels: Vec<String>,
    entity_index: HashMap<String, usize>,
    pub relations: BTreeSet<usize>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl LanguageKg {
    pub fn entity_count(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn label(&self, local_id: usize) -> &str {
        &self.entity_labels[local_id]
    }

    pub fn local_id(&self, label: &str) -> Option<usize> {
        self.entity_index.get(label).copied()
    }

    pub fn triple_count(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

/// The full multilingual corpus. Immutable after construction; safe to
/// share behind an [`Arc`] across threads.
#[derive(Debug)]
pub struct MultiKg {
    languages: Vec<LanguageKg>,
    lang_index: HashMap<String, usize>,
    relation_labels: Vec<String>,
    align_rel: usize,
    entity_offsets: Vec<usize>,
    total_entities: usize,
    train_facts: HashSet<(usize, usize, usize)>,
    known_facts: HashSet<(usize, usize, usize)>,
}

impl MultiKg {
    pub fn num_languages(&self) -> usize {
        self.languages.len()
    }

    pub fn languages(&self) -> &[LanguageKg] {
        &self.languages
    }

    pub fn language(&self, id: usize) -> &LanguageKg {
        &self.languages[id]
    }

    pub fn language_id(&self, name: &str) -> Option<usize> {
        self.lang_index.get(name).copied()
    }

    pub fn total_entities(&self) -> usize {
        self.total_entities
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn num_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn align_relation(&self) -> RelationRef {
        RelationRef {
            id: self.align_rel,
            is_align: true,
        }
    }

    pub fn relation_ref(&self, id: usize) -> RelationRef {
        RelationRef {
            id,
            is_align: id == self.align_rel,
        }
    }

    pub fn entity_ref(&self, language: usize, local_id: usize) -> EntityRef {
        EntityRef {
            language,
            local_id,
            global_id: self.entity_offsets[language] + local_id,
        }
    }

    /// Global ids owned by one language, contiguous by construction.
    pub fn global_range(&self, language: usize) -> Range<usize> {
        let start = self.entity_offsets[language];
        let end = start + self.languages[language].entity_count();
        start..end
    }

    pub fn language_of(&self, global_id: usize) -> usize {
        debug_assert!(global_id < self.total_entities);
        match self.entity_offsets.binary_search(&global_id) {
            Ok(lang) => lang,
            Err(insert) => insert - 1,
        }
    }

    pub fn to_ref(&self, global_id: usize) -> EntityRef {
        let language = self.language_of(global_id);
        EntityRef {
            language,
            local_id: global_id - self.entity_offsets[language],
            global_id,
        }
    }

    pub fn label_of(&self, global_id: usize) -> &str {
        let e = self.to_ref(global_id);
        self.languages[e.language].label(e.local_id)
    }

    /// `language/label`, unique across the whole corpus.
    pub fn qualified_label(&self, global_id: usize) -> String {
        let e = self.to_ref(global_id);
        format!(
            "{}/{}",
            self.languages[e.language].name,
            self.languages[e.language].label(e.local_id)
        )
    }

    pub fn lookup(&self, language: &str, label: &str) -> Result<EntityRef> {
        let lang = self
            .language_id(language)
            .ok_or_else(|| Error::UnknownEntity {
                language: language.to_string(),
                entity: label.to_string(),
            })?;
        let local = self.languages[lang]
            .local_id(label)
            .ok_or_else(|| Error::UnknownEntity {
                language: language.to_string(),
                entity: label.to_string(),
            })?;
        Ok(self.entity_ref(lang, local))
    }

    pub fn train_contains(&self, key: (usize, usize, usize)) -> bool {
        self.train_facts.contains(&key)
    }

    /// Membership across train ∪ valid ∪ test, for filtered ranking.
    pub fn known_fact(&self, key: (usize, usize, usize)) -> bool {
        self.known_facts.contains(&key)
    }

    pub fn train_triples(&self) -> impl Iterator<Item = &Triple> {
        self.languages.iter().flat_map(|kg| kg.train.iter())
    }

    pub fn total_train_triples(&self) -> usize {
        self.languages.iter().map(|kg| kg.train.len()).sum()
    }

    pub fn resolve_pair(&self, raw: &RawAlignment, provenance: Provenance) -> Result<AlignmentPair> {
        let wrap = |e: Error| {
            Error::invalid(format!(
                "alignment pair ({} {}, {} {}): {e}",
                raw.left_lang, raw.left, raw.right_lang, raw.right
            ))
        };
        let a = self.lookup(&raw.left_lang, &raw.left).map_err(wrap)?;
        let b = self.lookup(&raw.right_lang, &raw.right).map_err(wrap)?;
        AlignmentPair::new(a, b, provenance)
    }
}

/// Label-form triple before interning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, rel: impl Into<String>, tail: impl Into<String>) -> Self {
        RawTriple {
            head: head.into(),
            rel: rel.into(),
            tail: tail.into(),
        }
    }
}

/// Label-form alignment pair before interning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawAlignment {
    pub left_lang: String,
    pub left: String,
    pub right_lang: String,
    pub right: String,
}

/// One language's raw data with an already-decided split.
#[derive(Clone, Debug)]
pub struct RawLanguage {
    pub name: String,
    pub train: Vec<RawTriple>,
    pub valid: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
    /// Entities to intern even if no triple mentions them, interned
    /// before triple entities so callers can rely on their local ids.
    pub extra_entities: Vec<String>,
}

impl RawLanguage {
    /// Split an unsplit triple list by `ratios = (train, valid, test)`.
    pub fn from_unsplit(
        name: impl Into<String>,
        triples: Vec<RawTriple>,
        ratios: (f64, f64, f64),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (train, valid, test) = split_triples(triples, ratios, rng)?;
        Ok(RawLanguage {
            name: name.into(),
            train,
            valid,
            test,
            extra_entities: Vec::new(),
        })
    }
}

/// Disjoint train/valid/test split with valid and test sizes rounded
/// to nearest and the remainder kept for training. Deterministic for a
/// given RNG state.
pub fn split_triples<T>(
    triples: Vec<T>,
    ratios: (f64, f64, f64),
    rng: &mut impl Rng,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (r_train, r_valid, r_test) = ratios;
    if triples.is_empty() {
        return Err(Error::invalid("cannot split an empty triple list"));
    }
    for r in [r_train, r_valid, r_test] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("split ratio {r} outside [0, 1]")));
        }
    }
    if ((r_train + r_valid + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios ({r_train}, {r_valid}, {r_test}) do not sum to 1"
        )));
    }
    let n = triples.len();
    let n_valid = ((n as f64) * r_valid).round() as usize;
    let n_test = (((n as f64) * r_test).round() as usize).min(n - n_valid);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut bucket = vec![0u8; n]; // 0 = train, 1 = valid, 2 = test
    for &i in &order[..n_valid] {
        bucket[i] = 1;
    }
    for &i in &order[n_valid..n_valid + n_test] {
        bucket[i] = 2;
    }

    let mut train = Vec::with_capacity(n - n_valid - n_test);
    let mut valid = Vec::with_capacity(n_valid);
    let mut test = Vec::with_capacity(n_test);
    for (item, b) in triples.into_iter().zip(bucket) {
        match b {
            1 => valid.push(item),
            2 => test.push(item),
            _ => train.push(item),
        }
    }
    Ok((train, valid, test))
}

/// Assembles a [`MultiKg`] from raw per-language data, interning every
/// label to dense ids and reserving the alignment relation last.
#[derive(Default)]
pub struct CorpusBuilder {
    languages: Vec<RawLanguage>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        CorpusBuilder::default()
    }

    pub fn add_language(&mut self, language: RawLanguage) -> Result<&mut Self> {
        if self.languages.iter().any(|l| l.name == language.name) {
            return Err(Error::invalid(format!(
                "language {:?} added twice",
                language.name
            )));
        }
        if language.name.is_empty() || language.name.contains(['/', '\t']) {
            return Err(Error::invalid(format!(
                "language name {:?} is empty or contains '/' or a tab",
                language.name
            )));
        }
        self.languages.push(language);
        Ok(self)
    }

    pub fn build(self) -> Result<MultiKg> {
        if self.languages.is_empty() {
            return Err(Error::invalid("corpus needs at least one language"));
        }

        // Relation interning pass: shared vocabulary across languages,
        // first-appearance order, alignment relation appended last.
        let mut relation_labels: Vec<String> = Vec::new();
        let mut relation_index: HashMap<String, usize> = HashMap::new();
        for lang in &self.languages {
            for t in lang.train.iter().chain(&lang.valid).chain(&lang.test) {
                if t.rel == ALIGN_LABEL {
                    return Err(Error::invalid(format!(
                        "relation label {ALIGN_LABEL:?} is reserved and may not \
                         appear in language {:?} triples",
                        lang.name
                    )));
                }
                if !relation_index.contains_key(&t.rel) {
                    relation_index.insert(t.rel.clone(), relation_labels.len());
                    relation_labels.push(t.rel.clone());
                }
            }
        }
        let align_rel = relation_labels.len();
        relation_labels.push(ALIGN_LABEL.to_string());

        let mut languages = Vec::with_capacity(self.languages.len());
        let mut lang_index = HashMap::new();
        let mut entity_offsets = Vec::with_capacity(self.languages.len());
        let mut total_entities = 0usize;
        let mut train_facts = HashSet::new();
        let mut known_facts = HashSet::new();

        for (lang_id, raw) in self.languages.into_iter().enumerate() {
            entity_offsets.push(total_entities);
            let offset = total_entities;

            let mut entity_labels: Vec<String> = Vec::new();
            let mut entity_index: HashMap<String, usize> = HashMap::new();
            let intern = |label: &str,
                              labels: &mut Vec<String>,
                              index: &mut HashMap<String, usize>| {
                if let Some(&id) = index.get(label) {
                    id
                } else {
                    let id = labels.len();
                    labels.push(label.to_string());
                    index.insert(label.to_string(), id);
                    id
                }
            };
            for label in &raw.extra_entities {
                intern(label, &mut entity_labels, &mut entity_index);
            }

            let mut relations = BTreeSet::new();
            let convert = |raws: &[RawTriple],
                               entity_labels: &mut Vec<String>,
                               entity_index: &mut HashMap<String, usize>,
                               relations: &mut BTreeSet<usize>|
             -> Vec<Triple> {
                raws.iter()
                    .map(|t| {
                        let h = intern(&t.head, entity_labels, entity_index);
                        let tl = intern(&t.tail, entity_labels, entity_index);
                        let rel = relation_index[&t.rel];
                        relations.insert(rel);
                        Triple {
                            head: EntityRef {
                                language: lang_id,
                                local_id: h,
                                global_id: offset + h,
                            },
                            relation: RelationRef {
                                id: rel,
                                is_align: false,
                            },
                            tail: EntityRef {
                                language: lang_id,
                                local_id: tl,
                                global_id: offset + tl,
                            },
                        }
                    })
                    .collect()
            };
            let train = convert(&raw.train, &mut entity_labels, &mut entity_index, &mut relations);
            let valid = convert(&raw.valid, &mut entity_labels, &mut entity_index, &mut relations);
            let test = convert(&raw.test, &mut entity_labels, &mut entity_index, &mut relations);

            // Cross-split leakage check: the same fact in two splits
            // would corrupt both training and filtered evaluation.
            let mut seen: HashMap<(usize, usize, usize), &'static str> = HashMap::new();
            for (split_name, split) in [("train", &train), ("valid", &valid), ("test", &test)] {
                for t in split {
                    if let Some(prev) = seen.insert(t.key(), split_name) {
                        if prev != split_name {
                            return Err(Error::invalid(format!(
                                "language {:?}: triple ({}, {}, {}) appears in both \
                                 {prev} and {split_name} splits",
                                raw.name,
                                entity_labels[t.head.local_id],
                                relation_labels[t.relation.id],
                                entity_labels[t.tail.local_id],
                            )));
                        }
                    }
                }
            }

            for t in &train {
                train_facts.insert(t.key());
            }
            for t in train.iter().chain(&valid).chain(&test) {
                known_facts.insert(t.key());
            }

            total_entities += entity_labels.len();
            lang_index.insert(raw.name.clone(), lang_id);
            languages.push(LanguageKg {
                name: raw.name,
                entity_labels,
                entity_index,
                relations,
                train,
                valid,
                test,
            });
        }

        Ok(MultiKg {
            languages,
            lang_index,
            relation_labels,
            align_rel,
            entity_offsets,
            total_entities,
            train_facts,
            known_facts,
        })
    }
}

/// Convenience for tests and the synthetic generator: build a corpus
/// from (language, [(h, r, t)]) label lists, everything in train.
pub fn corpus_from_labels(data: &[(&str, &[(&str, &str, &str)])]) -> Result<Arc<MultiKg>> {
    let mut builder = CorpusBuilder::new();
    for (name, triples) in data {
        builder.add_language(RawLanguage {
            name: name.to_string(),
            train: triples
                .iter()
                .map(|(h, r, t)| RawTriple::new(*h, *r, *t))
                .collect(),
            valid: Vec::new(),
            test: Vec::new(),
            extra_entities: Vec::new(),
        })?;
    }
    Ok(Arc::new(builder.build()?))
}

/// Like [`corpus_from_labels`] but with explicit entity lists, interned
/// first so local ids follow list order even for triple-less entities.
pub fn corpus_with_entities(
    data: &[(&str, &[&str], &[(&str, &str, &str)])],
) -> Result<Arc<MultiKg>> {
    let mut builder = CorpusBuilder::new();
    for (name, entities, triples) in data {
        builder.add_language(RawLanguage {
            name: name.to_string(),
            train: triples
                .iter()
                .map(|(h, r, t)| RawTriple::new(*h, *r, *t))
                .collect(),
            valid: Vec::new(),
            test: Vec::new(),
            extra_entities: entities.iter().map(|s| s.to_string()).collect(),
        })?;
    }
    Ok(Arc::new(builder.build()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interning_assigns_contiguous_ids_with_offsets() {
        let corpus = corpus_from_labels(&[
            ("de", &[("a", "r1", "b"), ("b", "r2", "c")]),
            ("fr", &[("x", "r1", "y")]),
        ])
        .unwrap();
        assert_eq!(corpus.num_languages(), 2);
        assert_eq!(corpus.language(0).entity_count(), 3);
        assert_eq!(corpus.language(1).entity_count(), 2);
        assert_eq!(corpus.total_entities(), 5);
        assert_eq!(corpus.global_range(1), 3..5);
        // r_align is always the last relation.
        assert_eq!(corpus.relation_labels(), &["r1", "r2", ALIGN_LABEL]);
        assert!(corpus.align_relation().is_align);
        assert_eq!(corpus.align_relation().id, 2);

        let x = corpus.lookup("fr", "x").unwrap();
        assert_eq!(x.global_id, 3);
        assert_eq!(corpus.language_of(3), 1);
        assert_eq!(corpus.language_of(2), 0);
        assert_eq!(corpus.to_ref(4), corpus.lookup("fr", "y").unwrap());
        assert_eq!(corpus.qualified_label(0), "de/a");
    }

    #[test]
    fn lookup_unknown_entity_is_a_structured_error() {
        let corpus = corpus_from_labels(&[("de", &[("a", "r", "b")])]).unwrap();
        let err = corpus.lookup("de", "zzz").unwrap_err();
        assert!(matches!(err, Error::UnknownEntity { .. }), "{err}");
        assert!(corpus.lookup("nolang", "a").is_err());
    }

    #[test]
    fn reserved_relation_label_is_rejected() {
        let err = corpus_from_labels(&[("de", &[("a", ALIGN_LABEL, "b")])]).unwrap_err();
        assert!(err.to_string().contains("reserved"), "{err}");
    }

    #[test]
    fn pair_canonicalizes_and_rejects_same_language() {
        let corpus = corpus_from_labels(&[
            ("de", &[("a", "r", "b")]),
            ("fr", &[("x", "r", "y")]),
        ])
        .unwrap();
        let a = corpus.lookup("de", "a").unwrap();
        let x = corpus.lookup("fr", "x").unwrap();
        let p1 = AlignmentPair::new(a, x, Provenance::Seed).unwrap();
        let p2 = AlignmentPair::new(x, a, Provenance::Seed).unwrap();
        assert_eq!(p1.key(), p2.key());
        assert!(p1.left.global_id < p1.right.global_id);

        let b = corpus.lookup("de", "b").unwrap();
        assert!(AlignmentPair::new(a, b, Provenance::Seed).is_err());
    }

    #[test]
    fn split_has_exact_sizes_and_is_deterministic() {
        let triples: Vec<u32> = (0..100).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (train, valid, test) =
            split_triples(triples.clone(), (0.6, 0.3, 0.1), &mut rng).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (60, 30, 10));

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let again = split_triples(triples, (0.6, 0.3, 0.1), &mut rng2).unwrap();
        assert_eq!((train, valid, test), again);
    }

    #[test]
    fn split_rounds_remainder_into_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, valid, test) =
            split_triples((0..7).collect::<Vec<_>>(), (0.6, 0.3, 0.1), &mut rng).unwrap();
        // round(7 * 0.3) = 2, round(7 * 0.1) = 1, remainder 4 to train.
        assert_eq!((train.len(), valid.len(), test.len()), (4, 2, 1));
    }

    #[test]
    fn split_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(split_triples(Vec::<u32>::new(), (0.6, 0.3, 0.1), &mut rng).is_err());
        assert!(split_triples(vec![1], (0.5, 0.2, 0.1), &mut rng).is_err());
    }

    #[test]
    fn cross_split_duplicate_triple_is_rejected() {
        let mut builder = CorpusBuilder::new();
        builder
            .add_language(RawLanguage {
                name: "de".into(),
                train: vec![RawTriple::new("a", "r", "b")],
                valid: vec![RawTriple::new("a", "r", "b")],
                test: vec![],
                extra_entities: vec![],
            })
            .unwrap();
        let err = builder.build().unwrap_err();
        assert!(err.to_string().contains("both train and valid"), "{err}");
    }

    #[test]
    fn extra_entities_intern_first() {
        let mut builder = CorpusBuilder::new();
        builder
            .add_language(RawLanguage {
                name: "de".into(),
                train: vec![RawTriple::new("b", "r", "c")],
                valid: vec![],
                test: vec![],
                extra_entities: vec!["a".into(), "b".into(), "c".into()],
            })
            .unwrap();
        let corpus = builder.build().unwrap();
        assert_eq!(corpus.language(0).local_id("a"), Some(0));
        assert_eq!(corpus.language(0).local_id("b"), Some(1));
        assert_eq!(corpus.language(0).local_id("c"), Some(2));
    }

    #[test]
    fn membership_sets_cover_all_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let triples: Vec<RawTriple> = (0..50)
            .map(|i| RawTriple::new(format!("e{i}"), "r", format!("e{}", (i + 1) % 50)))
            .collect();
        let mut builder = CorpusBuilder::new();
        builder
            .add_language(
                RawLanguage::from_unsplit("de", triples, (0.6, 0.3, 0.1), &mut rng).unwrap(),
            )
            .unwrap();
        let corpus = builder.build().unwrap();
        let kg = corpus.language(0);
        assert_eq!(kg.train.len(), 30);
        for t in &kg.train {
            assert!(corpus.train_contains(t.key()));
            assert!(corpus.known_fact(t.key()));
        }
        for t in kg.valid.iter().chain(&kg.test) {
            assert!(!corpus.train_contains(t.key()));
            assert!(corpus.known_fact(t.key()));
        }
    }

    #[test]
    fn reference_scale_corpus_builds() {
        // Indices stay consistent at the scale of the largest public
        // per-language KG this engine targets (~14k entities, ~80k facts).
        let entities = 13_996usize;
        let relations = 831usize;
        let n_triples = 80_167usize;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let triples: Vec<RawTriple> = (0..n_triples)
            .map(|_| {
                let h = rng.random_range(0..entities);
                let t = rng.random_range(0..entities);
                let r = rng.random_range(0..relations);
                RawTriple::new(format!("e{h}"), format!("r{r}"), format!("e{t}"))
            })
            .collect();
        let mut builder = CorpusBuilder::new();
        builder
            .add_language(RawLanguage {
                name: "en".into(),
                train: triples,
                valid: vec![],
                test: vec![],
                extra_entities: (0..entities).map(|i| format!("e{i}")).collect(),
            })
            .unwrap();
        let corpus = builder.build().unwrap();
        assert_eq!(corpus.total_entities(), entities);
        assert_eq!(corpus.num_relations(), relations + 1);
        assert_eq!(corpus.language(0).train.len(), n_triples);
        assert_eq!(corpus.language_of(entities - 1), 0);
    }
}
