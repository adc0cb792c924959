//! Desk-scale synthetic multilingual corpora.
//!
//! A latent KG is sampled once; each language keeps an independent
//! `coverage` fraction of its triples under renamed entities, so
//! languages describe the same world with different completeness. The
//! cross-language identity over latent entities is the alignment
//! ground truth; a configured fraction of it becomes the seed set.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{
    AlignmentPair, CorpusBuilder, MultiKg, Provenance, RawLanguage, RawTriple,
};

/// Generation parameters. `coverage` must list one fraction per
/// language.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub languages: usize,
    pub base_entities: usize,
    pub base_relations: usize,
    pub base_triples: usize,
    pub coverage: Vec<f64>,
    pub seed_alignment_ratio: f64,
    pub noise_ratio: f64,
    pub split: (f64, f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            languages: 2,
            base_entities: 200,
            base_relations: 8,
            base_triples: 600,
            coverage: vec![1.0, 0.6],
            seed_alignment_ratio: 0.4,
            noise_ratio: 0.05,
            split: (0.6, 0.3, 0.1),
        }
    }
}

/// A generated corpus plus its alignment supervision.
#[derive(Debug)]
pub struct SyntheticData {
    pub corpus: Arc<MultiKg>,
    pub seed_pairs: Vec<AlignmentPair>,
    pub ground_truth: Vec<AlignmentPair>,
    /// Latent entity id behind each global id; counterpart entities
    /// across languages share it.
    pub latent_of: Vec<usize>,
}

fn lang_name(i: usize) -> String {
    format!("l{i}")
}

fn entity_label(lang: usize, latent: usize) -> String {
    format!("l{lang}_e{latent}")
}

pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<SyntheticData> {
    if spec.languages < 2 {
        return Err(Error::invalid("synthetic corpus needs at least 2 languages"));
    }
    if spec.coverage.len() != spec.languages {
        return Err(Error::invalid(format!(
            "coverage has {} entries for {} languages",
            spec.coverage.len(),
            spec.languages
        )));
    }
    for &c in &spec.coverage {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!("coverage {c} outside (0, 1]")));
        }
    }
    if !(0.0..=1.0).contains(&spec.seed_alignment_ratio) {
        return Err(Error::invalid(format!(
            "seed_alignment_ratio {} outside [0, 1]",
            spec.seed_alignment_ratio
        )));
    }
    if !(0.0..1.0).contains(&spec.noise_ratio) {
        return Err(Error::invalid(format!(
            "noise_ratio {} outside [0, 1)",
            spec.noise_ratio
        )));
    }
    if spec.base_entities < 2 || spec.base_relations == 0 || spec.base_triples == 0 {
        return Err(Error::invalid(
            "synthetic corpus needs >= 2 entities, >= 1 relation and >= 1 triple",
        ));
    }
    let capacity = spec.base_entities * (spec.base_entities - 1) * spec.base_relations;
    if spec.base_triples > capacity / 2 {
        return Err(Error::invalid(format!(
            "{} triples over {} entities / {} relations is too dense to sample distinctly",
            spec.base_triples, spec.base_entities, spec.base_relations
        )));
    }

    // Latent world: distinct (h, r, t) with h != t.
    let mut latent: Vec<(usize, usize, usize)> = Vec::with_capacity(spec.base_triples);
    let mut seen = HashSet::with_capacity(spec.base_triples);
    while latent.len() < spec.base_triples {
        let h = rng.random_range(0..spec.base_entities);
        let t = rng.random_range(0..spec.base_entities);
        if h == t {
            continue;
        }
        let r = rng.random_range(0..spec.base_relations);
        if seen.insert((h, r, t)) {
            latent.push((h, r, t));
        }
    }

    let mut builder = CorpusBuilder::new();
    for lang in 0..spec.languages {
        let keep = ((spec.base_triples as f64) * spec.coverage[lang]).round() as usize;
        if keep == 0 {
            return Err(Error::invalid(format!(
                "coverage {} of {} triples leaves language {} empty",
                spec.coverage[lang],
                spec.base_triples,
                lang_name(lang)
            )));
        }
        let kept_idx = sample(rng, spec.base_triples, keep);
        let mut kept: Vec<(usize, usize, usize)> = kept_idx.iter().map(|i| latent[i]).collect();

        // Corrupt a fraction of tails with a same-language uniform
        // resample, steering clear of keys the language already holds
        // so the splits stay duplicate-free.
        let noisy = ((kept.len() as f64) * spec.noise_ratio).round() as usize;
        if noisy > 0 {
            let mut keys: HashSet<(usize, usize, usize)> = kept.iter().copied().collect();
            for i in sample(rng, kept.len(), noisy) {
                let (h, r, _) = kept[i];
                keys.remove(&kept[i]);
                let mut tries = 0;
                loop {
                    let t = rng.random_range(0..spec.base_entities);
                    if t != h && !keys.contains(&(h, r, t)) {
                        kept[i] = (h, r, t);
                        keys.insert((h, r, t));
                        break;
                    }
                    tries += 1;
                    if tries > 1000 {
                        return Err(Error::invalid(
                            "noise resampling could not find a fresh tail; \
                             the synthetic graph is too dense",
                        ));
                    }
                }
            }
        }

        let triples: Vec<RawTriple> = kept
            .iter()
            .map(|&(h, r, t)| {
                RawTriple::new(
                    entity_label(lang, h),
                    format!("r{r}"),
                    entity_label(lang, t),
                )
            })
            .collect();

        let mut language =
            RawLanguage::from_unsplit(lang_name(lang), triples, spec.split, rng)?;
        // Every latent entity exists in every language, in latent order.
        language.extra_entities = (0..spec.base_entities)
            .map(|e| entity_label(lang, e))
            .collect();
        builder.add_language(language)?;
    }
    let corpus = Arc::new(builder.build()?);

    // Entities were interned extras-first, so local id == latent id.
    let latent_of: Vec<usize> = (0..corpus.total_entities())
        .map(|g| corpus.to_ref(g).local_id)
        .collect();

    let mut ground_truth = Vec::new();
    let mut seed_pairs = Vec::new();
    for i in 0..spec.languages {
        for j in (i + 1)..spec.languages {
            let pair_start = ground_truth.len();
            for e in 0..spec.base_entities {
                ground_truth.push(AlignmentPair::new(
                    corpus.entity_ref(i, e),
                    corpus.entity_ref(j, e),
                    Provenance::Seed,
                )?);
            }
            let n_seed =
                ((spec.base_entities as f64) * spec.seed_alignment_ratio).round() as usize;
            let mut chosen = sample(rng, spec.base_entities, n_seed).into_vec();
            chosen.sort_unstable();
            for e in chosen {
                seed_pairs.push(ground_truth[pair_start + e]);
            }
        }
    }

    Ok(SyntheticData {
        corpus,
        seed_pairs,
        ground_truth,
        latent_of,
    })
}

/// Synthetic per-entity text vectors: one latent Gaussian vector per
/// latent entity, re-observed in every language with additive noise of
/// the given standard deviation. Counterpart entities therefore have
/// nearly parallel vectors, which is what real multilingual text
/// embeddings provide for aligned entities.
pub fn synthetic_text_vectors(
    data: &SyntheticData,
    dim: usize,
    noise: f64,
    rng: &mut impl Rng,
) -> std::collections::HashMap<usize, Vec<f64>> {
    let n_latent = data.latent_of.iter().copied().max().map_or(0, |m| m + 1);
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    let latent: Vec<Vec<f64>> = (0..n_latent)
        .map(|_| (0..dim).map(|_| rng.sample(normal)).collect())
        .collect();
    (0..data.corpus.total_entities())
        .map(|g| {
            let base = &latent[data.latent_of[g]];
            let vec = base
                .iter()
                .map(|&v| v + noise * rng.sample(normal))
                .collect();
            (g, vec)
        })
        .collect()
}
