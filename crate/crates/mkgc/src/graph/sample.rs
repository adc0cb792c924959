//! Seeded k-hop neighborhood sampling for mini-batch encoding.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AdjEntry, Direction, FusedKg, GraphView, MultiKg};

/// A connected-to-seeds slice of a [`FusedKg`]. Entities and fact ids
/// stay in the global id space, so encoder output maps straight back
/// onto the full graph.
#[derive(Debug)]
pub struct SubgraphSample<'a> {
    base: &'a FusedKg,
    seeds: Vec<usize>,
    entities: Vec<usize>,
    fact_ids: Vec<usize>,
    adjacency: HashMap<usize, Vec<AdjEntry>>,
}

/// BFS from `seeds` for `k` hops. At each hop every frontier entity
/// keeps at most `fanout` of its adjacency entries, drawn uniformly
/// without replacement; traversed facts and their endpoints form the
/// sample. Deterministic for a given RNG state.
pub fn sample_khop<'a>(
    fused: &'a FusedKg,
    seeds: &[usize],
    k: usize,
    fanout: usize,
    rng: &mut impl Rng,
) -> Result<SubgraphSample<'a>> {
    if k == 0 {
        return Err(Error::invalid("k-hop sampling needs k >= 1"));
    }
    if fanout == 0 {
        return Err(Error::invalid("k-hop sampling needs fanout >= 1"));
    }
    let total = fused.corpus().total_entities();
    for &s in seeds {
        if s >= total {
            return Err(Error::invalid(format!(
                "seed entity {s} out of range (corpus has {total} entities)"
            )));
        }
    }

    let mut retained: HashSet<usize> = HashSet::new();
    let mut frontier: Vec<usize> = Vec::new();
    for &s in seeds {
        if retained.insert(s) {
            frontier.push(s);
        }
    }
    frontier.sort_unstable();
    let dedup_seeds = frontier.clone();

    let mut kept_facts: HashSet<usize> = HashSet::new();
    for _ in 0..k {
        let mut next = Vec::new();
        for &e in &frontier {
            let nbrs = fused.neighbors(e);
            if nbrs.is_empty() {
                continue;
            }
            let chosen: Vec<usize> = if nbrs.len() <= fanout {
                (0..nbrs.len()).collect()
            } else {
                let mut picked = index_sample(rng, nbrs.len(), fanout).into_vec();
                picked.sort_unstable();
                picked
            };
            for i in chosen {
                let entry = nbrs[i];
                kept_facts.insert(entry.fact);
                if retained.insert(entry.neighbor) {
                    next.push(entry.neighbor);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }

    let mut entities: Vec<usize> = retained.into_iter().collect();
    entities.sort_unstable();
    let mut fact_ids: Vec<usize> = kept_facts.into_iter().collect();
    fact_ids.sort_unstable();

    let mut adjacency: HashMap<usize, Vec<AdjEntry>> = HashMap::new();
    for &fact in &fact_ids {
        let t = fused.fact(fact);
        adjacency.entry(t.head.global_id).or_default().push(AdjEntry {
            fact,
            neighbor: t.tail.global_id,
            rel: t.relation,
            dir: Direction::Out,
        });
        adjacency.entry(t.tail.global_id).or_default().push(AdjEntry {
            fact,
            neighbor: t.head.global_id,
            rel: t.relation,
            dir: Direction::In,
        });
    }

    Ok(SubgraphSample {
        base: fused,
        seeds: dedup_seeds,
        entities,
        fact_ids,
        adjacency,
    })
}

impl SubgraphSample<'_> {
    pub fn base(&self) -> &FusedKg {
        self.base
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn fact_ids(&self) -> &[usize] {
        &self.fact_ids
    }

    pub fn contains(&self, global: usize) -> bool {
        self.entities.binary_search(&global).is_ok()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }
}

impl GraphView for SubgraphSample<'_> {
    fn corpus(&self) -> &MultiKg {
        self.base.corpus()
    }

    fn entities(&self) -> &[usize] {
        &self.entities
    }

    fn for_each_neighbor(&self, global: usize, f: &mut dyn FnMut(AdjEntry)) {
        if let Some(entries) = self.adjacency.get(&global) {
            for e in entries {
                f(*e);
            }
        }
    }
}
