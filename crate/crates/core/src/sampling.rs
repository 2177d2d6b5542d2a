//! Negative pools and negative draws.
//!
//! A pool holds each generator's top-`top_n` non-positive documents. Pools
//! from several generators are concatenated without de-duplication, so a
//! document surfaced by two generators appears twice and is drawn twice as
//! often by [`draw_negatives`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::retrievers::{CandidateGenerator, QueryInput};
use crate::scalar::Scalar;

pub const DEFAULT_TOP_N: usize = 200;
pub const DEFAULT_NEGATIVES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub top_n: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            m: DEFAULT_NEGATIVES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub doc: usize,
    pub doc_id: String,
    pub source: String,
    /// 1-based rank in the generator's list before positives were removed.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativePool {
    pub query_id: String,
    pub top_n: usize,
    pub entries: Vec<PoolEntry>,
}

impl NegativePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries contributed by each source, in first-seen order.
    pub fn source_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(s, _)| *s == e.source) {
                Some((_, n)) => *n += 1,
                None => out.push((e.source.clone(), 1)),
            }
        }
        out
    }
}

/// Uniform draw of `m` distinct non-positive documents from the whole
/// collection, returned as ordinals.
pub fn sample_random(
    doc_ids: &[String],
    positives: &BTreeSet<String>,
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..doc_ids.len())
        .filter(|&d| !positives.contains(&doc_ids[d]))
        .collect();
    if m > eligible.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {m} random negatives from {} eligible documents",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, eligible.len(), m)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// One generator's top-`top_n` documents with positives removed.
pub fn candidate_pool<T: Scalar, G: CandidateGenerator<T> + ?Sized>(
    generator: &G,
    query: &QueryInput<T>,
    positives: &BTreeSet<String>,
    top_n: usize,
) -> NegativePool {
    let list = generator.top_k(query, top_n + positives.len());
    let entries = list
        .entries
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !positives.contains(&c.doc_id))
        .take(top_n)
        .map(|(i, c)| PoolEntry {
            doc: c.doc,
            doc_id: c.doc_id,
            source: generator.name().to_string(),
            rank: i + 1,
        })
        .collect();
    NegativePool {
        query_id: query.id.clone(),
        top_n,
        entries,
    }
}

/// Concatenation of every generator's capped pool, duplicates retained.
pub fn joint_pool<T: Scalar>(
    generators: &[&dyn CandidateGenerator<T>],
    query: &QueryInput<T>,
    positives: &BTreeSet<String>,
    top_n: usize,
) -> Result<NegativePool> {
    if generators.is_empty() {
        return Err(Error::InvalidArgument(
            "joint pool needs at least one generator".into(),
        ));
    }
    let mut entries = Vec::new();
    for g in generators {
        entries.extend(candidate_pool(*g, query, positives, top_n).entries);
    }
    Ok(NegativePool {
        query_id: query.id.clone(),
        top_n,
        entries,
    })
}

/// Uniform draw of `m` pool entries: without replacement when the pool is
/// large enough, with replacement otherwise.
pub fn draw_negatives(pool: &NegativePool, m: usize, seed: u64) -> Result<Vec<&PoolEntry>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "negative pool for `{}` is empty",
            pool.query_id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if m > pool.len() {
        Ok((0..m)
            .map(|_| &pool.entries[rng.gen_range(0..pool.len())])
            .collect())
    } else {
        Ok(index::sample(&mut rng, pool.len(), m)
            .into_iter()
            .map(|i| &pool.entries[i])
            .collect())
    }
}

/// Pools as `qid \t docid \t source \t rank_in_source` lines.
pub fn format_pools(pools: &[NegativePool]) -> String {
    let mut out = String::new();
    for pool in pools {
        for e in &pool.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                pool.query_id, e.doc_id, e.source, e.rank
            );
        }
    }
    out
}
