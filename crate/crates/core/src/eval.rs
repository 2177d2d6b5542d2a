//! Reranking pipelines, ranking metrics, and TREC run files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::Judgment;
use crate::error::{Error, Result};
use crate::ranker::{PairFeaturizer, RankerModel};
use crate::retrievers::{rank_order, Candidate, CandidateGenerator, CandidateList, QueryInput};
use crate::scalar::Scalar;

/// A ranked list for one query: score descending, ties by doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct RunList<T> {
    pub query_id: String,
    pub entries: Vec<(String, T)>,
}

impl<T: Scalar> RunList<T> {
    /// Sorts `entries` into run order.
    pub fn new(query_id: impl Into<String>, mut entries: Vec<(String, T)>) -> Self {
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<T: Scalar> From<&CandidateList<T>> for RunList<T> {
    fn from(list: &CandidateList<T>) -> Self {
        Self {
            query_id: list.query_id.clone(),
            entries: list
                .entries
                .iter()
                .map(|c| (c.doc_id.clone(), c.score))
                .collect(),
        }
    }
}

/// Judgments indexed by query then document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new(judgments: &[Judgment]) -> Self {
        let mut grades: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for j in judgments {
            grades
                .entry(j.query_id.clone())
                .or_default()
                .insert(j.doc_id.clone(), j.grade);
        }
        Self { grades }
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    fn n_relevant(&self, query_id: &str) -> usize {
        self.query(query_id)
            .map_or(0, |m| m.values().filter(|&&g| g > 0).count())
    }
}

/// Mean of `per_query` over runs whose query has at least one relevant
/// judgment; other queries are dropped with a warning.
fn average<T: Scalar>(
    runs: &[RunList<T>],
    qrels: &Qrels,
    k: usize,
    per_query: impl Fn(&RunList<T>) -> f64,
) -> f64 {
    assert!(k >= 1, "metric depth must be >= 1");
    if runs.is_empty() {
        log::warn!("empty run: metrics default to 0");
        return 0.0;
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for run in runs {
        if qrels.n_relevant(&run.query_id) == 0 {
            log::warn!(
                "query `{}` has no relevant judgments; excluded",
                run.query_id
            );
            continue;
        }
        total += per_query(run);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn mrr_at_k<T: Scalar>(runs: &[RunList<T>], qrels: &Qrels, k: usize) -> f64 {
    average(runs, qrels, k, |run| {
        run.entries
            .iter()
            .take(k)
            .position(|(d, _)| qrels.grade(&run.query_id, d) > 0)
            .map_or(0.0, |i| 1.0 / (i + 1) as f64)
    })
}

pub fn recall_at_k<T: Scalar>(runs: &[RunList<T>], qrels: &Qrels, k: usize) -> f64 {
    average(runs, qrels, k, |run| {
        let hits = run
            .entries
            .iter()
            .take(k)
            .filter(|(d, _)| qrels.grade(&run.query_id, d) > 0)
            .count();
        hits as f64 / qrels.n_relevant(&run.query_id) as f64
    })
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}

/// NDCG with gain `2^grade - 1` and discount `log2(rank + 1)`. Queries with
/// zero ideal DCG are excluded.
pub fn ndcg_at_k<T: Scalar>(runs: &[RunList<T>], qrels: &Qrels, k: usize) -> f64 {
    average(runs, qrels, k, |run| {
        let dcg: f64 = run
            .entries
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (d, _))| gain(qrels.grade(&run.query_id, d)) / discount(i))
            .sum();
        let mut ideal: Vec<u32> = qrels
            .query(&run.query_id)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i))
            .sum();
        if idcg > 0.0 {
            dcg / idcg
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mrr,
    Recall,
    Ndcg,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mrr => "mrr",
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }

    pub fn compute<T: Scalar>(self, runs: &[RunList<T>], qrels: &Qrels, k: usize) -> f64 {
        match self {
            Metric::Mrr => mrr_at_k(runs, qrels, k),
            Metric::Recall => recall_at_k(runs, qrels, k),
            Metric::Ndcg => ndcg_at_k(runs, qrels, k),
        }
    }
}

/// `metric@k \t value` lines, one per (metric, k). Values use the shortest
/// form that parses back to the same `f64`.
pub fn format_metrics(values: &[(Metric, usize, f64)]) -> String {
    let mut out = String::new();
    for (m, k, v) in values {
        let _ = writeln!(out, "{}@{}\t{}", m.name(), k, v);
    }
    out
}

/// Reorders a candidate list by ranker score.
pub fn rerank<T: Scalar>(
    ranker: &RankerModel<T>,
    featurizer: &PairFeaturizer<'_, T>,
    query: &QueryInput<T>,
    candidates: &CandidateList<T>,
) -> Result<RunList<T>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no candidates to rerank for `{}`",
            query.id
        )));
    }
    let prepared = featurizer.prepare(query)?;
    let mut scored = candidates
        .entries
        .iter()
        .map(|c| {
            Ok(Candidate {
                doc: c.doc,
                doc_id: c.doc_id.clone(),
                score: ranker.score(&featurizer.features(&prepared, c.doc))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(rank_order);
    Ok(RunList {
        query_id: query.id.clone(),
        entries: scored.into_iter().map(|c| (c.doc_id, c.score)).collect(),
    })
}

/// Retriever top-`depth` for every query, then reranked. Queries whose
/// candidate list is empty yield an empty run.
pub fn full_rank<T: Scalar>(
    retriever: &dyn CandidateGenerator<T>,
    ranker: &RankerModel<T>,
    featurizer: &PairFeaturizer<'_, T>,
    queries: &[QueryInput<T>],
    depth: usize,
) -> Result<Vec<RunList<T>>> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    queries
        .par_iter()
        .map(|q| {
            let candidates = retriever.top_k(q, depth);
            if candidates.is_empty() {
                Ok(RunList {
                    query_id: q.id.clone(),
                    entries: Vec::new(),
                })
            } else {
                rerank(ranker, featurizer, q, &candidates)
            }
        })
        .collect()
}

/// First-stage runs only.
pub fn retrieve<T: Scalar>(
    retriever: &dyn CandidateGenerator<T>,
    queries: &[QueryInput<T>],
    depth: usize,
) -> Vec<RunList<T>> {
    queries
        .par_iter()
        .map(|q| RunList::from(&retriever.top_k(q, depth)))
        .collect()
}

/// TREC run lines `qid Q0 docid rank score tag`, rank 1-based, scores in
/// shortest round-trip notation.
pub fn format_run<T: Scalar>(runs: &[RunList<T>], tag: &str) -> String {
    let mut out = String::new();
    for run in runs {
        for (i, (doc, score)) in run.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {} {}",
                run.query_id,
                doc,
                i + 1,
                score.to_f64_lossy(),
                tag
            );
        }
    }
    out
}

/// Parses a TREC run; each query's list is re-sorted into run order.
pub fn parse_run(text: &str) -> Result<Vec<RunList<f64>>> {
    let mut order: Vec<String> = Vec::new();
    let mut lists: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(Error::malformed(
                i + 1,
                format!("expected 6 run columns, found {}", fields.len()),
            ));
        }
        fields[3]
            .parse::<usize>()
            .map_err(|_| Error::malformed(i + 1, format!("bad rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::malformed(i + 1, format!("bad score `{}`", fields[4])))?;
        let qid = fields[0].to_string();
        if !lists.contains_key(&qid) {
            order.push(qid.clone());
        }
        let list = lists.entry(qid).or_default();
        if list.iter().any(|(d, _)| d == fields[2]) {
            return Err(Error::malformed(
                i + 1,
                format!("duplicate document `{}`", fields[2]),
            ));
        }
        list.push((fields[2].to_string(), score));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let entries = lists.remove(&q).unwrap_or_default();
            RunList::new(q, entries)
        })
        .collect())
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RunList<f64>>> {
    let path = path.as_ref();
    parse_run(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
