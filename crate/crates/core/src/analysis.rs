//! Negative-distribution diagnostics: softmax-of-scores distributions over a
//! shared support, their product across generators, KL to BM25, and the
//! generator-to-ranker distribution shift.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranker::{PairFeaturizer, RankerModel};
use crate::retrievers::{CandidateGenerator, QueryInput};
use crate::scalar::Scalar;
use crate::training::softmax;

/// Probability floor for documents a scorer cannot score, and for the
/// denominator of KL.
pub const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportDistribution<T> {
    pub support: Vec<String>,
    pub probs: Vec<T>,
    pub source: String,
}

impl<T: Scalar> SupportDistribution<T> {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob(&self, doc_id: &str) -> Option<T> {
        self.support
            .iter()
            .position(|d| d == doc_id)
            .map(|i| self.probs[i])
    }
}

fn normalize<T: Scalar>(mut probs: Vec<T>) -> Result<Vec<T>> {
    let z: T = probs.iter().copied().sum();
    if !z.is_finite() || z <= T::zero() {
        return Err(Error::DegenerateDistribution);
    }
    probs.iter_mut().for_each(|p| *p = *p / z);
    Ok(probs)
}

fn check_support(support: &[String]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let distinct: BTreeSet<&String> = support.iter().collect();
    if distinct.len() != support.len() {
        return Err(Error::InvalidArgument(
            "support contains duplicate documents".into(),
        ));
    }
    Ok(())
}

/// Softmax of the scorer's scores restricted to `support`. Documents the
/// scorer does not know get probability [`EPSILON`] before renormalizing.
pub fn model_distribution<T: Scalar, G: CandidateGenerator<T> + ?Sized>(
    scorer: &G,
    query: &QueryInput<T>,
    support: &[String],
) -> Result<SupportDistribution<T>> {
    check_support(support)?;
    let all = scorer.score_all(query);
    let ordinal: BTreeMap<&str, usize> = scorer
        .doc_ids()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let scores: Vec<Option<T>> = support
        .iter()
        .map(|d| {
            ordinal
                .get(d.as_str())
                .map(|&i| all[i])
                .filter(|s| s.is_finite())
        })
        .collect();
    let known: Vec<T> = scores.iter().flatten().copied().collect();
    let probs = if known.len() == scores.len() {
        softmax(&known)
    } else {
        let mut soft = if known.is_empty() {
            Vec::new()
        } else {
            softmax(&known)
        }
        .into_iter();
        let raw = scores
            .iter()
            .map(|s| match s {
                Some(_) => soft.next().unwrap_or_else(T::zero),
                None => T::of(EPSILON),
            })
            .collect();
        normalize(raw)?
    };
    Ok(SupportDistribution {
        support: support.to_vec(),
        probs,
        source: scorer.name().to_string(),
    })
}

/// Elementwise product of each scorer's distribution over the shared support,
/// renormalized. A single scorer yields its own distribution unchanged.
pub fn joint_distribution<T: Scalar>(
    scorers: &[&dyn CandidateGenerator<T>],
    query: &QueryInput<T>,
    support: &[String],
) -> Result<SupportDistribution<T>> {
    let (first, rest) = scorers.split_first().ok_or_else(|| {
        Error::InvalidArgument("joint distribution needs at least one scorer".into())
    })?;
    let mut joint = model_distribution(*first, query, support)?;
    if rest.is_empty() {
        return Ok(joint);
    }
    for s in rest {
        let d = model_distribution(*s, query, support)?;
        joint
            .probs
            .iter_mut()
            .zip(&d.probs)
            .for_each(|(p, q)| *p = *p * *q);
        joint.source = format!("{}+{}", joint.source, d.source);
    }
    joint.probs = normalize(joint.probs)?;
    Ok(joint)
}

/// `Σ p ln(p / max(q, ε))`, with `0 ln 0 = 0`. Entries where `p = q` add
/// exactly zero, so `KL(p, p) = 0` even below the floor; the floor can lift
/// `q`'s mass above one, so the sum is clamped at zero.
pub fn kl_divergence<T: Scalar>(
    p: &SupportDistribution<T>,
    q: &SupportDistribution<T>,
) -> Result<T> {
    if p.support != q.support {
        return Err(Error::SupportMismatch);
    }
    let eps = T::of(EPSILON);
    let kl: T = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(pi, qi)| **pi > T::zero() && pi != qi)
        .map(|(&pi, &qi)| pi * (pi / qi.max(eps)).ln())
        .sum();
    Ok(kl.max(T::zero()))
}

/// A ranker viewed as a scorer over the whole collection.
pub struct RankerScorer<'a, T> {
    name: String,
    ranker: &'a RankerModel<T>,
    featurizer: &'a PairFeaturizer<'a, T>,
}

impl<'a, T: Scalar> RankerScorer<'a, T> {
    pub fn new(
        name: impl Into<String>,
        ranker: &'a RankerModel<T>,
        featurizer: &'a PairFeaturizer<'a, T>,
    ) -> Self {
        Self {
            name: name.into(),
            ranker,
            featurizer,
        }
    }
}

impl<T: Scalar> CandidateGenerator<T> for RankerScorer<'_, T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn doc_ids(&self) -> &[String] {
        self.featurizer.doc_ids()
    }

    /// Non-finite scores mark documents that could not be scored.
    fn score_all(&self, query: &QueryInput<T>) -> Vec<T> {
        let n = self.featurizer.doc_ids().len();
        match self.featurizer.prepare(query) {
            Ok(prepared) => (0..n)
                .map(|d| {
                    self.ranker
                        .score(&self.featurizer.features(&prepared, d))
                        .unwrap_or_else(|_| T::nan())
                })
                .collect(),
            Err(_) => vec![T::nan(); n],
        }
    }
}

/// Union of each scorer's top-`top_n` list minus positives, in first-seen
/// order.
pub fn union_support<T: Scalar>(
    scorers: &[&dyn CandidateGenerator<T>],
    query: &QueryInput<T>,
    positives: &BTreeSet<String>,
    top_n: usize,
) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut support = Vec::new();
    for s in scorers {
        let list = s.top_k(query, top_n + positives.len());
        for c in list
            .entries
            .into_iter()
            .filter(|c| !positives.contains(&c.doc_id))
            .take(top_n)
        {
            if seen.insert(c.doc_id.clone()) {
                support.push(c.doc_id);
            }
        }
    }
    support
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shift {
    /// KL of the joint generator distribution to BM25.
    pub kl_generators: f64,
    /// KL of the ranker distribution to BM25.
    pub kl_ranker: f64,
    pub delta: f64,
}

impl Shift {
    pub fn abs(&self) -> f64 {
        self.delta.abs()
    }
}

/// `Δ = KL(joint ‖ BM25) − KL(ranker ‖ BM25)` on the union of every model's
/// top-`top_n` list, positives excluded.
pub fn distribution_shift<T: Scalar>(
    generators: &[&dyn CandidateGenerator<T>],
    bm25: &dyn CandidateGenerator<T>,
    ranker: &dyn CandidateGenerator<T>,
    query: &QueryInput<T>,
    positives: &BTreeSet<String>,
    top_n: usize,
) -> Result<Shift> {
    let mut all: Vec<&dyn CandidateGenerator<T>> = generators.to_vec();
    all.push(bm25);
    all.push(ranker);
    let support = union_support(&all, query, positives, top_n);
    let reference = model_distribution(bm25, query, &support)?;
    let joint = joint_distribution(generators, query, &support)?;
    let ranked = model_distribution(ranker, query, &support)?;
    let kl_generators = kl_divergence(&joint, &reference)?.to_f64_lossy();
    let kl_ranker = kl_divergence(&ranked, &reference)?.to_f64_lossy();
    Ok(Shift {
        kl_generators,
        kl_ranker,
        delta: kl_generators - kl_ranker,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigurePoint {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

pub fn format_figure_data(points: &[FigurePoint]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{}", p.label, p.x, p.y);
    }
    out
}

pub fn parse_figure_data(text: &str) -> Result<Vec<FigurePoint>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::malformed(i + 1, "expected `label \\t x \\t y`"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::malformed(i + 1, format!("bad number `{s}`")))
            };
            Ok(FigurePoint {
                label: fields[0].to_string(),
                x: num(fields[1])?,
                y: num(fields[2])?,
            })
        })
        .collect()
}

pub fn emit_figure_data(points: &[FigurePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_figure_data(points)).map_err(|e| Error::io(path, e))
}
