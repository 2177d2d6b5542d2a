//! First-stage retrievers: BM25 over an inverted index plus two trainable
//! bi-encoders (dense and lexicon-weighting). All of them rank the whole
//! collection exhaustively.

mod bm25;
mod dense;
mod lexicon;

use std::cmp::Ordering;

pub use bm25::{
    bm25_accumulate, bm25_score, bm25_score_prepared, bm25_topk, Bm25Params, Bm25Query,
    Bm25Retriever, InvertedIndex, Posting,
};
pub use dense::DenseModel;
pub use lexicon::{rectify, LexModel};

use crate::corpus::{Collection, Query};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::text::{hash_features, tokenize, SparseVector};

/// One retrieved document.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    /// Ordinal of the document in its collection.
    pub doc: usize,
    pub doc_id: String,
    pub score: T,
}

/// Score-descending ranking with ties broken by ascending doc id.
pub fn rank_order<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Top-`k` retrieval result for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList<T> {
    pub query_id: String,
    pub k: usize,
    pub entries: Vec<Candidate<T>>,
}

impl<T: Scalar> CandidateList<T> {
    /// Keeps the best `k` candidates under [`rank_order`].
    pub fn from_candidates(
        query_id: impl Into<String>,
        k: usize,
        mut all: Vec<Candidate<T>>,
    ) -> Self {
        if k == 0 {
            all.clear();
        } else if all.len() > k {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all.sort_by(rank_order);
        Self {
            query_id: query_id.into(),
            k,
            entries: all,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.doc_id.as_str())
    }
}

/// Tokens and hashed features for every document of a collection.
#[derive(Debug, Clone)]
pub struct EncodedCorpus<T> {
    pub doc_ids: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub features: Vec<SparseVector<T>>,
    pub hash_dim: usize,
    pub hash_seed: u64,
}

impl<T: Scalar> EncodedCorpus<T> {
    pub fn new(collection: &Collection, hash_dim: usize, hash_seed: u64) -> Self {
        let tokens: Vec<Vec<String>> = collection
            .documents()
            .iter()
            .map(|d| tokenize(&d.text))
            .collect();
        let features = tokens
            .iter()
            .map(|t| hash_features(t, hash_dim, hash_seed))
            .collect();
        Self {
            doc_ids: collection
                .documents()
                .iter()
                .map(|d| d.id.clone())
                .collect(),
            tokens,
            features,
            hash_dim,
            hash_seed,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn encode_query(&self, query: &Query) -> QueryInput<T> {
        QueryInput::new(&query.id, &query.text, self.hash_dim, self.hash_seed)
    }
}

/// A query in every representation the scorers consume.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput<T> {
    pub id: String,
    pub tokens: Vec<String>,
    pub features: SparseVector<T>,
}

impl<T: Scalar> QueryInput<T> {
    pub fn new(id: &str, text: &str, hash_dim: usize, hash_seed: u64) -> Self {
        let tokens = tokenize(text);
        let features = hash_features(&tokens, hash_dim, hash_seed);
        Self {
            id: id.to_string(),
            tokens,
            features,
        }
    }
}

/// Anything that can rank the collection for a query.
pub trait CandidateGenerator<T: Scalar>: Sync {
    fn name(&self) -> &str;

    /// Score of every document, by ordinal.
    fn score_all(&self, query: &QueryInput<T>) -> Vec<T>;

    fn doc_ids(&self) -> &[String];

    fn top_k(&self, query: &QueryInput<T>, k: usize) -> CandidateList<T> {
        let ids = self.doc_ids();
        let all = self
            .score_all(query)
            .into_iter()
            .enumerate()
            .map(|(doc, score)| Candidate {
                doc,
                doc_id: ids[doc].clone(),
                score,
            })
            .collect();
        CandidateList::from_candidates(query.id.clone(), k, all)
    }
}

/// Encoded representation produced by a bi-encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation<T> {
    Dense(Vec<T>),
    Sparse(SparseVector<T>),
}

impl<T: Scalar> Representation<T> {
    pub fn dot(&self, other: &Self) -> T {
        match (self, other) {
            (Representation::Dense(a), Representation::Dense(b)) => dot(a, b),
            (Representation::Sparse(a), Representation::Sparse(b)) => a.dot(b),
            _ => panic!("dot product between different representation kinds"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RetrieverKind {
    Dense,
    Lexicon,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Dense => "dense",
            RetrieverKind::Lexicon => "lexicon",
        }
    }
}

impl std::str::FromStr for RetrieverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(RetrieverKind::Dense),
            "lexicon" | "lex" => Ok(RetrieverKind::Lexicon),
            other => Err(Error::InvalidArgument(format!(
                "unknown retriever kind `{other}`"
            ))),
        }
    }
}

/// A trainable bi-encoder: `score(q, d) = encode(q) . encode(d)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RetrieverModel<T> {
    Dense(DenseModel<T>),
    Lexicon(LexModel<T>),
}

impl<T: Scalar> RetrieverModel<T> {
    pub fn kind(&self) -> RetrieverKind {
        match self {
            RetrieverModel::Dense(_) => RetrieverKind::Dense,
            RetrieverModel::Lexicon(_) => RetrieverKind::Lexicon,
        }
    }

    pub fn hash_dim(&self) -> usize {
        match self {
            RetrieverModel::Dense(m) => m.dim_hash(),
            RetrieverModel::Lexicon(m) => m.dim_hash(),
        }
    }

    pub fn encode(&self, features: &SparseVector<T>) -> Result<Representation<T>> {
        match self {
            RetrieverModel::Dense(m) => m.encode(features).map(Representation::Dense),
            RetrieverModel::Lexicon(m) => m.encode(features).map(Representation::Sparse),
        }
    }

    pub fn score(&self, q: &SparseVector<T>, d: &SparseVector<T>) -> Result<T> {
        Ok(self.encode(q)?.dot(&self.encode(d)?))
    }

    /// Adds the gradient of `sum_j upstream[j] * score(q, docs[j])` into `grad`.
    pub fn accumulate_grad(
        &self,
        q: &SparseVector<T>,
        docs: &[&SparseVector<T>],
        upstream: &[T],
        grad: &mut [T],
    ) -> Result<()> {
        match self {
            RetrieverModel::Dense(m) => m.accumulate_grad(q, docs, upstream, grad),
            RetrieverModel::Lexicon(m) => m.accumulate_grad(q, docs, upstream, grad),
        }
    }

    pub fn params(&self) -> &[T] {
        match self {
            RetrieverModel::Dense(m) => m.embedding(),
            RetrieverModel::Lexicon(m) => m.term_weight(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            RetrieverModel::Dense(m) => m.embedding_mut(),
            RetrieverModel::Lexicon(m) => m.term_weight_mut(),
        }
    }
}

/// A frozen bi-encoder with every document pre-encoded.
pub struct FrozenRetriever<'a, T> {
    name: String,
    model: &'a RetrieverModel<T>,
    doc_ids: &'a [String],
    doc_reps: Vec<Representation<T>>,
}

impl<'a, T: Scalar> FrozenRetriever<'a, T> {
    pub fn new(
        name: impl Into<String>,
        model: &'a RetrieverModel<T>,
        corpus: &'a EncodedCorpus<T>,
    ) -> Result<Self> {
        let doc_reps = corpus
            .features
            .iter()
            .map(|f| model.encode(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.into(),
            model,
            doc_ids: &corpus.doc_ids,
            doc_reps,
        })
    }

    pub fn model(&self) -> &RetrieverModel<T> {
        self.model
    }
}

impl<T: Scalar> CandidateGenerator<T> for FrozenRetriever<'_, T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn doc_ids(&self) -> &[String] {
        self.doc_ids
    }

    fn score_all(&self, query: &QueryInput<T>) -> Vec<T> {
        let q = self
            .model
            .encode(&query.features)
            .expect("query features match model dim");
        self.doc_reps.iter().map(|d| q.dot(d)).collect()
    }
}

/// Exhaustive top-`k` retrieval with a bi-encoder.
pub fn retriever_topk<T: Scalar>(
    model: &RetrieverModel<T>,
    corpus: &EncodedCorpus<T>,
    query: &QueryInput<T>,
    k: usize,
) -> Result<CandidateList<T>> {
    Ok(FrozenRetriever::new(model.kind().as_str(), model, corpus)?.top_k(query, k))
}
