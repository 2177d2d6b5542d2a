use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::Collection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::tokenize;

use super::{Candidate, CandidateGenerator, CandidateList, QueryInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term-level statistics of a collection for BM25 scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    terms: Vec<String>,
    term_ids: HashMap<String, usize>,
    postings: Vec<Vec<Posting>>,
    /// Forward index: per document, (term id, tf) sorted by term id.
    doc_terms: Vec<Vec<(u32, u32)>>,
    total_len: u64,
}

impl InvertedIndex {
    pub fn build(collection: &Collection) -> Result<Self> {
        if collection.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut index = Self {
            doc_ids: Vec::with_capacity(collection.len()),
            doc_len: Vec::with_capacity(collection.len()),
            terms: Vec::new(),
            term_ids: HashMap::new(),
            postings: Vec::new(),
            doc_terms: Vec::with_capacity(collection.len()),
            total_len: 0,
        };
        for (ord, doc) in collection.documents().iter().enumerate() {
            let tokens = tokenize(&doc.text);
            let mut counts: HashMap<usize, u32> = HashMap::new();
            for tok in &tokens {
                let id = index.intern(tok);
                *counts.entry(id).or_default() += 1;
            }
            let mut forward: Vec<(u32, u32)> =
                counts.into_iter().map(|(t, c)| (t as u32, c)).collect();
            forward.sort_unstable();
            for &(term, tf) in &forward {
                index.postings[term as usize].push(Posting {
                    doc: ord as u32,
                    tf,
                });
            }
            index.doc_ids.push(doc.id.clone());
            index.doc_len.push(tokens.len() as u32);
            index.total_len += tokens.len() as u64;
            index.doc_terms.push(forward);
        }
        Ok(index)
    }

    fn intern(&mut self, term: &str) -> usize {
        if let Some(&id) = self.term_ids.get(term) {
            return id;
        }
        let id = self.terms.len();
        self.terms.push(term.to_string());
        self.term_ids.insert(term.to_string(), id);
        self.postings.push(Vec::new());
        id
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.total_len as f64 / self.n_docs() as f64
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.doc_len[doc] as usize
    }

    pub fn term_id(&self, term: &str) -> Option<usize> {
        self.term_ids.get(term).copied()
    }

    pub fn df(&self, term: &str) -> usize {
        self.term_id(term).map_or(0, |t| self.postings[t].len())
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.term_id(term).map_or(&[], |t| &self.postings[t])
    }

    pub fn tf(&self, term_id: usize, doc: usize) -> u32 {
        let forward = &self.doc_terms[doc];
        forward
            .binary_search_by_key(&(term_id as u32), |&(t, _)| t)
            .map_or(0, |pos| forward[pos].1)
    }

    /// Serializes postings and lengths in a line-oriented text layout:
    /// a header, one `doc <id> <len>` line per document, then one
    /// `term <term> <df> <doc>:<tf> ...` line per term in first-seen order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#jointneg-index v1");
        let _ = writeln!(out, "n_docs {}", self.n_docs());
        for (id, len) in self.doc_ids.iter().zip(&self.doc_len) {
            let _ = writeln!(out, "doc {id} {len}");
        }
        for (term, plist) in self.terms.iter().zip(&self.postings) {
            let _ = write!(out, "term {term} {}", plist.len());
            for p in plist {
                let _ = write!(out, " {}:{}", p.doc, p.tf);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, why: &str| Error::malformed(line, why.to_string());
        match lines.next() {
            Some((_, "#jointneg-index v1")) => {}
            _ => return Err(bad(1, "missing index header")),
        }
        let (ln, n_line) = lines.next().ok_or_else(|| bad(2, "missing n_docs"))?;
        let n_docs: usize = n_line
            .strip_prefix("n_docs ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(ln, "expected `n_docs <n>`"))?;
        let mut index = Self {
            doc_ids: Vec::with_capacity(n_docs),
            doc_len: Vec::with_capacity(n_docs),
            terms: Vec::new(),
            term_ids: HashMap::new(),
            postings: Vec::new(),
            doc_terms: vec![Vec::new(); n_docs],
            total_len: 0,
        };
        for _ in 0..n_docs {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| bad(0, "truncated document table"))?;
            let mut parts = line.split(' ');
            let (Some("doc"), Some(id), Some(len), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(ln, "expected `doc <id> <len>`"));
            };
            let len: u32 = len.parse().map_err(|_| bad(ln, "bad document length"))?;
            index.doc_ids.push(id.to_string());
            index.doc_len.push(len);
            index.total_len += u64::from(len);
        }
        for (ln, line) in lines {
            let mut parts = line.split(' ');
            let (Some("term"), Some(term), Some(df)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(ln, "expected `term <term> <df> ...`"));
            };
            let df: usize = df.parse().map_err(|_| bad(ln, "bad df"))?;
            let id = index.intern(term);
            for p in parts {
                let (doc, tf) = p.split_once(':').ok_or_else(|| bad(ln, "bad posting"))?;
                let doc: u32 = doc.parse().map_err(|_| bad(ln, "bad posting doc"))?;
                let tf: u32 = tf.parse().map_err(|_| bad(ln, "bad posting tf"))?;
                if doc as usize >= n_docs {
                    return Err(bad(ln, "posting doc out of range"));
                }
                index.postings[id].push(Posting { doc, tf });
                index.doc_terms[doc as usize].push((id as u32, tf));
            }
            if index.postings[id].len() != df {
                return Err(bad(ln, "df does not match postings length"));
            }
        }
        for forward in &mut index.doc_terms {
            forward.sort_unstable();
        }
        Ok(index)
    }
}

/// BM25 saturation and length-normalisation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params<T> {
    pub k1: T,
    pub b: T,
}

impl<T: Scalar> Default for Bm25Params<T> {
    fn default() -> Self {
        Self {
            k1: T::of(0.9),
            b: T::of(0.4),
        }
    }
}

impl<T: Scalar> Bm25Params<T> {
    pub fn new(k1: T, b: T) -> Result<Self> {
        if k1.is_nan() || k1 < T::zero() || !(T::zero()..=T::one()).contains(&b) {
            return Err(Error::InvalidArgument(
                "BM25 requires k1 >= 0 and b in [0, 1]".into(),
            ));
        }
        Ok(Self { k1, b })
    }
}

/// A query resolved against an index: unique terms in sorted order with
/// their idf. Absent terms are dropped since they contribute nothing.
#[derive(Debug, Clone)]
pub struct Bm25Query<T> {
    terms: Vec<(usize, T)>,
}

impl<T: Scalar> Bm25Query<T> {
    pub fn new<S: AsRef<str>>(index: &InvertedIndex, tokens: &[S]) -> Self {
        let mut unique: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
        unique.sort_unstable();
        unique.dedup();
        let n = T::count(index.n_docs());
        let half = T::of(0.5);
        let terms = unique
            .into_iter()
            .filter_map(|t| index.term_id(t))
            .map(|id| {
                let df = T::count(index.postings[id].len());
                (id, (T::one() + (n - df + half) / (df + half)).ln())
            })
            .collect();
        Self { terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[inline]
fn term_weight<T: Scalar>(idf: T, tf: u32, len: usize, avgdl: T, params: &Bm25Params<T>) -> T {
    let tf = T::from_u32(tf).unwrap_or_else(T::zero);
    let norm = params.k1 * (T::one() - params.b + params.b * T::count(len) / avgdl);
    idf * tf * (params.k1 + T::one()) / (tf + norm)
}

/// BM25 score of one document for a prepared query.
pub fn bm25_score_prepared<T: Scalar>(
    index: &InvertedIndex,
    params: &Bm25Params<T>,
    query: &Bm25Query<T>,
    doc: usize,
) -> T {
    let avgdl = T::of(index.avgdl());
    let len = index.doc_len(doc);
    let mut acc = T::zero();
    for &(term, idf) in &query.terms {
        let tf = index.tf(term, doc);
        if tf > 0 {
            acc = acc + term_weight(idf, tf, len, avgdl, params);
        }
    }
    acc
}

/// BM25 with `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`, summed over the
/// distinct query terms present in the document.
pub fn bm25_score<T: Scalar, S: AsRef<str>>(
    index: &InvertedIndex,
    params: &Bm25Params<T>,
    query_tokens: &[S],
    doc: usize,
) -> T {
    bm25_score_prepared(index, params, &Bm25Query::new(index, query_tokens), doc)
}

/// Term-at-a-time accumulation over postings. Each document receives its
/// contributions in the same term order as [`bm25_score_prepared`], so the
/// scores are bit-identical to exhaustive scoring.
pub fn bm25_accumulate<T: Scalar>(
    index: &InvertedIndex,
    params: &Bm25Params<T>,
    query: &Bm25Query<T>,
) -> Vec<T> {
    let avgdl = T::of(index.avgdl());
    let mut acc = vec![T::zero(); index.n_docs()];
    for &(term, idf) in &query.terms {
        for p in &index.postings[term] {
            let d = p.doc as usize;
            acc[d] = acc[d] + term_weight(idf, p.tf, index.doc_len(d), avgdl, params);
        }
    }
    acc
}

/// BM25 ranking of the whole index; zero-scoring documents are omitted.
pub fn bm25_topk<T: Scalar, S: AsRef<str>>(
    index: &InvertedIndex,
    params: &Bm25Params<T>,
    query_id: &str,
    query_tokens: &[S],
    k: usize,
) -> CandidateList<T> {
    let query = Bm25Query::new(index, query_tokens);
    let scores = bm25_accumulate(index, params, &query);
    let all = scores
        .into_iter()
        .enumerate()
        .filter(|(_, s)| *s > T::zero())
        .map(|(doc, score)| Candidate {
            doc,
            doc_id: index.doc_ids[doc].clone(),
            score,
        })
        .collect();
    CandidateList::from_candidates(query_id, k, all)
}

/// BM25 as a [`CandidateGenerator`].
pub struct Bm25Retriever<'a, T> {
    pub index: &'a InvertedIndex,
    pub params: Bm25Params<T>,
}

impl<'a, T: Scalar> Bm25Retriever<'a, T> {
    pub fn new(index: &'a InvertedIndex, params: Bm25Params<T>) -> Self {
        Self { index, params }
    }
}

impl<T: Scalar> CandidateGenerator<T> for Bm25Retriever<'_, T> {
    fn name(&self) -> &str {
        "bm25"
    }

    fn doc_ids(&self) -> &[String] {
        self.index.doc_ids()
    }

    fn score_all(&self, query: &QueryInput<T>) -> Vec<T> {
        bm25_accumulate(
            self.index,
            &self.params,
            &Bm25Query::new(self.index, &query.tokens),
        )
    }

    fn top_k(&self, query: &QueryInput<T>, k: usize) -> CandidateList<T> {
        bm25_topk(self.index, &self.params, &query.id, &query.tokens, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_collection;

    #[test]
    fn hand_counted_statistics() {
        let c = parse_collection("d1\ta b\nd2\ta\nd3\tc\n").unwrap();
        let idx = InvertedIndex::build(&c).unwrap();
        assert_eq!(idx.df("a"), 2);
        assert_eq!(idx.df("b"), 1);
        assert_eq!(idx.df("c"), 1);
        assert_eq!(idx.df("zzz"), 0);
        assert!((idx.avgdl() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            idx.postings("a"),
            &[Posting { doc: 0, tf: 1 }, Posting { doc: 1, tf: 1 }]
        );
        assert_eq!(idx, InvertedIndex::build(&c).unwrap());
    }

    #[test]
    fn empty_text_document() {
        let c = parse_collection("d1\t\n").unwrap();
        let idx = InvertedIndex::build(&c).unwrap();
        assert_eq!(idx.doc_len(0), 0);
        assert_eq!(idx.n_terms(), 0);
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(matches!(
            InvertedIndex::build(&Collection::default()),
            Err(Error::EmptyCollection)
        ));
    }

    #[test]
    fn hand_evaluated_score() {
        // d1 = "a b", d2 = "a"; N = 2, df(a) = 2, avgdl = 1.5, len(d2) = 1.
        let c = parse_collection("d1\ta b\nd2\ta\n").unwrap();
        let idx = InvertedIndex::build(&c).unwrap();
        let params = Bm25Params::<f64>::default();
        let idf = (1.0f64 + (2.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let expected = idf * 1.0 * (0.9 + 1.0) / (1.0 + 0.9 * (1.0 - 0.4 + 0.4 * 1.0 / 1.5));
        let got = bm25_score(&idx, &params, &["a"], 1);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!((got - 0.194_612_897_701_412_2).abs() < 1e-9);
    }

    #[test]
    fn non_matching_terms_contribute_nothing() {
        let c = parse_collection("d1\ta b\nd2\ta\n").unwrap();
        let idx = InvertedIndex::build(&c).unwrap();
        let p = Bm25Params::<f64>::default();
        assert_eq!(bm25_score(&idx, &p, &["zzz"], 0), 0.0);
        assert_eq!(
            bm25_score(&idx, &p, &["a", "b"], 0),
            bm25_score(&idx, &p, &["a", "b", "q", "q"], 0)
        );
    }

    #[test]
    fn topk_tie_rule_and_short_lists() {
        let c = parse_collection("x2\tsame text\nx1\tsame text\nx3\tother\n").unwrap();
        let idx = InvertedIndex::build(&c).unwrap();
        let p = Bm25Params::<f64>::default();
        let list = bm25_topk(&idx, &p, "q", &["same"], 10);
        assert_eq!(list.doc_ids().collect::<Vec<_>>(), vec!["x1", "x2"]);
        assert_eq!(list.entries[0].score, list.entries[1].score);
    }

    #[test]
    fn params_validated() {
        assert!(Bm25Params::new(-1.0f64, 0.5).is_err());
        assert!(Bm25Params::new(1.2f64, 1.5).is_err());
        assert!(Bm25Params::new(1.2f64, 0.75).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let c = parse_collection("d1\ta b a\nd2\ta\nd3\tc b\nd4\t\n").unwrap();
        let idx = InvertedIndex::build(&c).unwrap();
        let back = InvertedIndex::from_text(&idx.to_text()).unwrap();
        assert_eq!(back, idx);
        assert!(InvertedIndex::from_text("garbage").is_err());
    }
}
