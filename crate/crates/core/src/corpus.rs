//! Collections, queries, relevance judgments, and a topic-model corpus
//! synthesizer.
//!
//! Collections and queries use the MS-Marco `<id>\t<text>\n` layout. Judgments
//! use the four-column TREC qrels layout `<qid> 0 <docid> <grade>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

/// Ordered documents with an id index. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct Collection {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Collection {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::malformed(i + 1, "empty document id"));
            }
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { documents, by_id })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, ordinal: usize) -> &Document {
        &self.documents[ordinal]
    }

    pub fn lookup(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }
}

/// Queries paired with their labelled positives.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub queries: Vec<Query>,
    positives: BTreeMap<String, BTreeSet<String>>,
}

impl TrainingSet {
    /// Checks that every positive key is a known query, every positive set is
    /// non-empty, and every positive document exists in `collection`.
    pub fn new(
        queries: Vec<Query>,
        positives: BTreeMap<String, BTreeSet<String>>,
        collection: &Collection,
    ) -> Result<Self> {
        let known: BTreeSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        for (qid, docs) in &positives {
            if !known.contains(qid.as_str()) {
                return Err(Error::UnknownId(qid.clone()));
            }
            if docs.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "query `{qid}` has an empty positive set"
                )));
            }
            if let Some(missing) = docs.iter().find(|d| collection.lookup(d).is_none()) {
                return Err(Error::UnknownId(missing.clone()));
            }
        }
        Ok(Self { queries, positives })
    }

    /// Builds positives from judgments with grade > 0, keeping only queries
    /// that have at least one.
    pub fn from_judgments(
        queries: &[Query],
        judgments: &[Judgment],
        collection: &Collection,
    ) -> Result<Self> {
        let mut positives: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for j in judgments.iter().filter(|j| j.grade > 0) {
            positives
                .entry(j.query_id.clone())
                .or_default()
                .insert(j.doc_id.clone());
        }
        let kept: Vec<Query> = queries
            .iter()
            .filter(|q| positives.contains_key(&q.id))
            .cloned()
            .collect();
        let known: BTreeSet<&str> = kept.iter().map(|q| q.id.as_str()).collect();
        positives.retain(|qid, _| known.contains(qid.as_str()));
        Self::new(kept, positives, collection)
    }

    pub fn positives(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.positives.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Splits file contents into lines on `\n`, stripping a trailing `\r`.
/// A final newline does not produce an extra empty line.
fn lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = content.strip_suffix('\n').unwrap_or(content);
    let parts: Vec<&str> = if body.is_empty() && content.len() <= 1 {
        Vec::new()
    } else {
        body.split('\n').collect()
    };
    parts
        .into_iter()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn parse_id_text(content: &str) -> Result<Vec<(String, String)>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line_no, line) in lines(content) {
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::malformed(line_no, "expected `<id>\\t<text>`"))?;
        if id.is_empty() {
            return Err(Error::malformed(line_no, "empty id"));
        }
        if seen.insert(id.to_string(), line_no).is_some() {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                line: line_no,
            });
        }
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content).map_err(|e| Error::io(path, e))
}

pub fn parse_collection(content: &str) -> Result<Collection> {
    let docs = parse_id_text(content)?
        .into_iter()
        .map(|(id, text)| Document { id, text })
        .collect();
    Collection::new(docs)
}

pub fn load_collection(path: impl AsRef<Path>) -> Result<Collection> {
    parse_collection(&read_file(path.as_ref())?)
}

pub fn format_collection(collection: &Collection) -> String {
    let mut out = String::new();
    for d in collection.documents() {
        out.push_str(&d.id);
        out.push('\t');
        out.push_str(&d.text);
        out.push('\n');
    }
    out
}

pub fn write_collection(collection: &Collection, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), format_collection(collection).as_bytes())
}

pub fn parse_queries(content: &str) -> Result<Vec<Query>> {
    Ok(parse_id_text(content)?
        .into_iter()
        .map(|(id, text)| Query { id, text })
        .collect())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    parse_queries(&read_file(path.as_ref())?)
}

pub fn format_queries(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&q.id);
        out.push('\t');
        out.push_str(&q.text);
        out.push('\n');
    }
    out
}

pub fn write_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), format_queries(queries).as_bytes())
}

pub fn parse_qrels(content: &str) -> Result<Vec<Judgment>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line_no, line) in lines(content) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::malformed(
                line_no,
                format!("expected 4 qrels columns, found {}", fields.len()),
            ));
        }
        let grade: u32 = fields[3].parse().map_err(|_| {
            Error::malformed(
                line_no,
                format!("grade `{}` is not a non-negative integer", fields[3]),
            )
        })?;
        if !seen.insert((fields[0].to_string(), fields[2].to_string())) {
            return Err(Error::malformed(
                line_no,
                format!("duplicate judgment for ({}, {})", fields[0], fields[2]),
            ));
        }
        out.push(Judgment {
            query_id: fields[0].to_string(),
            doc_id: fields[2].to_string(),
            grade,
        });
    }
    Ok(out)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    parse_qrels(&read_file(path.as_ref())?)
}

pub fn format_qrels(judgments: &[Judgment]) -> String {
    let mut out = String::new();
    for j in judgments {
        out.push_str(&format!("{} 0 {} {}\n", j.query_id, j.doc_id, j.grade));
    }
    out
}

pub fn write_qrels(judgments: &[Judgment], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), format_qrels(judgments).as_bytes())
}

/// Smallest number of core terms a topic may own.
pub const MIN_CORE_TERMS: usize = 8;

/// Parameters of the synthetic topic corpus.
///
/// Topic `t` owns a disjoint block of core terms, partitioned further into
/// facets of `facet_size` terms. A document picks a topic and a facet; each of
/// its tokens is a uniform vocabulary term with probability `noise_rate`,
/// otherwise a term of its facet with probability `facet_focus`, otherwise any
/// core term of its topic. A query is written from an anchor document: it
/// samples the anchor's core tokens and swaps each for a random term of the
/// same facet with probability `synonym_rate`. The anchor is the query's
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    pub n_queries: usize,
    pub vocab_size: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// Core terms owned by each topic; `0` means `vocab_size / (2 * n_topics)`.
    pub core_terms: usize,
    pub facet_size: usize,
    pub facet_focus: f64,
    pub synonym_rate: f64,
    pub doc_len: (usize, usize),
    pub query_len: (usize, usize),
    /// Anchor documents are the shortest of this many uniform draws, so
    /// relevance carries a length prior that term matching cannot see.
    pub anchor_draws: usize,
}

impl SynthConfig {
    pub fn new(
        n_topics: usize,
        docs_per_topic: usize,
        n_queries: usize,
        vocab_size: usize,
        noise_rate: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_topics,
            docs_per_topic,
            n_queries,
            vocab_size,
            noise_rate,
            seed,
            core_terms: 0,
            facet_size: 6,
            facet_focus: 0.5,
            synonym_rate: 0.3,
            doc_len: (20, 60),
            query_len: (2, 5),
            anchor_draws: 1,
        }
    }

    fn core_size(&self) -> usize {
        if self.core_terms > 0 {
            self.core_terms
        } else {
            (self.vocab_size / (2 * self.n_topics)).max(MIN_CORE_TERMS)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n_topics == 0
            || self.docs_per_topic == 0
            || self.n_queries == 0
            || self.vocab_size == 0
        {
            return bad("synthetic corpus counts must be >= 1");
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.facet_focus) || !(0.0..=1.0).contains(&self.synonym_rate) {
            return bad("facet_focus and synonym_rate must lie in [0, 1]");
        }
        if self.vocab_size < self.n_topics * MIN_CORE_TERMS {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {} is smaller than {} topics x {} core terms",
                self.vocab_size, self.n_topics, MIN_CORE_TERMS
            )));
        }
        let core = self.core_size();
        if core < MIN_CORE_TERMS || core * self.n_topics > self.vocab_size {
            return bad("core_terms does not fit the vocabulary");
        }
        if self.facet_size == 0 || self.facet_size > core {
            return bad("facet_size must lie in [1, core_terms]");
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return bad("doc_len must be a non-empty range starting at >= 1");
        }
        if self.query_len.0 == 0 || self.query_len.0 > self.query_len.1 {
            return bad("query_len must be a non-empty range starting at >= 1");
        }
        if self.anchor_draws == 0 {
            return bad("anchor_draws must be >= 1");
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub collection: Collection,
    pub queries: Vec<Query>,
    pub training: TrainingSet,
    pub judgments: Vec<Judgment>,
    /// Topic of every document, by ordinal.
    pub doc_topics: Vec<usize>,
    /// Topic of every query, in query order.
    pub query_topics: Vec<usize>,
}

impl SyntheticCorpus {
    /// Splits queries into a leading training part and the remaining dev part.
    pub fn split(&self, n_train: usize) -> (TrainingSet, TrainingSet) {
        let n_train = n_train.min(self.queries.len());
        let part = |qs: &[Query]| {
            let positives = qs
                .iter()
                .filter_map(|q| {
                    self.training
                        .positives(&q.id)
                        .map(|p| (q.id.clone(), p.clone()))
                })
                .collect();
            TrainingSet::new(qs.to_vec(), positives, &self.collection)
                .expect("subset of a valid training set")
        };
        (
            part(&self.queries[..n_train]),
            part(&self.queries[n_train..]),
        )
    }
}

pub fn term_name(index: usize) -> String {
    format!("w{index}")
}

/// Generates a synthetic corpus; a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let core = config.core_size();
    let n_facets = core.div_ceil(config.facet_size);
    let facet_terms = |topic: usize, facet: usize| {
        let start = topic * core + facet * config.facet_size;
        let end = (start + config.facet_size).min((topic + 1) * core);
        start..end
    };
    let facet_of = |term: usize| (term % core) / config.facet_size;

    let n_docs = config.n_topics * config.docs_per_topic;
    let mut documents = Vec::with_capacity(n_docs);
    let mut doc_topics = Vec::with_capacity(n_docs);
    let mut doc_tokens: Vec<Vec<usize>> = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let topic = i % config.n_topics;
        let facet = rng.gen_range(0..n_facets);
        let len = rng.gen_range(config.doc_len.0..=config.doc_len.1);
        let tokens: Vec<usize> = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < config.noise_rate {
                    rng.gen_range(0..config.vocab_size)
                } else if rng.gen::<f64>() < config.facet_focus {
                    rng.gen_range(facet_terms(topic, facet))
                } else {
                    topic * core + rng.gen_range(0..core)
                }
            })
            .collect();
        documents.push(Document {
            id: format!("d{i}"),
            text: render(&tokens),
        });
        doc_topics.push(topic);
        doc_tokens.push(tokens);
    }
    let collection = Collection::new(documents)?;

    let mut queries = Vec::with_capacity(config.n_queries);
    let mut query_topics = Vec::with_capacity(config.n_queries);
    let mut positives = BTreeMap::new();
    let mut judgments = Vec::with_capacity(config.n_queries);
    for i in 0..config.n_queries {
        let anchor = (0..config.anchor_draws)
            .map(|_| rng.gen_range(0..n_docs))
            .min_by_key(|&d| (doc_tokens[d].len(), d))
            .expect("anchor_draws >= 1");
        let topic = doc_topics[anchor];
        let topic_range = topic * core..(topic + 1) * core;
        let mut pool: Vec<usize> = doc_tokens[anchor]
            .iter()
            .copied()
            .filter(|t| topic_range.contains(t))
            .collect();
        if pool.is_empty() {
            pool = topic_range.clone().collect();
        }
        let len = rng.gen_range(config.query_len.0..=config.query_len.1);
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let mut term = *pool.choose(&mut rng).expect("non-empty pool");
            if rng.gen::<f64>() < config.synonym_rate {
                term = rng.gen_range(facet_terms(topic, facet_of(term)));
            }
            if !tokens.contains(&term) {
                tokens.push(term);
            }
        }
        let qid = format!("q{i}");
        let did = collection.get(anchor).id.clone();
        queries.push(Query {
            id: qid.clone(),
            text: render(&tokens),
        });
        query_topics.push(topic);
        judgments.push(Judgment {
            query_id: qid.clone(),
            doc_id: did.clone(),
            grade: 1,
        });
        positives.insert(qid, BTreeSet::from([did]));
    }
    let training = TrainingSet::new(queries.clone(), positives, &collection)?;
    Ok(SyntheticCorpus {
        collection,
        queries,
        training,
        judgments,
        doc_topics,
        query_topics,
    })
}

fn render(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&t| term_name(t))
        .collect::<Vec<_>>()
        .join(" ")
}
