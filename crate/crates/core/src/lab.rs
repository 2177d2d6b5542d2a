//! Experiment orchestration: the five generators (BM25, Den-BN, Den-HN,
//! Lex-BN, Lex-HN), rankers trained on any generator set, evaluation,
//! distillation and distribution analysis over one train/dev split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::analysis::{distribution_shift, RankerScorer};
use crate::corpus::{Collection, Judgment, SynthConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::eval::{full_rank, rerank, retrieve, Metric, Qrels, RunList};
use crate::ranker::{
    feature_dim, PairFeaturizer, Projection, RankerModel, DEFAULT_HIDDEN, DEFAULT_PROJ_DIM,
    INIT_RANGE,
};
use crate::retrievers::{
    Bm25Params, Bm25Retriever, CandidateGenerator, DenseModel, EncodedCorpus, FrozenRetriever,
    InvertedIndex, LexModel, RetrieverKind, RetrieverModel,
};
use crate::text::{derive_seed, DEFAULT_HASH_DIM};
use crate::training::{
    distill_retriever, labeled_queries, train_ranker, train_retriever, DistillCandidates,
    DistillConfig, DistillReport, LabeledQuery, LossReport, Negatives, TrainConfig,
};

pub const BM25: &str = "bm25";

/// Everything an experiment needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub seed: u64,
    pub hash_dim: usize,
    pub hash_seed: u64,
    pub dim_emb: usize,
    pub emb_init: f64,
    pub lex_init: f64,
    pub proj_dim: usize,
    pub hidden: usize,
    pub ranker_init: f64,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub rerank_depth: usize,
    pub full_rank_depth: usize,
    pub analysis_top_n: usize,
    pub retriever: TrainConfig,
    pub hard_negative: TrainConfig,
    pub ranker: TrainConfig,
    pub distill: DistillConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hash_dim: DEFAULT_HASH_DIM,
            hash_seed: 0,
            dim_emb: 64,
            emb_init: 0.1,
            lex_init: 1.0,
            proj_dim: DEFAULT_PROJ_DIM,
            hidden: DEFAULT_HIDDEN,
            ranker_init: INIT_RANGE,
            bm25_k1: 0.9,
            bm25_b: 0.4,
            rerank_depth: 1000,
            full_rank_depth: 50,
            analysis_top_n: 20,
            retriever: TrainConfig::default(),
            hard_negative: TrainConfig::default(),
            ranker: TrainConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

const SCALAR_KEYS: [&str; 14] = [
    "seed",
    "hash_dim",
    "hash_seed",
    "dim_emb",
    "emb_init",
    "lex_init",
    "proj_dim",
    "hidden",
    "ranker_init",
    "bm25_k1",
    "bm25_b",
    "rerank_depth",
    "full_rank_depth",
    "analysis_top_n",
];

const TRAIN_SECTIONS: [&str; 4] = ["retriever", "hard_negative", "ranker", "distill"];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

impl LabConfig {
    /// Sets one key. Training keys are addressed as `section.key`, e.g.
    /// `ranker.learning_rate`; `distill.direction` and `distill.n_negatives`
    /// configure distillation itself.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some((section, sub)) = key.split_once('.') {
            return match (section, sub) {
                ("distill", "direction") => {
                    self.distill.direction = parse(key, value)?;
                    Ok(())
                }
                ("distill", "n_negatives") => {
                    self.distill.n_negatives = parse(key, value)?;
                    Ok(())
                }
                ("retriever", _) => self.retriever.set(sub, value),
                ("hard_negative", _) => self.hard_negative.set(sub, value),
                ("ranker", _) => self.ranker.set(sub, value),
                ("distill", _) => self.distill.train.set(sub, value),
                _ => Err(Error::InvalidArgument(format!("unknown key `{key}`"))),
            };
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "hash_dim" => self.hash_dim = parse(key, value)?,
            "hash_seed" => self.hash_seed = parse(key, value)?,
            "dim_emb" => self.dim_emb = parse(key, value)?,
            "emb_init" => self.emb_init = parse(key, value)?,
            "lex_init" => self.lex_init = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "ranker_init" => self.ranker_init = parse(key, value)?,
            "bm25_k1" => self.bm25_k1 = parse(key, value)?,
            "bm25_b" => self.bm25_b = parse(key, value)?,
            "rerank_depth" => self.rerank_depth = parse(key, value)?,
            "full_rank_depth" => self.full_rank_depth = parse(key, value)?,
            "analysis_top_n" => self.analysis_top_n = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        SCALAR_KEYS.contains(&key)
            || key.split_once('.').is_some_and(|(s, k)| {
                TRAIN_SECTIONS.contains(&s)
                    && (crate::training::CONFIG_KEYS.contains(&k)
                        || (s == "distill" && (k == "direction" || k == "n_negatives")))
            })
    }

    /// Every key with its current value, sorted by key.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let scalars = [
            self.seed.to_string(),
            self.hash_dim.to_string(),
            self.hash_seed.to_string(),
            self.dim_emb.to_string(),
            self.emb_init.to_string(),
            self.lex_init.to_string(),
            self.proj_dim.to_string(),
            self.hidden.to_string(),
            self.ranker_init.to_string(),
            self.bm25_k1.to_string(),
            self.bm25_b.to_string(),
            self.rerank_depth.to_string(),
            self.full_rank_depth.to_string(),
            self.analysis_top_n.to_string(),
        ];
        for (k, v) in SCALAR_KEYS.iter().zip(scalars) {
            out.insert(k.to_string(), v);
        }
        for (section, train) in TRAIN_SECTIONS.iter().zip([
            &self.retriever,
            &self.hard_negative,
            &self.ranker,
            &self.distill.train,
        ]) {
            for k in crate::training::CONFIG_KEYS {
                out.insert(format!("{section}.{k}"), train.get(k).unwrap_or_default());
            }
        }
        out.insert(
            "distill.direction".into(),
            self.distill.direction.to_string(),
        );
        out.insert(
            "distill.n_negatives".into(),
            self.distill.n_negatives.to_string(),
        );
        out
    }

    pub fn bm25_params(&self) -> Result<Bm25Params<f64>> {
        Bm25Params::new(self.bm25_k1, self.bm25_b)
    }

    pub fn validate(&self) -> Result<()> {
        self.bm25_params()?;
        for t in [
            &self.retriever,
            &self.hard_negative,
            &self.ranker,
            &self.distill.train,
        ] {
            t.validate()?;
        }
        let zero = [
            ("hash_dim", self.hash_dim),
            ("dim_emb", self.dim_emb),
            ("proj_dim", self.proj_dim),
            ("hidden", self.hidden),
            ("rerank_depth", self.rerank_depth),
            ("full_rank_depth", self.full_rank_depth),
            ("analysis_top_n", self.analysis_top_n),
            ("distill.n_negatives", self.distill.n_negatives),
        ];
        if let Some((k, _)) = zero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("`{k}` must be >= 1")));
        }
        Ok(())
    }

    /// Training settings for a named stage with its own derived seed.
    fn stage_config(&self, base: &TrainConfig, stage: &str) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &["train", stage]),
            ..base.clone()
        }
    }
}

/// Sets a synthetic-corpus key (`n_topics`, `docs_per_topic`, ...).
pub fn set_synth_key(config: &mut SynthConfig, key: &str, value: &str) -> Result<()> {
    let range = |v: &str| -> Result<(usize, usize)> {
        let (a, b) = v
            .split_once(',')
            .ok_or_else(|| Error::InvalidArgument(format!("`{key}` expects `min,max`")))?;
        Ok((parse(key, a)?, parse(key, b)?))
    };
    match key {
        "n_topics" => config.n_topics = parse(key, value)?,
        "docs_per_topic" => config.docs_per_topic = parse(key, value)?,
        "n_queries" => config.n_queries = parse(key, value)?,
        "vocab_size" => config.vocab_size = parse(key, value)?,
        "noise_rate" => config.noise_rate = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "core_terms" => config.core_terms = parse(key, value)?,
        "facet_size" => config.facet_size = parse(key, value)?,
        "facet_focus" => config.facet_focus = parse(key, value)?,
        "synonym_rate" => config.synonym_rate = parse(key, value)?,
        "doc_len" => config.doc_len = range(value)?,
        "query_len" => config.query_len = range(value)?,
        "anchor_draws" => config.anchor_draws = parse(key, value)?,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown synthetic key `{key}`"
            )))
        }
    }
    Ok(())
}

pub fn synth_key_value(c: &SynthConfig, key: &str) -> Option<String> {
    Some(match key {
        "n_topics" => c.n_topics.to_string(),
        "docs_per_topic" => c.docs_per_topic.to_string(),
        "n_queries" => c.n_queries.to_string(),
        "vocab_size" => c.vocab_size.to_string(),
        "noise_rate" => c.noise_rate.to_string(),
        "seed" => c.seed.to_string(),
        "core_terms" => c.core_terms.to_string(),
        "facet_size" => c.facet_size.to_string(),
        "facet_focus" => c.facet_focus.to_string(),
        "synonym_rate" => c.synonym_rate.to_string(),
        "doc_len" => format!("{},{}", c.doc_len.0, c.doc_len.1),
        "query_len" => format!("{},{}", c.query_len.0, c.query_len.1),
        "anchor_draws" => c.anchor_draws.to_string(),
        _ => return None,
    })
}

pub const SYNTH_KEYS: [&str; 13] = [
    "n_topics",
    "docs_per_topic",
    "n_queries",
    "vocab_size",
    "noise_rate",
    "seed",
    "core_terms",
    "facet_size",
    "facet_focus",
    "synonym_rate",
    "doc_len",
    "query_len",
    "anchor_draws",
];

/// How one of the four trained generators is built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrieverSpec {
    pub name: &'static str,
    pub kind: RetrieverKind,
    /// Warm start from an already trained generator.
    pub init_from: Option<&'static str>,
    /// Frozen generators whose pools provide the negatives.
    pub negatives: &'static [&'static str],
}

/// BN models learn from BM25 negatives; each HN model starts from its BN
/// parent and learns from that parent's own top-ranked negatives.
pub const RETRIEVER_SPECS: [RetrieverSpec; 4] = [
    RetrieverSpec {
        name: "den_bn",
        kind: RetrieverKind::Dense,
        init_from: None,
        negatives: &[BM25],
    },
    RetrieverSpec {
        name: "lex_bn",
        kind: RetrieverKind::Lexicon,
        init_from: None,
        negatives: &[BM25],
    },
    RetrieverSpec {
        name: "den_hn",
        kind: RetrieverKind::Dense,
        init_from: Some("den_bn"),
        negatives: &["den_bn"],
    },
    RetrieverSpec {
        name: "lex_hn",
        kind: RetrieverKind::Lexicon,
        init_from: Some("lex_bn"),
        negatives: &["lex_bn"],
    },
];

pub fn retriever_spec(name: &str) -> Result<&'static RetrieverSpec> {
    RETRIEVER_SPECS
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown retriever `{name}`")))
}

/// Parses `"bm25,den_hn,lex_hn"`; order is kept, duplicates are rejected.
pub fn parse_generator_set(text: &str) -> Result<Vec<String>> {
    let names: Vec<String> = text
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidArgument("empty generator set".into()));
    }
    let distinct: BTreeSet<&String> = names.iter().collect();
    if distinct.len() != names.len() {
        return Err(Error::InvalidArgument(format!(
            "duplicate generator in `{text}`"
        )));
    }
    for n in &names {
        if n != BM25 {
            retriever_spec(n)?;
        }
    }
    Ok(names)
}

/// Name under which the ranker trained on `generators` is stored.
pub fn ranker_name(generators: &[String]) -> String {
    format!("ranker-{}", generators.join("+"))
}

/// One train/dev split with its index, encodings and trained models.
pub struct Lab {
    pub config: LabConfig,
    pub collection: Collection,
    pub train: TrainingSet,
    pub dev: TrainingSet,
    pub dev_qrels: Qrels,
    pub index: InvertedIndex,
    pub corpus: EncodedCorpus<f64>,
    pub projection: Projection<f64>,
    train_data: Vec<LabeledQuery<f64>>,
    dev_data: Vec<LabeledQuery<f64>>,
    pub retrievers: BTreeMap<String, RetrieverModel<f64>>,
    pub rankers: BTreeMap<String, RankerModel<f64>>,
}

impl Lab {
    pub fn new(
        config: LabConfig,
        collection: Collection,
        train: TrainingSet,
        dev: TrainingSet,
    ) -> Result<Self> {
        let index = InvertedIndex::build(&collection)?;
        Self::with_index(config, collection, index, train, dev)
    }

    /// Like [`Lab::new`] with a prebuilt index, which must cover exactly the
    /// collection's documents in order.
    pub fn with_index(
        config: LabConfig,
        collection: Collection,
        index: InvertedIndex,
        train: TrainingSet,
        dev: TrainingSet,
    ) -> Result<Self> {
        config.validate()?;
        let same_docs = index.n_docs() == collection.len()
            && index
                .doc_ids()
                .iter()
                .zip(collection.documents())
                .all(|(a, d)| *a == d.id);
        if !same_docs {
            return Err(Error::InvalidArgument(
                "index does not match the collection".into(),
            ));
        }
        let corpus = EncodedCorpus::new(&collection, config.hash_dim, config.hash_seed);
        let projection = Projection::random(
            config.hash_dim,
            config.proj_dim,
            derive_seed(config.seed, &["projection"]),
        );
        let train_data = labeled_queries(&train, &collection, &corpus)?;
        let dev_data = labeled_queries(&dev, &collection, &corpus)?;
        let judgments: Vec<Judgment> = dev_data
            .iter()
            .flat_map(|lq| {
                lq.positives.iter().map(|d| Judgment {
                    query_id: lq.input.id.clone(),
                    doc_id: d.clone(),
                    grade: 1,
                })
            })
            .collect();
        Ok(Self {
            config,
            collection,
            train,
            dev,
            dev_qrels: Qrels::new(&judgments),
            index,
            corpus,
            projection,
            train_data,
            dev_data,
            retrievers: BTreeMap::new(),
            rankers: BTreeMap::new(),
        })
    }

    pub fn train_queries(&self) -> &[LabeledQuery<f64>] {
        &self.train_data
    }

    pub fn dev_queries(&self) -> &[LabeledQuery<f64>] {
        &self.dev_data
    }

    pub fn featurizer(&self) -> Result<PairFeaturizer<'_, f64>> {
        PairFeaturizer::new(
            &self.projection,
            &self.index,
            self.config.bm25_params()?,
            &self.corpus,
        )
    }

    pub fn bm25(&self) -> Result<Bm25Retriever<'_, f64>> {
        Ok(Bm25Retriever::new(&self.index, self.config.bm25_params()?))
    }

    /// A frozen generator by name; trained generators must exist already.
    pub fn generator(&self, name: &str) -> Result<Box<dyn CandidateGenerator<f64> + '_>> {
        if name == BM25 {
            return Ok(Box::new(self.bm25()?));
        }
        let model = self.retrievers.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!("generator `{name}` has not been trained"))
        })?;
        Ok(Box::new(FrozenRetriever::new(name, model, &self.corpus)?))
    }

    fn generators(&self, names: &[String]) -> Result<Vec<Box<dyn CandidateGenerator<f64> + '_>>> {
        names.iter().map(|n| self.generator(n)).collect()
    }

    pub fn ranker(&self, name: &str) -> Result<&RankerModel<f64>> {
        self.rankers
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("ranker `{name}` has not been trained")))
    }

    fn fresh_retriever(&self, spec: &RetrieverSpec) -> Result<RetrieverModel<f64>> {
        if let Some(parent) = spec.init_from {
            return self.retrievers.get(parent).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("`{}` needs `{parent}` first", spec.name))
            });
        }
        Ok(match spec.kind {
            RetrieverKind::Dense => RetrieverModel::Dense(DenseModel::random(
                self.config.hash_dim,
                self.config.dim_emb,
                self.config.emb_init,
                derive_seed(self.config.seed, &["init", spec.name]),
            )),
            RetrieverKind::Lexicon => RetrieverModel::Lexicon(LexModel::uniform(
                self.config.hash_dim,
                self.config.lex_init,
            )),
        })
    }

    /// Trains one of the four named generators and stores it.
    pub fn train_generator(&mut self, name: &str) -> Result<LossReport> {
        let spec = retriever_spec(name)?;
        let model = self.fresh_retriever(spec)?;
        let base = if spec.init_from.is_some() {
            &self.config.hard_negative
        } else {
            &self.config.retriever
        };
        let config = self.config.stage_config(base, name);
        let names: Vec<String> = spec.negatives.iter().map(|s| s.to_string()).collect();
        let (trained, report) = {
            let boxed = self.generators(&names)?;
            let refs: Vec<&dyn CandidateGenerator<f64>> =
                boxed.iter().map(|b| b.as_ref()).collect();
            train_retriever(
                model,
                &self.corpus,
                &self.train_data,
                Negatives::Pool(&refs),
                &config,
            )?
        };
        self.retrievers.insert(name.to_string(), trained);
        Ok(report)
    }

    /// Trains a ranker on negatives from the joint pool of `generators` and
    /// stores it under [`ranker_name`].
    pub fn train_ranker(&mut self, generators: &[String]) -> Result<(String, LossReport)> {
        let name = ranker_name(generators);
        let config = self.config.stage_config(&self.config.ranker, &name);
        let featurizer = self.featurizer()?;
        let model = RankerModel::random(
            feature_dim(self.config.proj_dim),
            self.config.hidden,
            self.config.ranker_init,
            derive_seed(self.config.seed, &["init", "ranker"]),
        );
        let boxed = self.generators(generators)?;
        let refs: Vec<&dyn CandidateGenerator<f64>> = boxed.iter().map(|b| b.as_ref()).collect();
        let (trained, report) = train_ranker(model, &featurizer, &refs, &self.train_data, &config)?;
        drop(boxed);
        drop(featurizer);
        self.rankers.insert(name.clone(), trained);
        Ok((name, report))
    }

    /// First-stage runs of a generator over the dev queries.
    pub fn retrieval_runs(&self, generator: &str, depth: usize) -> Result<Vec<RunList<f64>>> {
        let g = self.generator(generator)?;
        let inputs: Vec<_> = self.dev_data.iter().map(|lq| lq.input.clone()).collect();
        Ok(retrieve(g.as_ref(), &inputs, depth))
    }

    /// BM25 top-`rerank_depth` reranked by the named ranker, over dev.
    pub fn bm25_rerank_runs(&self, ranker: &str) -> Result<Vec<RunList<f64>>> {
        let model = self.ranker(ranker)?;
        let featurizer = self.featurizer()?;
        let bm25 = self.bm25()?;
        self.dev_data
            .par_iter()
            .map(|lq| {
                let candidates = bm25.top_k(&lq.input, self.config.rerank_depth);
                if candidates.is_empty() {
                    Ok(RunList {
                        query_id: lq.input.id.clone(),
                        entries: Vec::new(),
                    })
                } else {
                    rerank(model, &featurizer, &lq.input, &candidates)
                }
            })
            .collect()
    }

    /// Retriever top-`full_rank_depth` reranked by the named ranker, over dev.
    pub fn full_rank_runs(&self, retriever: &str, ranker: &str) -> Result<Vec<RunList<f64>>> {
        let model = self.ranker(ranker)?;
        let featurizer = self.featurizer()?;
        let g = self.generator(retriever)?;
        let inputs: Vec<_> = self.dev_data.iter().map(|lq| lq.input.clone()).collect();
        full_rank(
            g.as_ref(),
            model,
            &featurizer,
            &inputs,
            self.config.full_rank_depth,
        )
    }

    pub fn metrics(&self, runs: &[RunList<f64>]) -> Vec<(Metric, usize, f64)> {
        standard_metrics(runs, &self.dev_qrels)
    }

    pub fn mrr10(&self, runs: &[RunList<f64>]) -> f64 {
        Metric::Mrr.compute(runs, &self.dev_qrels, 10)
    }

    /// Candidates for distilling into `student`: each training query's
    /// positive plus the student's own top non-positive documents.
    pub fn distill_candidates(&self, student: &str) -> Result<Vec<DistillCandidates<f64>>> {
        let g = self.generator(student)?;
        let n = self.config.distill.n_negatives;
        Ok(self
            .train_data
            .par_iter()
            .flat_map_iter(|lq| {
                let list = g.top_k(&lq.input, n + lq.positives.len());
                let negs: Vec<usize> = list
                    .entries
                    .iter()
                    .filter(|c| !lq.positives.contains(&c.doc_id))
                    .take(n)
                    .map(|c| c.doc)
                    .collect();
                lq.positive_docs
                    .iter()
                    .map(|&p| DistillCandidates {
                        query: lq.input.clone(),
                        docs: std::iter::once(p).chain(negs.iter().copied()).collect(),
                    })
                    .collect::<Vec<_>>()
            })
            .collect())
    }

    /// Distills the named ranker into a copy of `student`, stored as
    /// `output`.
    pub fn distill(&mut self, student: &str, teacher: &str, output: &str) -> Result<DistillReport> {
        let candidates = self.distill_candidates(student)?;
        let model = self.retrievers.get(student).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!("generator `{student}` has not been trained"))
        })?;
        let config = DistillConfig {
            train: self.config.stage_config(&self.config.distill.train, output),
            ..self.config.distill.clone()
        };
        let featurizer = self.featurizer()?;
        let (trained, report) = distill_retriever(
            model,
            self.ranker(teacher)?,
            &featurizer,
            &self.corpus,
            &candidates,
            &config,
        )?;
        drop(featurizer);
        self.retrievers.insert(output.to_string(), trained);
        Ok(report)
    }

    /// Mean distribution shift between the joint distribution of
    /// `generators` and the named ranker, over dev queries.
    pub fn shift(&self, generators: &[String], ranker: &str) -> Result<ShiftSummary> {
        let featurizer = self.featurizer()?;
        let scorer = RankerScorer::new(ranker, self.ranker(ranker)?, &featurizer);
        let boxed = self.generators(generators)?;
        let refs: Vec<&dyn CandidateGenerator<f64>> = boxed.iter().map(|b| b.as_ref()).collect();
        let bm25 = self.bm25()?;
        let shifts = self
            .dev_data
            .par_iter()
            .map(|lq| {
                distribution_shift(
                    &refs,
                    &bm25,
                    &scorer,
                    &lq.input,
                    &lq.positives,
                    self.config.analysis_top_n,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let n = shifts.len().max(1) as f64;
        Ok(ShiftSummary {
            queries: shifts.len(),
            kl_generators: shifts.iter().map(|s| s.kl_generators).sum::<f64>() / n,
            kl_ranker: shifts.iter().map(|s| s.kl_ranker).sum::<f64>() / n,
            delta: shifts.iter().map(|s| s.delta).sum::<f64>() / n,
            abs_delta: shifts.iter().map(|s| s.abs()).sum::<f64>() / n,
        })
    }
}

/// Dev-set averages of per-query shifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSummary {
    pub queries: usize,
    pub kl_generators: f64,
    pub kl_ranker: f64,
    pub delta: f64,
    /// Mean of per-query `|Δ|`.
    pub abs_delta: f64,
}

/// MRR@10, Recall@50 and NDCG@10.
pub fn standard_metrics(runs: &[RunList<f64>], qrels: &Qrels) -> Vec<(Metric, usize, f64)> {
    [(Metric::Mrr, 10), (Metric::Recall, 50), (Metric::Ndcg, 10)]
        .into_iter()
        .map(|(m, k)| (m, k, m.compute(runs, qrels, k)))
        .collect()
}

/// Headline numbers of one full experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub bm25_mrr: f64,
    /// Dev MRR@10 of each trained generator's own retrieval.
    pub retriever_mrr: BTreeMap<String, f64>,
    /// BM25-reranking MRR@10 per ranker.
    pub rerank_mrr: BTreeMap<String, f64>,
    pub distill: DistillReport,
    pub distill_before_mrr: f64,
    pub distill_after_mrr: f64,
    pub shift: BTreeMap<String, ShiftSummary>,
}

impl Summary {
    /// Flat `key \t value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bm25.mrr@10\t{}", self.bm25_mrr);
        for (k, v) in &self.retriever_mrr {
            let _ = writeln!(out, "retriever.{k}.mrr@10\t{v}");
        }
        for (k, v) in &self.rerank_mrr {
            let _ = writeln!(out, "rerank.{k}.mrr@10\t{v}");
        }
        let _ = writeln!(out, "distill.kl_initial\t{}", self.distill.initial_kl);
        let _ = writeln!(out, "distill.kl_final\t{}", self.distill.final_kl);
        let _ = writeln!(out, "distill.before.mrr@10\t{}", self.distill_before_mrr);
        let _ = writeln!(out, "distill.after.mrr@10\t{}", self.distill_after_mrr);
        for (k, s) in &self.shift {
            let _ = writeln!(out, "shift.{k}.kl_generators\t{}", s.kl_generators);
            let _ = writeln!(out, "shift.{k}.kl_ranker\t{}", s.kl_ranker);
            let _ = writeln!(out, "shift.{k}.delta\t{}", s.delta);
            let _ = writeln!(out, "shift.{k}.abs_delta\t{}", s.abs_delta);
        }
        out
    }
}

/// The generator sets compared throughout: BM25 alone and BM25 joined with
/// both hard-negative retrievers.
pub fn baseline_sets() -> (Vec<String>, Vec<String>) {
    (
        vec![BM25.to_string()],
        vec![BM25.to_string(), "den_hn".to_string(), "lex_hn".to_string()],
    )
}

/// Training queries in the reference split; the rest are dev.
pub const REFERENCE_TRAIN_QUERIES: usize = 500;

/// The reference synthetic corpus: 5 topics x 1000 documents, 700 queries.
pub fn reference_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        anchor_draws: 3,
        ..SynthConfig::new(5, 1000, 700, 2000, 0.1, seed)
    }
}

/// Lab settings used by the CLI and the acceptance runs. Rankers see the top
/// 15 of each generator while reranking 1000 BM25 candidates, so the pool a
/// ranker trains on covers only the head of what it is asked to rerank.
pub fn reference_config() -> LabConfig {
    let mut config = LabConfig::default();
    config.ranker.top_n = 15;
    config
}

pub const DISTILL_STUDENT: &str = "den_hn";
pub const DISTILLED: &str = "den_distilled";

/// Runs every stage on one split: the four generators, the BM25-only and
/// joint rankers, distillation of the joint ranker into Den-HN, and the
/// distribution shift of both rankers.
pub fn run_experiment(lab: &mut Lab) -> Result<Summary> {
    for spec in &RETRIEVER_SPECS {
        let report = lab.train_generator(spec.name)?;
        log::info!(
            "{}: final epoch loss {:?}",
            spec.name,
            report.epoch_means.last()
        );
    }
    let (solo, joint) = baseline_sets();
    let solo_name = lab.train_ranker(&solo)?.0;
    let joint_name = lab.train_ranker(&joint)?.0;

    let bm25_mrr = lab.mrr10(&lab.retrieval_runs(BM25, lab.config.rerank_depth)?);
    let mut retriever_mrr = BTreeMap::new();
    for spec in &RETRIEVER_SPECS {
        retriever_mrr.insert(
            spec.name.to_string(),
            lab.mrr10(&lab.retrieval_runs(spec.name, 10)?),
        );
    }
    let mut rerank_mrr = BTreeMap::new();
    for name in [&solo_name, &joint_name] {
        rerank_mrr.insert(name.clone(), lab.mrr10(&lab.bm25_rerank_runs(name)?));
    }

    let distill = lab.distill(DISTILL_STUDENT, &joint_name, DISTILLED)?;
    let distill_before_mrr = retriever_mrr[DISTILL_STUDENT];
    let distill_after_mrr = lab.mrr10(&lab.retrieval_runs(DISTILLED, 10)?);

    let mut shift = BTreeMap::new();
    shift.insert(solo_name.clone(), lab.shift(&solo, &solo_name)?);
    shift.insert(joint_name.clone(), lab.shift(&joint, &joint_name)?);
    Ok(Summary {
        bm25_mrr,
        retriever_mrr,
        rerank_mrr,
        distill,
        distill_before_mrr,
        distill_after_mrr,
        shift,
    })
}
