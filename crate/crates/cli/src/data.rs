//! On-disk dataset layout shared by every subcommand.
//!
//! ```text
//! DIR/collection.tsv     docid \t text
//! DIR/train.queries.tsv  qid \t text
//! DIR/train.qrels        qid 0 docid grade
//! DIR/dev.queries.tsv
//! DIR/dev.qrels
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use jointneg::corpus::{
    load_collection, load_qrels, load_queries, write_collection, write_qrels, write_queries,
    Collection, Judgment, Query, SyntheticCorpus, TrainingSet,
};
use jointneg::eval::Qrels;
use jointneg::lab::{Lab, LabConfig};
use jointneg::retrievers::InvertedIndex;

pub const COLLECTION: &str = "collection.tsv";
pub const TRAIN_QUERIES: &str = "train.queries.tsv";
pub const TRAIN_QRELS: &str = "train.qrels";
pub const DEV_QUERIES: &str = "dev.queries.tsv";
pub const DEV_QRELS: &str = "dev.qrels";
pub const FILES: [&str; 5] = [
    COLLECTION,
    TRAIN_QUERIES,
    TRAIN_QRELS,
    DEV_QUERIES,
    DEV_QRELS,
];

pub struct Dataset {
    pub collection: Collection,
    pub train_queries: Vec<Query>,
    pub train_qrels: Vec<Judgment>,
    pub dev_queries: Vec<Query>,
    pub dev_qrels: Vec<Judgment>,
}

impl Dataset {
    /// Splits a synthetic corpus after its first `n_train` queries.
    pub fn from_synthetic(corpus: SyntheticCorpus, n_train: usize) -> Self {
        let n_train = n_train.min(corpus.queries.len());
        let (train_q, dev_q) = corpus.queries.split_at(n_train);
        let in_split = |qs: &[Query]| -> Vec<Judgment> {
            corpus
                .judgments
                .iter()
                .filter(|j| qs.iter().any(|q| q.id == j.query_id))
                .cloned()
                .collect()
        };
        Self {
            train_qrels: in_split(train_q),
            dev_qrels: in_split(dev_q),
            train_queries: train_q.to_vec(),
            dev_queries: dev_q.to_vec(),
            collection: corpus.collection,
        }
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let at = |f: &str| dir.join(f);
        Ok(Self {
            collection: load_collection(at(COLLECTION))
                .with_context(|| format!("loading {}", at(COLLECTION).display()))?,
            train_queries: load_queries(at(TRAIN_QUERIES))
                .with_context(|| format!("loading {}", at(TRAIN_QUERIES).display()))?,
            train_qrels: load_qrels(at(TRAIN_QRELS))
                .with_context(|| format!("loading {}", at(TRAIN_QRELS).display()))?,
            dev_queries: load_queries(at(DEV_QUERIES))
                .with_context(|| format!("loading {}", at(DEV_QUERIES).display()))?,
            dev_qrels: load_qrels(at(DEV_QRELS))
                .with_context(|| format!("loading {}", at(DEV_QRELS).display()))?,
        })
    }

    /// Writes the five files and returns their paths.
    pub fn write(&self, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_collection(&self.collection, dir.join(COLLECTION))?;
        write_queries(&self.train_queries, dir.join(TRAIN_QUERIES))?;
        write_qrels(&self.train_qrels, dir.join(TRAIN_QRELS))?;
        write_queries(&self.dev_queries, dir.join(DEV_QUERIES))?;
        write_qrels(&self.dev_qrels, dir.join(DEV_QRELS))?;
        Ok(FILES.iter().map(|f| dir.join(f)).collect())
    }

    pub fn lab(self, config: LabConfig, index: Option<InvertedIndex>) -> anyhow::Result<Lab> {
        let train =
            TrainingSet::from_judgments(&self.train_queries, &self.train_qrels, &self.collection)?;
        let dev =
            TrainingSet::from_judgments(&self.dev_queries, &self.dev_qrels, &self.collection)?;
        let mut lab = match index {
            Some(index) => Lab::with_index(config, self.collection, index, train, dev)?,
            None => Lab::new(config, self.collection, train, dev)?,
        };
        lab.dev_qrels = Qrels::new(&self.dev_qrels);
        Ok(lab)
    }
}
