//! Contrastive training of retrievers and rankers, and distillation of a
//! ranker into a retriever.

mod adam;
mod config;
mod contrastive;
mod distill;
mod loss;
mod report;

use std::collections::BTreeSet;

pub use adam::{adam_step, schedule_factor, AdamState};
pub use config::{parse_kv, TrainConfig, KEYS as CONFIG_KEYS};
pub use contrastive::{train_ranker, train_retriever, Negatives};
pub use distill::{distill_retriever, mean_kl, DistillCandidates, DistillConfig, DistillReport};
pub use loss::{contrastive_loss, distillation_loss, log_softmax, softmax, KlDirection};
pub use report::{LossReport, FOOTER_MARKER};

use crate::corpus::{Collection, TrainingSet};
use crate::error::{Error, Result};
use crate::retrievers::{EncodedCorpus, QueryInput};
use crate::scalar::Scalar;

/// A query with its positives resolved to document ordinals.
#[derive(Debug, Clone)]
pub struct LabeledQuery<T> {
    pub input: QueryInput<T>,
    pub positives: BTreeSet<String>,
    pub positive_docs: Vec<usize>,
}

/// Resolves every query of `set` that has positives.
pub fn labeled_queries<T: Scalar>(
    set: &TrainingSet,
    collection: &Collection,
    corpus: &EncodedCorpus<T>,
) -> Result<Vec<LabeledQuery<T>>> {
    set.queries
        .iter()
        .filter_map(|q| set.positives(&q.id).map(|p| (q, p)))
        .map(|(q, positives)| {
            let positive_docs = positives
                .iter()
                .map(|d| {
                    collection
                        .ordinal(d)
                        .ok_or_else(|| Error::UnknownId(d.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LabeledQuery {
                input: corpus.encode_query(q),
                positives: positives.clone(),
                positive_docs,
            })
        })
        .collect()
}
