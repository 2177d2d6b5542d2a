use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ranker::{PairFeaturizer, PreparedQuery, RankerGrads, RankerModel};
use crate::retrievers::{CandidateGenerator, EncodedCorpus, RetrieverModel};
use crate::sampling::{draw_negatives, joint_pool, sample_random, NegativePool};
use crate::scalar::Scalar;
use crate::text::derive_seed;

use super::{adam_step, contrastive_loss, AdamState, LabeledQuery, LossReport, TrainConfig};

/// Where a retriever's training negatives come from.
pub enum Negatives<'a, T> {
    /// Uniform over the collection minus positives.
    Random,
    /// Uniform over the capped, non-deduplicated pools of frozen generators.
    Pool(&'a [&'a dyn CandidateGenerator<T>]),
}

/// One (query, positive) training instance.
#[derive(Debug, Clone, Copy)]
struct Instance {
    query: usize,
    positive: usize,
}

fn instances<T>(data: &[LabeledQuery<T>]) -> Vec<Instance> {
    data.iter()
        .enumerate()
        .flat_map(|(q, lq)| {
            lq.positive_docs.iter().map(move |&p| Instance {
                query: q,
                positive: p,
            })
        })
        .collect()
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["epoch", &epoch.to_string()]));
    order.shuffle(&mut rng);
    order
}

fn total_steps(n_instances: usize, config: &TrainConfig) -> usize {
    config.epochs * n_instances.div_ceil(config.batch_queries)
}

fn draw_seed(config: &TrainConfig, query_id: &str, positive: usize, epoch: usize) -> u64 {
    derive_seed(
        config.seed,
        &[query_id, &positive.to_string(), &epoch.to_string()],
    )
}

fn build_pools<T: Scalar>(
    generators: &[&dyn CandidateGenerator<T>],
    data: &[LabeledQuery<T>],
    top_n: usize,
) -> Result<Vec<NegativePool>> {
    data.par_iter()
        .map(|lq| joint_pool(generators, &lq.input, &lq.positives, top_n))
        .collect()
}

/// Draws this epoch's negatives for one instance, recording source tags.
fn negatives_for<T: Scalar>(
    pools: Option<&[NegativePool]>,
    doc_ids: &[String],
    lq: &LabeledQuery<T>,
    inst: Instance,
    epoch: usize,
    config: &TrainConfig,
    tally: &mut BTreeMap<String, f64>,
) -> Result<Vec<usize>> {
    let seed = draw_seed(config, &lq.input.id, inst.positive, epoch);
    match pools {
        None => {
            *tally.entry("draws.random".into()).or_default() += config.m_negatives as f64;
            sample_random(doc_ids, &lq.positives, config.m_negatives, seed)
        }
        Some(pools) => {
            let pool = &pools[inst.query];
            if config.m_negatives > pool.len() {
                *tally.entry("draws_with_replacement".into()).or_default() += 1.0;
            }
            let drawn = draw_negatives(pool, config.m_negatives, seed)?;
            for e in &drawn {
                *tally.entry(format!("draws.{}", e.source)).or_default() += 1.0;
            }
            Ok(drawn.into_iter().map(|e| e.doc).collect())
        }
    }
}

fn pool_metrics(pools: &[NegativePool], metrics: &mut BTreeMap<String, f64>) {
    if pools.is_empty() {
        return;
    }
    let total: usize = pools.iter().map(NegativePool::len).sum();
    metrics.insert("pool_size_mean".into(), total as f64 / pools.len() as f64);
    let empty = pools.iter().filter(|p| p.is_empty()).count();
    metrics.insert("pools_empty".into(), empty as f64);
}

/// Contrastive training of a bi-encoder on its own scores.
pub fn train_retriever<T: Scalar>(
    mut model: RetrieverModel<T>,
    corpus: &EncodedCorpus<T>,
    data: &[LabeledQuery<T>],
    negatives: Negatives<'_, T>,
    config: &TrainConfig,
) -> Result<(RetrieverModel<T>, LossReport)> {
    config.validate()?;
    let pools = match negatives {
        Negatives::Random => None,
        Negatives::Pool(generators) => {
            if generators.is_empty() {
                return Err(Error::InvalidArgument(
                    "negative pool needs at least one generator".into(),
                ));
            }
            Some(build_pools(generators, data, config.top_n)?)
        }
    };
    let mut report = LossReport::default();
    if let Some(p) = &pools {
        pool_metrics(p, &mut report.metrics);
    }
    let insts = instances(data);
    let n_params = model.params().len();
    let mut state = AdamState::new(&[n_params], total_steps(insts.len(), config));
    let mut grad = vec![T::zero(); n_params];

    for epoch in 0..config.epochs {
        let order = epoch_order(insts.len(), config.seed, epoch);
        let mut losses = Vec::new();
        for batch in order.chunks(config.batch_queries) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::one() / T::count(batch.len());
            let mut batch_loss = 0.0;
            for &i in batch {
                let inst = insts[i];
                let lq = &data[inst.query];
                let negs = negatives_for(
                    pools.as_deref(),
                    &corpus.doc_ids,
                    lq,
                    inst,
                    epoch,
                    config,
                    &mut report.metrics,
                )?;
                let docs: Vec<_> = std::iter::once(inst.positive)
                    .chain(negs)
                    .map(|d| &corpus.features[d])
                    .collect();
                let q = model.encode(&lq.input.features)?;
                let scores = docs
                    .iter()
                    .map(|d| model.encode(d).map(|r| q.dot(&r)))
                    .collect::<Result<Vec<T>>>()?;
                let (loss, dscores) = contrastive_loss(scores[0], &scores[1..])?;
                batch_loss += loss.to_f64_lossy();
                let upstream: Vec<T> = dscores.into_iter().map(|g| g * scale).collect();
                model.accumulate_grad(&lq.input.features, &docs, &upstream, &mut grad)?;
            }
            adam_step(&mut [model.params_mut()], &[&grad], &mut state, config)?;
            losses.push(batch_loss / batch.len() as f64);
        }
        report.push_epoch(&losses);
    }
    Ok((model, report))
}

/// Contrastive ranker training on negatives drawn from the joint pool of
/// frozen generators. The generators are only read.
pub fn train_ranker<T: Scalar>(
    mut model: RankerModel<T>,
    featurizer: &PairFeaturizer<'_, T>,
    generators: &[&dyn CandidateGenerator<T>],
    data: &[LabeledQuery<T>],
    config: &TrainConfig,
) -> Result<(RankerModel<T>, LossReport)> {
    config.validate()?;
    if generators.is_empty() {
        return Err(Error::InvalidArgument(
            "ranker training needs at least one generator".into(),
        ));
    }
    if featurizer.feat_dim() != model.feat_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.feat_dim(),
            got: featurizer.feat_dim(),
        });
    }
    let pools = build_pools(generators, data, config.top_n)?;
    let prepared = data
        .iter()
        .map(|lq| featurizer.prepare(&lq.input))
        .collect::<Result<Vec<PreparedQuery<T>>>>()?;
    let mut report = LossReport::default();
    pool_metrics(&pools, &mut report.metrics);
    let insts = instances(data);
    let sizes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut state = AdamState::new(&sizes, total_steps(insts.len(), config));
    let doc_ids: Vec<String> = Vec::new();

    for epoch in 0..config.epochs {
        let order = epoch_order(insts.len(), config.seed, epoch);
        let mut losses = Vec::new();
        for batch in order.chunks(config.batch_queries) {
            let mut grads = RankerGrads::zeros(model.feat_dim(), model.hidden());
            let scale = T::one() / T::count(batch.len());
            let mut batch_loss = 0.0;
            for &i in batch {
                let inst = insts[i];
                let lq = &data[inst.query];
                let negs = negatives_for(
                    Some(&pools),
                    &doc_ids,
                    lq,
                    inst,
                    epoch,
                    config,
                    &mut report.metrics,
                )?;
                let feats: Vec<Vec<T>> = std::iter::once(inst.positive)
                    .chain(negs)
                    .map(|d| featurizer.features(&prepared[inst.query], d))
                    .collect();
                let scores = feats
                    .iter()
                    .map(|x| model.score(x))
                    .collect::<Result<Vec<T>>>()?;
                let (loss, dscores) = contrastive_loss(scores[0], &scores[1..])?;
                batch_loss += loss.to_f64_lossy();
                for (x, g) in feats.iter().zip(dscores) {
                    model.accumulate(x, g * scale, &mut grads)?;
                }
            }
            let g = grads.slices();
            adam_step(&mut model.param_slices_mut(), &g, &mut state, config)?;
            losses.push(batch_loss / batch.len() as f64);
        }
        report.push_epoch(&losses);
    }
    Ok((model, report))
}
