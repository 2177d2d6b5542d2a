use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ranker::{PairFeaturizer, RankerModel};
use crate::retrievers::{EncodedCorpus, QueryInput, RetrieverModel};
use crate::scalar::Scalar;
use crate::text::derive_seed;

use super::{adam_step, distillation_loss, AdamState, KlDirection, LossReport, TrainConfig};

/// Candidate documents (one positive plus negatives) for one query.
#[derive(Debug, Clone)]
pub struct DistillCandidates<T> {
    pub query: QueryInput<T>,
    pub docs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub train: TrainConfig,
    pub direction: KlDirection,
    /// Negatives per query next to the single positive.
    pub n_negatives: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            direction: KlDirection::Forward,
            n_negatives: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillReport {
    pub losses: LossReport,
    pub initial_kl: f64,
    pub final_kl: f64,
    pub skipped: usize,
}

fn teacher_scores<T: Scalar>(
    teacher: &RankerModel<T>,
    featurizer: &PairFeaturizer<'_, T>,
    candidates: &[DistillCandidates<T>],
) -> Result<Vec<Vec<T>>> {
    candidates
        .iter()
        .map(|c| {
            let prepared = featurizer.prepare(&c.query)?;
            c.docs
                .iter()
                .map(|&d| teacher.score(&featurizer.features(&prepared, d)))
                .collect()
        })
        .collect()
}

fn student_scores<T: Scalar>(
    student: &RetrieverModel<T>,
    corpus: &EncodedCorpus<T>,
    c: &DistillCandidates<T>,
) -> Result<Vec<T>> {
    let q = student.encode(&c.query.features)?;
    c.docs
        .iter()
        .map(|&d| student.encode(&corpus.features[d]).map(|r| q.dot(&r)))
        .collect()
}

/// Mean per-query divergence between teacher and student over the usable
/// candidate lists.
pub fn mean_kl<T: Scalar>(
    student: &RetrieverModel<T>,
    corpus: &EncodedCorpus<T>,
    candidates: &[DistillCandidates<T>],
    teacher: &[Vec<T>],
    direction: KlDirection,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (c, t) in candidates.iter().zip(teacher) {
        if c.docs.len() < 2 {
            continue;
        }
        let s = student_scores(student, corpus, c)?;
        total += distillation_loss(t, &s, direction)?.0.to_f64_lossy();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Trains `student` to match the frozen `teacher`'s softmax distribution over
/// each query's candidates.
pub fn distill_retriever<T: Scalar>(
    mut student: RetrieverModel<T>,
    teacher: &RankerModel<T>,
    featurizer: &PairFeaturizer<'_, T>,
    corpus: &EncodedCorpus<T>,
    candidates: &[DistillCandidates<T>],
    config: &DistillConfig,
) -> Result<(RetrieverModel<T>, DistillReport)> {
    let train = &config.train;
    train.validate()?;
    let usable: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            if c.docs.len() < 2 {
                log::warn!(
                    "skipping query `{}`: fewer than 2 distillation candidates",
                    c.query.id
                );
                false
            } else {
                true
            }
        })
        .map(|(i, _)| i)
        .collect();
    let skipped = candidates.len() - usable.len();
    let targets = teacher_scores(teacher, featurizer, candidates)?;
    let initial_kl = mean_kl(&student, corpus, candidates, &targets, config.direction)?;

    let n_params = student.params().len();
    let steps = train.epochs * usable.len().div_ceil(train.batch_queries);
    let mut state = AdamState::new(&[n_params], steps);
    let mut grad = vec![T::zero(); n_params];
    let mut losses = LossReport::default();
    for epoch in 0..train.epochs {
        let mut order = usable.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(train.seed, &["distill", &epoch.to_string()]));
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for batch in order.chunks(train.batch_queries) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::one() / T::count(batch.len());
            let mut batch_loss = 0.0;
            for &i in batch {
                let c = &candidates[i];
                let s = student_scores(&student, corpus, c)?;
                let (kl, ds) = distillation_loss(&targets[i], &s, config.direction)?;
                batch_loss += kl.to_f64_lossy();
                let docs: Vec<_> = c.docs.iter().map(|&d| &corpus.features[d]).collect();
                let upstream: Vec<T> = ds.into_iter().map(|g| g * scale).collect();
                student.accumulate_grad(&c.query.features, &docs, &upstream, &mut grad)?;
            }
            adam_step(&mut [student.params_mut()], &[&grad], &mut state, train)?;
            epoch_losses.push(batch_loss / batch.len() as f64);
        }
        losses.push_epoch(&epoch_losses);
    }
    let final_kl = mean_kl(&student, corpus, candidates, &targets, config.direction)?;
    losses.metrics.insert("kl_initial".into(), initial_kl);
    losses.metrics.insert("kl_final".into(), final_kl);
    losses
        .metrics
        .insert("skipped_queries".into(), skipped as f64);
    Ok((
        student,
        DistillReport {
            losses,
            initial_kl,
            final_kl,
            skipped,
        },
    ))
}
