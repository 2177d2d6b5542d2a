//! One PASS/FAIL line per acceptance criterion; exits non-zero on any failure.
//!
//! Every oracle here is written independently of the library code it checks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use jointneg::analysis::{
    joint_distribution, kl_divergence, model_distribution, SupportDistribution,
};
use jointneg::corpus::{
    format_collection, format_qrels, format_queries, generate_synthetic, parse_collection,
    parse_qrels, parse_queries, Collection, Document, Judgment, Query,
};
use jointneg::eval::{format_run, mrr_at_k, ndcg_at_k, parse_run, recall_at_k, Qrels, RunList};
use jointneg::lab::{self, run_experiment, Lab, Summary};
use jointneg::ranker::RankerModel;
use jointneg::retrievers::{
    bm25_topk, Bm25Params, CandidateGenerator, DenseModel, InvertedIndex, LexModel, QueryInput,
    RetrieverModel,
};
use jointneg::sampling::{candidate_pool, draw_negatives, joint_pool, NegativePool, PoolEntry};
use jointneg::text::SparseVector;
use jointneg::training::{contrastive_loss, distillation_loss, KlDirection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients against central finite differences.

const FD_STEP: f64 = 1e-5;
const FD_DRAWS: usize = 100;
const FD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps near-zero gradients from
/// turning round-off into large relative errors.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central_diff(x: &mut [f64], i: usize, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn normal(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    // Sum of uniforms is plenty for test inputs.
    (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * scale
}

fn random_sparse(rng: &mut ChaCha8Rng, dim: usize, nnz: usize) -> SparseVector<f64> {
    let mut idx = BTreeMap::new();
    for _ in 0..nnz {
        idx.insert(rng.gen_range(0..dim), rng.gen_range(1..4) as f64);
    }
    SparseVector::new(dim, idx.into_iter().collect()).unwrap()
}

fn grad_contrastive(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..20);
    let mut scores: Vec<f64> = (0..=n).map(|_| normal(rng, 2.0)).collect();
    let (_, grad) = contrastive_loss(scores[0], &scores[1..]).unwrap();
    let mut loss = |s: &[f64]| -> f64 {
        // -ln(e^{s0} / Σ e^{sj}), evaluated directly.
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        -(s[0].exp() / z).ln()
    };
    (0..scores.len())
        .map(|i| rel_err(grad[i], central_diff(&mut scores, i, &mut loss)))
        .fold(0.0, f64::max)
}

fn grad_distill(rng: &mut ChaCha8Rng, direction: KlDirection) -> f64 {
    let n = rng.gen_range(2..15);
    let teacher: Vec<f64> = (0..n).map(|_| normal(rng, 2.0)).collect();
    let mut student: Vec<f64> = (0..n).map(|_| normal(rng, 2.0)).collect();
    let (_, grad) = distillation_loss(&teacher, &student, direction).unwrap();
    let probs = |s: &[f64]| -> Vec<f64> {
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        s.iter().map(|v| v.exp() / z).collect()
    };
    let pt = probs(&teacher);
    let mut kl = |s: &[f64]| -> f64 {
        let ps = probs(s);
        let (p, q) = match direction {
            KlDirection::Forward => (&pt, &ps),
            KlDirection::Reverse => (&ps, &pt),
        };
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    };
    (0..n)
        .map(|i| rel_err(grad[i], central_diff(&mut student, i, &mut kl)))
        .fold(0.0, f64::max)
}

fn grad_ranker(rng: &mut ChaCha8Rng) -> f64 {
    let feat_dim = 3 * rng.gen_range(1..5) + 4;
    let hidden = rng.gen_range(1..9);
    let model = RankerModel::<f64>::random(feat_dim, hidden, 0.7, rng.gen());
    let batch: Vec<Vec<f64>> = (0..rng.gen_range(1..6))
        .map(|_| (0..feat_dim).map(|_| normal(rng, 1.0)).collect())
        .collect();
    let upstream: Vec<f64> = batch.iter().map(|_| normal(rng, 1.0)).collect();
    let refs: Vec<&[f64]> = batch.iter().map(|x| x.as_slice()).collect();
    let g = model.grad(&refs, &upstream).unwrap();
    let analytic: Vec<f64> = g.slices().concat();
    let mut flat: Vec<f64> = model.param_slices().concat();
    let mut objective = |p: &[f64]| -> f64 {
        // Forward pass written out from the flat parameter layout.
        let (w1, rest) = p.split_at(feat_dim * hidden);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden);
        batch
            .iter()
            .zip(&upstream)
            .map(|(x, u)| {
                let s: f64 = (0..hidden)
                    .map(|j| {
                        let pre: f64 = b1[j]
                            + (0..feat_dim)
                                .map(|f| w1[f * hidden + j] * x[f])
                                .sum::<f64>();
                        w2[j] * pre.tanh()
                    })
                    .sum::<f64>()
                    + b2[0];
                u * s
            })
            .sum()
    };
    let coords: Vec<usize> = (0..12).map(|_| rng.gen_range(0..flat.len())).collect();
    coords
        .into_iter()
        .map(|i| rel_err(analytic[i], central_diff(&mut flat, i, &mut objective)))
        .fold(0.0, f64::max)
}

/// `Σ_j u_j score(q, d_j)` for a bi-encoder, against its accumulated gradient.
fn grad_retriever(rng: &mut ChaCha8Rng, dense: bool) -> f64 {
    let dim = rng.gen_range(4..30);
    let emb = rng.gen_range(1..6);
    let model = if dense {
        let table: Vec<f64> = (0..dim * emb).map(|_| normal(rng, 0.5)).collect();
        RetrieverModel::Dense(DenseModel::from_table(dim, emb, table).unwrap())
    } else {
        let w: Vec<f64> = (0..dim).map(|_| normal(rng, 1.0)).collect();
        RetrieverModel::Lexicon(LexModel::from_weights(w).unwrap())
    };
    let nnz = rng.gen_range(1..5);
    let q = random_sparse(rng, dim, nnz);
    let docs: Vec<SparseVector<f64>> = (0..rng.gen_range(1..5))
        .map(|_| {
            // Force some overlap with the query so lexicon gradients are non-zero.
            let nnz = rng.gen_range(1..6);
            let mut d = random_sparse(rng, dim, nnz).entries().to_vec();
            let &(i, _) = &q.entries()[rng.gen_range(0..q.nnz())];
            if !d.iter().any(|&(j, _)| j == i) {
                d.push((i, 1.0));
                d.sort_by_key(|e| e.0);
            }
            SparseVector::new(dim, d).unwrap()
        })
        .collect();
    let upstream: Vec<f64> = docs.iter().map(|_| normal(rng, 1.0)).collect();
    let doc_refs: Vec<&SparseVector<f64>> = docs.iter().collect();
    let mut grad = vec![0.0; model.params().len()];
    model
        .accumulate_grad(&q, &doc_refs, &upstream, &mut grad)
        .unwrap();
    let mut params = model.params().to_vec();
    let mut objective = |p: &[f64]| -> f64 {
        let score = |d: &SparseVector<f64>| -> f64 {
            if dense {
                let pool = |v: &SparseVector<f64>| -> Vec<f64> {
                    let total: f64 = v.entries().iter().map(|e| e.1).sum();
                    (0..emb)
                        .map(|k| {
                            v.entries()
                                .iter()
                                .map(|&(i, c)| c * p[i * emb + k])
                                .sum::<f64>()
                                / total
                        })
                        .collect()
                };
                pool(&q).iter().zip(pool(d)).map(|(a, b)| a * b).sum()
            } else {
                q.entries()
                    .iter()
                    .map(|&(i, c)| {
                        let w = (1.0 + p[i].exp()).ln();
                        w * w * c * d.get(i)
                    })
                    .sum()
            }
        };
        docs.iter().zip(&upstream).map(|(d, u)| u * score(d)).sum()
    };
    // Coordinates the objective depends on, plus a couple of arbitrary ones.
    let mut coords: BTreeSet<usize> = BTreeSet::new();
    for &(i, _) in q.entries() {
        if dense {
            coords.extend(i * emb..(i + 1) * emb);
        } else {
            coords.insert(i);
        }
    }
    for _ in 0..2 {
        coords.insert(rng.gen_range(0..params.len()));
    }
    coords
        .into_iter()
        .map(|i| rel_err(grad[i], central_diff(&mut params, i, &mut objective)))
        .fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let max = (0..FD_DRAWS).map(|_| f(&mut rng)).fold(0.0, f64::max);
        worst.push((name, max));
    };
    run("contrastive", &mut grad_contrastive);
    run("ranker", &mut grad_ranker);
    run("dense", &mut |r| grad_retriever(r, true));
    run("lexicon", &mut |r| grad_retriever(r, false));
    run("kl_forward", &mut |r| grad_distill(r, KlDirection::Forward));
    run("kl_reverse", &mut |r| grad_distill(r, KlDirection::Reverse));
    let elapsed = start.elapsed();
    let ok = worst.iter().all(|(_, e)| *e < FD_TOL) && elapsed < Duration::from_secs(120);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        ok,
        format!(
            "max rel err over {FD_DRAWS} draws each: {detail}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Metrics against brute force.

struct Instance {
    runs: Vec<RunList<f64>>,
    judgments: Vec<Judgment>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_docs = rng.gen_range(1..30);
    let mut runs = Vec::new();
    let mut judgments = Vec::new();
    for q in 0..rng.gen_range(1..6) {
        let qid = format!("q{q}");
        let len = rng.gen_range(0..=n_docs);
        let entries: Vec<(String, f64)> = (0..len)
            .map(|d| (format!("d{d}"), (rng.gen_range(0..8) as f64) * 0.5))
            .collect();
        runs.push(RunList::new(qid.clone(), entries));
        for d in 0..n_docs + 3 {
            if rng.gen_bool(0.3) {
                judgments.push(Judgment {
                    query_id: qid.clone(),
                    doc_id: format!("d{d}"),
                    grade: rng.gen_range(0..4),
                });
            }
        }
    }
    Instance { runs, judgments }
}

fn brute_grade(judgments: &[Judgment], q: &str, d: &str) -> u32 {
    judgments
        .iter()
        .rfind(|j| j.query_id == q && j.doc_id == d)
        .map(|j| j.grade)
        .unwrap_or(0)
}

/// Per-query value for each of MRR, recall, NDCG, or `None` when the query
/// has nothing relevant.
fn brute_query(judgments: &[Judgment], run: &RunList<f64>, k: usize) -> Option<[f64; 3]> {
    let q = &run.query_id;
    let mut latest: BTreeMap<&str, u32> = BTreeMap::new();
    for j in judgments.iter().filter(|j| &j.query_id == q) {
        latest.insert(&j.doc_id, j.grade);
    }
    let n_rel = latest.values().filter(|&&g| g > 0).count();
    if n_rel == 0 {
        return None;
    }
    let top: Vec<&str> = run.entries.iter().take(k).map(|e| e.0.as_str()).collect();
    let mut mrr = 0.0;
    for (i, d) in top.iter().enumerate() {
        if brute_grade(judgments, q, d) > 0 {
            mrr = 1.0 / (i as f64 + 1.0);
            break;
        }
    }
    let hits = top
        .iter()
        .filter(|d| brute_grade(judgments, q, d) > 0)
        .count();
    let gain = |g: u32| (1u64 << g) as f64 - 1.0;
    let dcg: f64 = top
        .iter()
        .enumerate()
        .map(|(i, d)| gain(brute_grade(judgments, q, d)) / (i as f64 + 2.0).log2())
        .sum();
    // Ideal ordering by repeated selection of the largest remaining grade.
    let mut remaining: Vec<u32> = latest.values().copied().collect();
    let mut idcg = 0.0;
    for i in 0..k.min(remaining.len()) {
        let (pos, &g) = remaining
            .iter()
            .enumerate()
            .max_by_key(|(_, g)| **g)
            .unwrap();
        remaining.swap_remove(pos);
        idcg += gain(g) / (i as f64 + 2.0).log2();
    }
    Some([
        mrr,
        hits as f64 / n_rel as f64,
        if idcg > 0.0 { dcg / idcg } else { 0.0 },
    ])
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let inst = random_instance(&mut rng);
        let qrels = Qrels::new(&inst.judgments);
        for k in [1, 3, 10, 50] {
            let per: Vec<[f64; 3]> = inst
                .runs
                .iter()
                .filter_map(|r| brute_query(&inst.judgments, r, k))
                .collect();
            let mean = |m: usize| {
                if per.is_empty() {
                    0.0
                } else {
                    per.iter().map(|v| v[m]).sum::<f64>() / per.len() as f64
                }
            };
            let got = [
                mrr_at_k(&inst.runs, &qrels, k),
                recall_at_k(&inst.runs, &qrels, k),
                ndcg_at_k(&inst.runs, &qrels, k),
            ];
            for (m, v) in got.iter().enumerate() {
                worst = worst.max((v - mean(m)).abs());
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("1000 instances x k in {{1,3,10,50}}: max |diff| {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. BM25 against exhaustive scoring.

fn oracle_bm25(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let terms: BTreeSet<&String> = query.iter().collect();
    let mut scored = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let mut s = 0.0;
        for t in &terms {
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let tf = doc.iter().filter(|w| w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
        }
        if s > 0.0 {
            scored.push((i, s));
        }
    }
    scored
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = 300;
    let word = |r: &mut ChaCha8Rng| -> String {
        // Skewed vocabulary so document frequencies vary widely.
        let x: f64 = r.gen();
        format!("w{}", (x * x * vocab as f64) as usize)
    };
    let docs: Vec<Vec<String>> = (0..1000)
        .map(|_| (0..rng.gen_range(5..40)).map(|_| word(&mut rng)).collect())
        .collect();
    let collection = Collection::new(
        docs.iter()
            .enumerate()
            .map(|(i, d)| Document {
                id: format!("doc{i:04}"),
                text: d.join(" "),
            })
            .collect(),
    )
    .unwrap();
    let index = InvertedIndex::build(&collection).unwrap();
    let params = Bm25Params::new(0.9, 0.4).unwrap();
    let mut mismatched = 0;
    let mut worst = 0.0f64;
    for q in 0..100 {
        let query: Vec<String> = (0..rng.gen_range(1..6)).map(|_| word(&mut rng)).collect();
        let mut expect = oracle_bm25(&docs, &query, 0.9, 0.4);
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = bm25_topk(&index, &params, &format!("q{q}"), &query, docs.len());
        let got_order: Vec<usize> = got.entries.iter().map(|c| c.doc).collect();
        let want_order: Vec<usize> = expect.iter().map(|e| e.0).collect();
        if got_order != want_order {
            mismatched += 1;
        }
        for (c, (_, s)) in got.entries.iter().zip(&expect) {
            worst = worst.max((c.score - s).abs() / s.abs().max(1.0));
        }
    }

    // d1 = "a b a", d2 = "b c", d3 = "c d e" (avgdl 8/3). For "a": df = 1, so
    // idf = ln(1 + 2.5/1.5) = ln(8/3); tf = 2, |d1| = 3, so
    // tf(k1+1)/(tf + k1(1 - b + b·3/(8/3))) = 3.8 / (2 + 0.9·1.05) = 3.8/2.945.
    let tiny = Collection::new(
        [("d1", "a b a"), ("d2", "b c"), ("d3", "c d e")]
            .iter()
            .map(|(id, text)| Document {
                id: id.to_string(),
                text: text.to_string(),
            })
            .collect(),
    )
    .unwrap();
    let tiny_index = InvertedIndex::build(&tiny).unwrap();
    let hand = 1.2655861329183564_f64; // ln(8/3) * 3.8 / 2.945
    let tiny_score = bm25_topk(&tiny_index, &params, "q", &["a"], 3).entries[0].score;
    let hand_ok = (tiny_score - hand).abs() <= 1e-9;
    check(
        mismatched == 0 && hand_ok && worst < 1e-12,
        format!(
            "100 queries x 1000 docs: {mismatched} order mismatches, max score rel diff {worst:.1e}; hand score {tiny_score:.12} vs {hand:.12}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Negative sampling.

struct RandomScorer {
    name: String,
    ids: Vec<String>,
    seed: u64,
}

impl CandidateGenerator<f64> for RandomScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_all(&self, query: &QueryInput<f64>) -> Vec<f64> {
        let salt: u64 = query
            .id
            .bytes()
            .fold(self.seed, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        self.ids.iter().map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    fn doc_ids(&self) -> &[String] {
        &self.ids
    }
}

fn criterion_4() -> Outcome {
    let ids: Vec<String> = (0..60).map(|i| format!("d{i}")).collect();
    let gens: Vec<RandomScorer> = (0..3)
        .map(|g| RandomScorer {
            name: format!("g{g}"),
            ids: ids.clone(),
            seed: g,
        })
        .collect();
    let refs: Vec<&dyn CandidateGenerator<f64>> = gens.iter().map(|g| g as _).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut positives_drawn = 0usize;
    let mut not_additive = 0usize;
    const TRIALS: usize = 100_000;
    for t in 0..TRIALS {
        let query = QueryInput::<f64>::new(&format!("q{t}"), "x", 8, 0);
        let positives: BTreeSet<String> = (0..rng.gen_range(1..8))
            .map(|_| ids[rng.gen_range(0..ids.len())].clone())
            .collect();
        let top_n = rng.gen_range(1..20);
        let pool = joint_pool(&refs, &query, &positives, top_n).unwrap();
        let parts: usize = refs
            .iter()
            .map(|g| candidate_pool(*g, &query, &positives, top_n).len())
            .sum();
        if pool.len() != parts {
            not_additive += 1;
        }
        let m = rng.gen_range(1..50);
        positives_drawn += draw_negatives(&pool, m, t as u64)
            .unwrap()
            .iter()
            .filter(|e| positives.contains(&e.doc_id))
            .count()
            + pool
                .entries
                .iter()
                .filter(|e| positives.contains(&e.doc_id))
                .count();
    }

    // "dup" is pooled by two generators, every other doc by one.
    let entry = |doc: usize, source: &str| PoolEntry {
        doc,
        doc_id: format!("d{doc}"),
        source: source.to_string(),
        rank: 1,
    };
    let mut entries = vec![entry(0, "a"), entry(0, "b")];
    entries.extend((1..9).map(|d| entry(d, "a")));
    let pool = NegativePool {
        query_id: "q".into(),
        top_n: 10,
        entries,
    };
    let mut counts = [0usize; 9];
    for s in 0..TRIALS as u64 {
        counts[draw_negatives(&pool, 1, s).unwrap()[0].doc] += 1;
    }
    let single = counts[1..].iter().sum::<usize>() as f64 / 8.0;
    let ratio = counts[0] as f64 / single;
    check(
        positives_drawn == 0 && not_additive == 0 && (ratio - 2.0).abs() <= 0.1,
        format!(
            "{TRIALS} trials: {positives_drawn} positives pooled or drawn, {not_additive} non-additive pools; duplicate drawn {ratio:.3}x as often"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5-8. Experiments on the reference corpus.

const SEEDS: [u64; 3] = [0, 1, 2];

struct Experiments {
    summaries: Vec<Summary>,
    elapsed: Duration,
}

fn experiments() -> &'static Result<Experiments, String> {
    static CELL: OnceLock<Result<Experiments, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut summaries = Vec::new();
        for seed in SEEDS {
            let corpus =
                generate_synthetic(&lab::reference_synth(seed)).map_err(|e| e.to_string())?;
            let (train, dev) = corpus.split(lab::REFERENCE_TRAIN_QUERIES);
            let config = lab::LabConfig {
                seed,
                ..lab::reference_config()
            };
            let mut lab =
                Lab::new(config, corpus.collection, train, dev).map_err(|e| e.to_string())?;
            summaries.push(run_experiment(&mut lab).map_err(|e| e.to_string())?);
        }
        Ok(Experiments {
            summaries,
            elapsed: start.elapsed(),
        })
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn with_experiments(f: impl FnOnce(&Experiments) -> Outcome) -> Outcome {
    match experiments() {
        Ok(e) => f(e),
        Err(e) => Err(format!("experiment failed: {e}")),
    }
}

fn ranker_names() -> (String, String) {
    let (solo, joint) = lab::baseline_sets();
    (lab::ranker_name(&solo), lab::ranker_name(&joint))
}

fn criterion_5() -> Outcome {
    with_experiments(|e| {
        let (solo, joint) = ranker_names();
        let bm25 = mean(e.summaries.iter().map(|s| s.bm25_mrr));
        let solo_m = mean(e.summaries.iter().map(|s| s.rerank_mrr[&solo]));
        let joint_m = mean(e.summaries.iter().map(|s| s.rerank_mrr[&joint]));
        let gaps: Vec<f64> = e
            .summaries
            .iter()
            .map(|s| s.rerank_mrr[&joint] - s.rerank_mrr[&solo])
            .collect();
        let positive = gaps.iter().filter(|g| **g > 0.0).count();
        check(
            joint_m >= solo_m && solo_m >= bm25 && positive >= 2 && e.elapsed < Duration::from_secs(900),
            format!(
                "MRR@10 joint {joint_m:.4} >= bm25-only {solo_m:.4} >= bm25 {bm25:.4}; gaps {}; {:.0}s",
                gaps.iter().map(|g| format!("{g:+.4}")).collect::<Vec<_>>().join(" "),
                e.elapsed.as_secs_f64()
            ),
        )
    })
}

fn criterion_6() -> Outcome {
    with_experiments(|e| {
        let m = |name: &str| mean(e.summaries.iter().map(|s| s.retriever_mrr[name]));
        let (dbn, dhn, lbn, lhn) = (m("den_bn"), m("den_hn"), m("lex_bn"), m("lex_hn"));
        check(
            dhn >= dbn && lhn >= lbn,
            format!("dev MRR@10 den HN {dhn:.4} vs BN {dbn:.4}; lex HN {lhn:.4} vs BN {lbn:.4}"),
        )
    })
}

fn criterion_7() -> Outcome {
    with_experiments(|e| {
        let ratios: Vec<f64> = e
            .summaries
            .iter()
            .map(|s| s.distill.final_kl / s.distill.initial_kl)
            .collect();
        let before = mean(e.summaries.iter().map(|s| s.distill_before_mrr));
        let after = mean(e.summaries.iter().map(|s| s.distill_after_mrr));
        check(
            ratios.iter().all(|r| *r <= 0.5) && after >= before,
            format!(
                "final/initial KL {}; MRR@10 {before:.4} -> {after:.4}",
                ratios
                    .iter()
                    .map(|r| format!("{r:.3}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
        )
    })
}

fn random_dist(rng: &mut ChaCha8Rng, support: &[String], sparse: bool) -> SupportDistribution<f64> {
    let raw: Vec<f64> = support
        .iter()
        .map(|_| {
            if sparse && rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..1.0f64).powi(3)
            }
        })
        .collect();
    let total: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    SupportDistribution {
        support: support.to_vec(),
        probs: raw.iter().map(|x| x / total).collect(),
        source: "random".into(),
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut self_zero = true;
    let mut negative = 0usize;
    let mut single_equal = true;
    for i in 0..1000 {
        let n = rng.gen_range(1..40);
        let support: Vec<String> = (0..n).map(|d| format!("d{d}")).collect();
        let p = random_dist(&mut rng, &support, i % 2 == 0);
        let q = random_dist(&mut rng, &support, i % 3 == 0);
        self_zero &= kl_divergence(&p, &p).unwrap() == 0.0;
        if kl_divergence(&p, &q).unwrap() < 0.0 {
            negative += 1;
        }
        let scorer = RandomScorer {
            name: "s".into(),
            ids: (0..n + 5).map(|d| format!("d{d}")).collect(),
            seed: i,
        };
        let query = QueryInput::<f64>::new("q", "x", 8, 0);
        let single =
            joint_distribution(&[&scorer as &dyn CandidateGenerator<f64>], &query, &support)
                .unwrap();
        let alone = model_distribution(&scorer, &query, &support).unwrap();
        single_equal &= single
            .probs
            .iter()
            .zip(&alone.probs)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    with_experiments(|e| {
        let (solo, joint) = ranker_names();
        let d_solo = mean(e.summaries.iter().map(|s| s.shift[&solo].abs_delta));
        let d_joint = mean(e.summaries.iter().map(|s| s.shift[&joint].abs_delta));
        check(
            self_zero && negative == 0 && single_equal && d_joint < d_solo,
            format!(
                "KL(p,p)=0: {self_zero}; {negative}/1000 negative KL; single-scorer joint identical: {single_equal}; |delta| joint {d_joint:.4} < bm25-only {d_solo:.4}"
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// 9-10. The command-line tool.

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jointneg"))
}

/// A reduced corpus keeps the three pipeline runs fast.
const SMALL: [&str; 6] = [
    "--set",
    "synth.docs_per_topic=200",
    "--set",
    "synth.n_queries=150",
    "--set",
    "n_train=100",
];

fn pipeline(out: &Path, threads: usize) -> Result<(), String> {
    let status = bin()
        .args(["pipeline", "--out"])
        .arg(out)
        .args(SMALL)
        .args(["--threads", &threads.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

/// Manifest text plus the bytes of every artifact it lists.
fn snapshot(out: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let manifest = std::fs::read_to_string(out.join("manifest.tsv")).map_err(|e| e.to_string())?;
    let mut files = BTreeMap::new();
    for line in manifest.lines() {
        if let Some(rest) = line.strip_prefix("artifact\t") {
            let path = rest.split('\t').next().unwrap();
            files.insert(
                path.to_string(),
                std::fs::read(out.join(path)).map_err(|e| e.to_string())?,
            );
        }
    }
    files.insert("manifest.tsv".into(), manifest.into_bytes());
    Ok(files)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    pipeline(&a, 1)?;
    pipeline(&b, 1)?;
    pipeline(&c, 4)?;
    let (sa, sb, sc) = (snapshot(&a)?, snapshot(&b)?, snapshot(&c)?);
    let runs = sa.keys().filter(|k| k.starts_with("runs/")).count();
    let has_metrics = sa.contains_key("metrics.tsv");
    let differing = |x: &BTreeMap<String, Vec<u8>>, y: &BTreeMap<String, Vec<u8>>| -> Vec<String> {
        x.keys()
            .chain(y.keys())
            .filter(|k| x.get(*k) != y.get(*k))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let rerun = differing(&sa, &sb);
    let threads = differing(&sa, &sc);
    check(
        rerun.is_empty() && threads.is_empty() && runs > 0 && has_metrics,
        format!(
            "{} files ({runs} run files) compared; differing across runs: {rerun:?}; across 1 vs 4 threads: {threads:?}",
            sa.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();
    for t in 0..200 {
        let word = |r: &mut ChaCha8Rng| format!("t{}", r.gen_range(0..50));
        let docs: Vec<Document> = (0..rng.gen_range(1..20))
            .map(|i| Document {
                id: format!("D{t}-{i}"),
                text: (0..rng.gen_range(1..8))
                    .map(|_| word(&mut rng))
                    .collect::<Vec<_>>()
                    .join(" "),
            })
            .collect();
        let collection = Collection::new(docs).unwrap();
        if parse_collection(&format_collection(&collection))
            .ok()
            .map(|c| c.documents().to_vec())
            != Some(collection.documents().to_vec())
        {
            failures.push("collection");
        }
        let queries: Vec<Query> = (0..rng.gen_range(1..10))
            .map(|i| Query {
                id: format!("Q{i}"),
                text: (0..rng.gen_range(1..5))
                    .map(|_| word(&mut rng))
                    .collect::<Vec<_>>()
                    .join(" "),
            })
            .collect();
        if parse_queries(&format_queries(&queries)).ok() != Some(queries.clone()) {
            failures.push("queries");
        }
        let judgments: Vec<Judgment> = queries
            .iter()
            .map(|q| Judgment {
                query_id: q.id.clone(),
                doc_id: collection.get(0).id.clone(),
                grade: rng.gen_range(0..4),
            })
            .collect();
        if parse_qrels(&format_qrels(&judgments)).ok() != Some(judgments.clone()) {
            failures.push("qrels");
        }
        let runs: Vec<RunList<f64>> = queries
            .iter()
            .map(|q| {
                let entries = collection
                    .documents()
                    .iter()
                    .map(|d| (d.id.clone(), normal(&mut rng, 3.0)))
                    .collect();
                RunList::new(q.id.clone(), entries)
            })
            .collect();
        if parse_run(&format_run(&runs, "tag")).ok() != Some(runs.clone()) {
            failures.push("run");
        }
    }

    // Fixture: the CLI's eval output must equal the library's numbers bit for bit.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inst = loop {
        let inst = random_instance(&mut rng);
        if inst.runs.iter().all(|r| !r.is_empty()) {
            break inst;
        }
    };
    let run_path = tmp.path().join("fixture.run");
    let qrels_path = tmp.path().join("fixture.qrels");
    std::fs::write(&run_path, format_run(&inst.runs, "fixture")).unwrap();
    std::fs::write(&qrels_path, format_qrels(&inst.judgments)).unwrap();
    let out = bin()
        .args(["eval", "--k", "1,10,50", "--run"])
        .arg(&run_path)
        .arg("--qrels")
        .arg(&qrels_path)
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    let parsed_runs = parse_run(&format_run(&inst.runs, "fixture")).unwrap();
    let qrels = Qrels::new(&inst.judgments);
    let mut expected = Vec::new();
    for (name, f) in [
        (
            "mrr",
            mrr_at_k::<f64> as fn(&[RunList<f64>], &Qrels, usize) -> f64,
        ),
        ("recall", recall_at_k::<f64>),
        ("ndcg", ndcg_at_k::<f64>),
    ] {
        for k in [1, 10, 50] {
            expected.push((format!("{name}@{k}"), f(&parsed_runs, &qrels, k)));
        }
    }
    let got: Vec<(String, f64)> = text
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.parse().unwrap_or(f64::NAN)))
        .collect();
    let bit_equal = got.len() == expected.len()
        && got
            .iter()
            .zip(&expected)
            .all(|(g, e)| g.0 == e.0 && g.1.to_bits() == e.1.to_bits());
    check(
        failures.is_empty() && out.status.success() && bit_equal,
        format!(
            "200 random round-trips, failures: {failures:?}; eval fixture {} metrics bit-identical: {bit_equal}",
            expected.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradients match finite differences", criterion_1),
        ("metrics match brute force", criterion_2),
        ("bm25 matches exhaustive scoring", criterion_3),
        ("negative sampling", criterion_4),
        ("joint > bm25-only > bm25 reranking", criterion_5),
        ("hard negatives improve retrievers", criterion_6),
        ("distillation", criterion_7),
        ("distribution analysis", criterion_8),
        ("pipeline determinism", criterion_9),
        ("file round-trips and eval", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {status}: {name} — {detail} [{:.1}s]",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
