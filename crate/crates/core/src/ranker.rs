//! Interaction-feature ranker: a one-hidden-layer tanh scorer over joint
//! query–document features.
//!
//! The feature vector is
//! `[P q, P d, (P q) ⊙ (P d), overlap, bm25, |q|, |d|]`, where `P` is a frozen
//! random projection of the hashed bag of words (count-weighted mean pooling).
//! The elementwise-product block lets the scorer depend on the pair jointly,
//! so its scores do not factor into `f(q) · g(d)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::retrievers::{
    bm25_score_prepared, Bm25Params, Bm25Query, DenseModel, EncodedCorpus, InvertedIndex,
    QueryInput,
};
use crate::scalar::Scalar;
use crate::text::SparseVector;

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_PROJ_DIM: usize = 16;
pub const INIT_RANGE: f64 = 0.05;

/// Number of interaction features for a projection of width `proj_dim`.
pub fn feature_dim(proj_dim: usize) -> usize {
    3 * proj_dim + 4
}

/// Frozen random projection used to pool both sides of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    table: DenseModel<T>,
}

impl<T: Scalar> Projection<T> {
    /// Entries uniform in `[-1, 1]`, drawn once from `seed`.
    pub fn random(dim_hash: usize, proj_dim: usize, seed: u64) -> Self {
        Self {
            table: DenseModel::random(dim_hash, proj_dim, 1.0, seed),
        }
    }

    pub fn from_table(dim_hash: usize, proj_dim: usize, table: Vec<T>) -> Result<Self> {
        Ok(Self {
            table: DenseModel::from_table(dim_hash, proj_dim, table)?,
        })
    }

    pub fn proj_dim(&self) -> usize {
        self.table.dim_emb()
    }

    pub fn dim_hash(&self) -> usize {
        self.table.dim_hash()
    }

    pub fn pool(&self, features: &SparseVector<T>) -> Result<Vec<T>> {
        self.table.encode(features)
    }
}

/// Joint features of one (query, document) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionFeatures<T>(pub Vec<T>);

/// One side of a pair as the feature builder sees it.
#[derive(Debug, Clone, Copy)]
pub struct PairSide<'a, T> {
    pub tokens: &'a [String],
    pub features: &'a SparseVector<T>,
}

fn assemble<T: Scalar>(
    pq: &[T],
    pd: &[T],
    overlap: usize,
    bm25: T,
    q_len: usize,
    d_len: usize,
) -> Vec<T> {
    let mut x = Vec::with_capacity(feature_dim(pq.len()));
    x.extend_from_slice(pq);
    x.extend_from_slice(pd);
    x.extend(pq.iter().zip(pd).map(|(&a, &b)| a * b));
    x.push(T::count(overlap));
    x.push(bm25);
    x.push(T::count(q_len));
    x.push(T::count(d_len));
    x
}

/// Builds the features of a single pair directly from its tokens.
///
/// `doc` is the document's ordinal in `index`, used for the BM25 feature.
pub fn interaction_features<T: Scalar>(
    query: PairSide<'_, T>,
    document: PairSide<'_, T>,
    doc: usize,
    projection: &Projection<T>,
    index: &InvertedIndex,
    bm25: &Bm25Params<T>,
) -> Result<InteractionFeatures<T>> {
    let pq = projection.pool(query.features)?;
    let pd = projection.pool(document.features)?;
    let mut q_terms: Vec<&str> = query.tokens.iter().map(String::as_str).collect();
    q_terms.sort_unstable();
    q_terms.dedup();
    let overlap = q_terms
        .iter()
        .filter(|t| document.tokens.iter().any(|d| d == *t))
        .count();
    let score = bm25_score_prepared(index, bm25, &Bm25Query::new(index, query.tokens), doc);
    Ok(InteractionFeatures(assemble(
        &pq,
        &pd,
        overlap,
        score,
        query.tokens.len(),
        document.tokens.len(),
    )))
}

/// Query-side state reused across all documents scored for that query.
#[derive(Debug, Clone)]
pub struct PreparedQuery<T> {
    pooled: Vec<T>,
    bm25: Bm25Query<T>,
    term_ids: Vec<usize>,
    len: usize,
}

/// Feature builder with every document's projection cached.
pub struct PairFeaturizer<'a, T> {
    projection: &'a Projection<T>,
    index: &'a InvertedIndex,
    bm25: Bm25Params<T>,
    doc_pooled: Vec<Vec<T>>,
}

impl<'a, T: Scalar> PairFeaturizer<'a, T> {
    pub fn new(
        projection: &'a Projection<T>,
        index: &'a InvertedIndex,
        bm25: Bm25Params<T>,
        corpus: &EncodedCorpus<T>,
    ) -> Result<Self> {
        if corpus.len() != index.n_docs() {
            return Err(Error::DimensionMismatch {
                expected: index.n_docs(),
                got: corpus.len(),
            });
        }
        let doc_pooled = corpus
            .features
            .iter()
            .map(|f| projection.pool(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            projection,
            index,
            bm25,
            doc_pooled,
        })
    }

    pub fn feat_dim(&self) -> usize {
        feature_dim(self.projection.proj_dim())
    }

    pub fn doc_ids(&self) -> &'a [String] {
        self.index.doc_ids()
    }

    pub fn prepare(&self, query: &QueryInput<T>) -> Result<PreparedQuery<T>> {
        let mut term_ids: Vec<usize> = query
            .tokens
            .iter()
            .filter_map(|t| self.index.term_id(t))
            .collect();
        term_ids.sort_unstable();
        term_ids.dedup();
        Ok(PreparedQuery {
            pooled: self.projection.pool(&query.features)?,
            bm25: Bm25Query::new(self.index, &query.tokens),
            term_ids,
            len: query.tokens.len(),
        })
    }

    pub fn features(&self, query: &PreparedQuery<T>, doc: usize) -> Vec<T> {
        let overlap = query
            .term_ids
            .iter()
            .filter(|&&t| self.index.tf(t, doc) > 0)
            .count();
        let bm25 = bm25_score_prepared(self.index, &self.bm25, &query.bm25, doc);
        assemble(
            &query.pooled,
            &self.doc_pooled[doc],
            overlap,
            bm25,
            query.len,
            self.index.doc_len(doc),
        )
    }
}

/// `score(x) = w2 · tanh(W1ᵀ x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel<T> {
    feat_dim: usize,
    hidden: usize,
    /// Row-major `feat_dim x hidden`.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

/// Gradients with the same layout as [`RankerModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerGrads<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Scalar> RankerGrads<T> {
    pub fn zeros(feat_dim: usize, hidden: usize) -> Self {
        Self {
            w1: vec![T::zero(); feat_dim * hidden],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden],
            b2: T::zero(),
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        vec![&self.w1, &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }
}

impl<T: Scalar> RankerModel<T> {
    pub fn from_parts(
        feat_dim: usize,
        hidden: usize,
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
        b2: T,
    ) -> Result<Self> {
        if feat_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("ranker dims must be >= 1".into()));
        }
        for (got, expected) in [
            (w1.len(), feat_dim * hidden),
            (b1.len(), hidden),
            (w2.len(), hidden),
        ] {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        let model = Self {
            feat_dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
        };
        if model
            .param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidArgument(
                "ranker parameters must be finite".into(),
            ));
        }
        Ok(model)
    }

    /// Parameters uniform in `[-range, range]` from `seed`.
    pub fn random(feat_dim: usize, hidden: usize, range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::of(rng.gen_range(-range..=range)))
                .collect()
        };
        let w1 = draw(feat_dim * hidden);
        let b1 = draw(hidden);
        let w2 = draw(hidden);
        let b2 = draw(1)[0];
        Self::from_parts(feat_dim, hidden, w1, b1, w2, b2).expect("valid random ranker")
    }

    pub fn zeros(feat_dim: usize, hidden: usize) -> Self {
        let g = RankerGrads::zeros(feat_dim, hidden);
        Self::from_parts(feat_dim, hidden, g.w1, g.b1, g.w2, g.b2).expect("valid zero ranker")
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        vec![&self.w1, &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.feat_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feat_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[T]) -> Vec<T> {
        let mut h = self.b1.clone();
        for (f, &xf) in x.iter().enumerate() {
            if xf.is_zero() {
                continue;
            }
            let row = &self.w1[f * self.hidden..(f + 1) * self.hidden];
            for (hj, &w) in h.iter_mut().zip(row) {
                *hj = *hj + w * xf;
            }
        }
        for hj in &mut h {
            *hj = hj.tanh();
        }
        h
    }

    pub fn score(&self, x: &[T]) -> Result<T> {
        self.check(x)?;
        let h = self.hidden_activations(x);
        Ok(h.iter()
            .zip(&self.w2)
            .fold(self.b2, |acc, (&a, &w)| acc + a * w))
    }

    /// Exact gradient of `sum_i upstream[i] * score(batch[i])`.
    pub fn grad(&self, batch: &[&[T]], upstream: &[T]) -> Result<RankerGrads<T>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument(
                "gradient batch must be non-empty".into(),
            ));
        }
        if batch.len() != upstream.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                got: upstream.len(),
            });
        }
        let mut g = RankerGrads::zeros(self.feat_dim, self.hidden);
        for (x, &up) in batch.iter().zip(upstream) {
            self.accumulate(x, up, &mut g)?;
        }
        Ok(g)
    }

    /// Adds `upstream * d score(x) / d params` into `g`.
    pub fn accumulate(&self, x: &[T], upstream: T, g: &mut RankerGrads<T>) -> Result<()> {
        self.check(x)?;
        g.b2 = g.b2 + upstream;
        if upstream.is_zero() {
            return Ok(());
        }
        let h = self.hidden_activations(x);
        // d score / d pre-activation_j = w2_j * (1 - h_j^2)
        let delta: Vec<T> = h
            .iter()
            .zip(&self.w2)
            .map(|(&hj, &w)| upstream * w * (T::one() - hj * hj))
            .collect();
        for (gw, &hj) in g.w2.iter_mut().zip(&h) {
            *gw = *gw + upstream * hj;
        }
        for (gb, &dj) in g.b1.iter_mut().zip(&delta) {
            *gb = *gb + dj;
        }
        for (f, &xf) in x.iter().enumerate() {
            if xf.is_zero() {
                continue;
            }
            let row = &mut g.w1[f * self.hidden..(f + 1) * self.hidden];
            for (gw, &dj) in row.iter_mut().zip(&delta) {
                *gw = *gw + dj * xf;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_collection;

    #[test]
    fn zero_weights_score_is_bias() {
        let mut m = RankerModel::<f64>::zeros(5, 3);
        m.b2 = 0.7;
        assert_eq!(m.score(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.7);
    }

    #[test]
    fn hand_evaluated_single_unit() {
        // x = (1, 2); w1 = (0.5, -0.25); b1 = 0.1; w2 = 2; b2 = -0.3
        let m =
            RankerModel::from_parts(2, 1, vec![0.5, -0.25], vec![0.1], vec![2.0], -0.3).unwrap();
        let expected = 2.0 * (0.5f64 * 1.0 - 0.25 * 2.0 + 0.1).tanh() - 0.3;
        assert!((m.score(&[1.0, 2.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - (2.0 * 0.1f64.tanh() - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = RankerModel::<f64>::zeros(3, 2);
        assert!(m.score(&[1.0, 2.0]).is_err());
        assert!(m.grad(&[], &[]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient_and_b2_sums_upstream() {
        let m = RankerModel::<f64>::random(4, 3, 0.5, 1);
        let x1 = [0.3, -1.0, 2.0, 0.0];
        let x2 = [1.0, 1.0, -0.5, 4.0];
        let g = m.grad(&[&x1, &x2], &[0.0, 0.0]).unwrap();
        assert_eq!(g, RankerGrads::zeros(4, 3));
        let g = m.grad(&[&x1, &x2], &[0.25, -1.5]).unwrap();
        assert_eq!(g.b2, -1.25);
    }

    #[test]
    fn score_is_finite_for_extreme_inputs() {
        let m = RankerModel::<f64>::random(3, 4, 0.05, 2);
        assert!(m.score(&[1e300, -1e300, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn hand_computed_two_dim_features() {
        // dim_hash 2, proj_dim 2, projection rows r0 = (1, 2), r1 = (3, -1).
        let proj = Projection::from_table(2, 2, vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let c = parse_collection("d0\tx y\n").unwrap();
        let index = InvertedIndex::build(&c).unwrap();
        let params = Bm25Params::<f64>::default();
        let q_tokens = vec!["x".to_string()];
        let d_tokens = vec!["x".to_string(), "y".to_string()];
        let qf = SparseVector::new(2, vec![(0, 1.0)]).unwrap();
        let df = SparseVector::new(2, vec![(0, 1.0), (1, 1.0)]).unwrap();
        let f = interaction_features(
            PairSide {
                tokens: &q_tokens,
                features: &qf,
            },
            PairSide {
                tokens: &d_tokens,
                features: &df,
            },
            0,
            &proj,
            &index,
            &params,
        )
        .unwrap();
        // P q = (1, 2); P d = (2, 0.5); product = (2, 1); overlap 1.
        // BM25 with N = 1, df = 1: idf = ln(1 + 0.5 / 1.5); tf = 1, len = avgdl.
        let idf = (1.0f64 + 0.5 / 1.5).ln();
        let bm25 = idf * 1.9 / (1.0 + 0.9);
        let expected = [1.0, 2.0, 2.0, 0.5, 2.0, 1.0, 1.0, bm25, 1.0, 2.0];
        assert_eq!(f.0.len(), feature_dim(2));
        for (a, b) in f.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn self_pair_and_disjoint_pair() {
        let c = parse_collection("d0\ta b b\nd1\tc d\n").unwrap();
        let index = InvertedIndex::build(&c).unwrap();
        let corpus = EncodedCorpus::<f64>::new(&c, 32, 0);
        let proj = Projection::random(32, 3, 5);
        let feat = PairFeaturizer::new(&proj, &index, Bm25Params::default(), &corpus).unwrap();

        let q = QueryInput::new("q", "a b b", 32, 0);
        let x = feat.features(&feat.prepare(&q).unwrap(), 0);
        let pooled = proj.pool(&q.features).unwrap();
        for k in 0..3 {
            assert_eq!(x[6 + k], pooled[k] * pooled[k]);
        }
        assert_eq!(x[9], 2.0);

        let y = feat.features(&feat.prepare(&q).unwrap(), 1);
        assert_eq!(y[9], 0.0);
        assert_eq!(y[10], 0.0);
    }

    #[test]
    fn cached_featurizer_matches_direct_construction() {
        let c = parse_collection("d0\ta b c\nd1\tb b d e\nd2\t\nd3\ta e e e\n").unwrap();
        let index = InvertedIndex::build(&c).unwrap();
        let corpus = EncodedCorpus::<f64>::new(&c, 64, 3);
        let proj = Projection::random(64, 4, 8);
        let params = Bm25Params::default();
        let feat = PairFeaturizer::new(&proj, &index, params, &corpus).unwrap();
        let q = QueryInput::new("q", "a e zz a", 64, 3);
        let prepared = feat.prepare(&q).unwrap();
        for doc in 0..c.len() {
            let direct = interaction_features(
                PairSide {
                    tokens: &q.tokens,
                    features: &q.features,
                },
                PairSide {
                    tokens: &corpus.tokens[doc],
                    features: &corpus.features[doc],
                },
                doc,
                &proj,
                &index,
                &params,
            )
            .unwrap();
            assert_eq!(direct.0, feat.features(&prepared, doc));
        }
    }
}
