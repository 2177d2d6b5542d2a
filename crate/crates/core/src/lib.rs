//! Contrastive rankers trained on hard negatives drawn jointly from several
//! heterogeneous retrievers, with ranker-to-retriever distillation and
//! negative-distribution diagnostics.
//!
//! Models and losses are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the pipeline uses.

pub mod analysis;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lab;
pub mod ranker;
pub mod retrievers;
pub mod sampling;
pub mod scalar;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SparseVec = text::SparseVector<f64>;
pub type Dense = retrievers::DenseModel<f64>;
pub type Lexicon = retrievers::LexModel<f64>;
pub type Retriever = retrievers::RetrieverModel<f64>;
pub type Ranker = ranker::RankerModel<f64>;
pub type Candidates = retrievers::CandidateList<f64>;
pub type Run = eval::RunList<f64>;
pub type Distribution = analysis::SupportDistribution<f64>;
