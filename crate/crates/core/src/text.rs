//! Tokenization and hashed bag-of-words features.
//!
//! Buckets come from 64-bit FNV-1a with the published offset basis
//! `0xcbf29ce484222325` and prime `0x100000001b3`. The seed's eight
//! little-endian bytes are hashed first, followed by the token's UTF-8 bytes;
//! the bucket is the hash modulo `dim`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_HASH_DIM: usize = 1 << 15;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte stream, continuing from `state`.
pub fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seeded FNV-1a hash of a token.
pub fn hash_token(token: &str, seed: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    fnv1a(h, token.as_bytes())
}

/// Derives an independent 64-bit seed from a root seed and a list of labels.
///
/// Labels are separated by a `0xff` byte, which never occurs in UTF-8.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &root.to_le_bytes());
    for label in labels {
        h = fnv1a(h, &[0xff]);
        h = fnv1a(h, label.as_bytes());
    }
    h
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase().filter(|c| c.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector<T> {
    dim: usize,
    entries: Vec<(usize, T)>,
}

impl<T: Scalar> SparseVector<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Validates ordering and bounds; explicit zeros are dropped.
    pub fn new(dim: usize, entries: Vec<(usize, T)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "sparse vector dim must be >= 1".into(),
            ));
        }
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::InvalidArgument(
                    "sparse vector indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last >= dim {
                return Err(Error::InvalidArgument(format!(
                    "sparse index {last} out of range for dim {dim}"
                )));
            }
        }
        let entries = entries.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> T {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    pub fn get(&self, index: usize) -> T {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or_else(|_| T::zero())
    }

    /// Sparse dot product via a merge over both index lists.
    pub fn dot(&self, other: &Self) -> T {
        let (mut i, mut j) = (0, 0);
        let mut acc = T::zero();
        while i < self.entries.len() && j < other.entries.len() {
            let (a, va) = self.entries[i];
            let (b, vb) = other.entries[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc = acc + va * vb;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Hashes tokens into `dim` buckets; each value is the bucket's term count.
pub fn hash_features<T: Scalar, S: AsRef<str>>(
    tokens: &[S],
    dim: usize,
    seed: u64,
) -> SparseVector<T> {
    assert!(dim >= 1, "hash dim must be >= 1");
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for token in tokens {
        let bucket = (hash_token(token.as_ref(), seed) % dim as u64) as usize;
        *counts.entry(bucket).or_default() += 1;
    }
    SparseVector {
        dim,
        entries: counts.into_iter().map(|(i, c)| (i, T::count(c))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", "world"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("BM25-reranking @ 2019"),
            vec!["bm25", "reranking", "2019"]
        );
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors (unseeded).
        assert_eq!(fnv1a(FNV_OFFSET, b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(FNV_OFFSET, b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(FNV_OFFSET, b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hash_features_counts_buckets() {
        let empty: SparseVector<f64> = hash_features::<f64, &str>(&[], 16, 0);
        assert!(empty.is_empty());

        let dim = 1 << 20;
        let ba = (hash_token("a", 7) % dim as u64) as usize;
        let bb = (hash_token("b", 7) % dim as u64) as usize;
        assert_ne!(ba, bb);
        let v: SparseVector<f64> = hash_features(&["a", "a", "b"], dim, 7);
        assert_eq!(v.nnz(), 2);
        assert_eq!(v.get(ba), 2.0);
        assert_eq!(v.get(bb), 1.0);
    }

    #[test]
    fn sparse_vector_rejects_unsorted() {
        assert!(SparseVector::new(4, vec![(2, 1.0), (1, 1.0)]).is_err());
        assert!(SparseVector::new(4, vec![(4, 1.0)]).is_err());
        let v = SparseVector::new(4, vec![(0, 0.0), (3, 2.0)]).unwrap();
        assert_eq!(v.entries(), &[(3, 2.0)]);
    }

    proptest! {
        #[test]
        fn hashing_is_a_bag_of_words(
            mut tokens in proptest::collection::vec("[a-z]{1,6}", 0..30),
            dim in 1usize..5000,
            seed in any::<u64>(),
        ) {
            let forward: SparseVector<f64> = hash_features(&tokens, dim, seed);
            prop_assert_eq!(forward.sum(), tokens.len() as f64);
            tokens.reverse();
            let backward: SparseVector<f64> = hash_features(&tokens, dim, seed);
            prop_assert_eq!(forward, backward);
        }

        #[test]
        fn tokens_are_lowercase_alphanumeric(text in "\\PC{0,40}") {
            for tok in tokenize(&text) {
                prop_assert!(!tok.is_empty());
                prop_assert!(tok.chars().all(|c| c.is_alphanumeric()));
                prop_assert_eq!(tok.to_lowercase(), tok.clone());
            }
        }
    }
}
