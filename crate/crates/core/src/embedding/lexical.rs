//! Self-contained tf·idf embedder over identifier subtokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{tokenize_mixed, EmbeddingVector};
use crate::error::{Error, Result};
use crate::records::stable_hash64;
use crate::scalar::Scalar;

/// Fitted vocabulary and inverse document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalModel {
    /// Subtoken to dense term index.
    pub vocabulary: BTreeMap<String, usize>,
    /// `idf[term index]`.
    pub idf: Vec<f64>,
    /// When set, terms are hashed into this many dimensions.
    pub hash_dim: Option<usize>,
    pub documents: usize,
}

impl LexicalModel {
    /// `idf(t) = ln((1 + N) / (1 + df(t))) + 1` over the given documents.
    pub fn fit<S: AsRef<str>>(corpus: &[S], hash_dim: Option<usize>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::validation("cannot fit lexical model on an empty corpus"));
        }
        if hash_dim == Some(0) {
            return Err(Error::validation("hash_dim must be positive"));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let uniq: BTreeSet<String> = tokenize_mixed(doc.as_ref()).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = corpus.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (t, d)) in df.into_iter().enumerate() {
            vocabulary.insert(t, i);
            idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
        }
        Ok(LexicalModel {
            vocabulary,
            idf,
            hash_dim,
            documents: corpus.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hash_dim.unwrap_or(self.vocabulary.len())
    }

    pub fn idf_of(&self, token: &str) -> Option<f64> {
        self.vocabulary.get(token).map(|&i| self.idf[i])
    }

    fn column(&self, token: &str, index: usize) -> usize {
        match self.hash_dim {
            Some(h) => (stable_hash64(token) % h as u64) as usize,
            None => index,
        }
    }

    /// Raw (unnormalized) tf·idf weights by column.
    pub fn weights(&self, text: &str) -> HashMap<usize, f64> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize_mixed(text) {
            *tf.entry(t).or_default() += 1;
        }
        let mut w = HashMap::new();
        for (t, count) in tf {
            if let Some(&i) = self.vocabulary.get(&t) {
                *w.entry(self.column(&t, i)).or_insert(0.0) += count as f64 * self.idf[i];
            }
        }
        w
    }

    /// Unit-norm tf·idf vector, or `None` when no subtoken is in vocabulary.
    pub fn embed<T: Scalar>(&self, unit_id: &str, text: &str) -> Option<EmbeddingVector<T>> {
        let w = self.weights(text);
        if w.is_empty() {
            return None;
        }
        let mut values = vec![0.0f64; self.dim()];
        for (c, x) in w {
            values[c] = x;
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        EmbeddingVector::normalized(unit_id, values.into_iter().map(|x| T::of(x / norm)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_closed_forms() {
        let mut corpus: Vec<String> = (0..100).map(|i| format!("common filler{i}")).collect();
        corpus[0].push_str(" rare");
        let m = LexicalModel::fit(&corpus, None).unwrap();
        assert!((m.idf_of("common").unwrap() - 1.0).abs() < 1e-12);
        let expected = (101.0f64 / 2.0).ln() + 1.0;
        assert!((m.idf_of("rare").unwrap() - expected).abs() < 1e-12);
        assert!((expected - 4.92197).abs() < 1e-5);
        assert!(m.idf.iter().all(|&x| x >= 0.0));
        let mut idx: Vec<usize> = m.vocabulary.values().copied().collect();
        idx.sort();
        assert_eq!(idx, (0..m.dim()).collect::<Vec<_>>());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(LexicalModel::fit::<&str>(&[], None).is_err());
    }

    #[test]
    fn deterministic_fit() {
        let c = ["a b c", "b c d", "readCount"];
        assert_eq!(LexicalModel::fit(&c, None).unwrap(), LexicalModel::fit(&c, None).unwrap());
    }

    #[test]
    fn two_token_document_by_hand() {
        // N = 3 documents; "align" in 1, "score" in 2.
        let c = ["align score", "score reads", "other words"];
        let m = LexicalModel::fit(&c, None).unwrap();
        let v = m.embed::<f64>("d", "align score score").unwrap();
        let ia = (4.0f64 / 2.0).ln() + 1.0;
        let is = (4.0f64 / 3.0).ln() + 1.0;
        let (wa, ws) = (ia, 2.0 * is);
        let n = (wa * wa + ws * ws).sqrt();
        assert!((v.values[m.vocabulary["align"]] - wa / n).abs() < 1e-12);
        assert!((v.values[m.vocabulary["score"]] - ws / n).abs() < 1e-12);
        assert_eq!(v.values.iter().filter(|x| **x != 0.0).count(), 2);
    }

    #[test]
    fn unembeddable_text() {
        let m = LexicalModel::fit(&["alpha beta"], None).unwrap();
        assert!(m.embed::<f32>("x", "gamma delta").is_none());
        assert!(m.embed::<f32>("x", "").is_none());
    }

    #[test]
    fn token_order_invariance_and_duplicates() {
        let m = LexicalModel::fit(&["read count align", "score"], None).unwrap();
        let a = m.embed::<f64>("a", "read count align").unwrap();
        let b = m.embed::<f64>("a", "align read count").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hashed_dimension() {
        let m = LexicalModel::fit(&["read count align", "score"], Some(16)).unwrap();
        let a = m.embed::<f32>("a", "read count").unwrap();
        assert_eq!(a.dim(), 16);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }
}
