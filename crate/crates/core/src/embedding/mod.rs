//! Unit-norm embeddings for sentences and functions.

mod lexical;
mod provider;
mod store;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::code_ingest::FunctionUnit;
use crate::error::{Error, Result};
use crate::scalar::{dot_f64, norm_f64, Scalar};

pub use lexical::LexicalModel;
pub use provider::{
    EmbedItem, Embedded, EmbeddingProvider, FileProvider, ProviderKind, ProviderConfig, RemoteProvider,
};
pub use store::{read_text_vectors, read_vectors, write_text_vectors, write_vectors};
pub use tokenize::{subtoken_spans, tokenize_mixed};

/// Tolerance on the L2 norm of stored vectors.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm vector keyed by the id of the unit it embeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    pub unit_id: String,
    pub values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Normalizes `values`; `None` for zero or non-finite input.
    pub fn normalized(unit_id: impl Into<String>, values: Vec<T>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = norm_f64(&values);
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        let values = values.into_iter().map(|v| T::of(v.as_f64() / norm)).collect();
        Some(EmbeddingVector {
            unit_id: unit_id.into(),
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm_f64(&self.values)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            unit_id: self.unit_id.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Dot product of unit vectors, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(u: &EmbeddingVector<T>, v: &EmbeddingVector<T>) -> Result<T> {
    if u.dim() != v.dim() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} has {}, {} has {}",
            u.unit_id,
            u.dim(),
            v.unit_id,
            v.dim()
        )));
    }
    Ok(T::of(dot_f64(&u.values, &v.values).clamp(-1.0, 1.0)))
}

/// Text embedded for a function: qualified-name subtokens, doc comment and
/// normalized body.
pub fn function_text(f: &FunctionUnit) -> String {
    let mut t = f.qualified_name.replace('.', " ");
    if let Some(d) = &f.doc_comment {
        t.push('\n');
        t.push_str(d);
    }
    t.push('\n');
    t.push_str(&f.normalized_body);
    t
}
