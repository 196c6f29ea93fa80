//! Embedding providers: the built-in lexical model, precomputed vector files
//! and a remote embedding service.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{read_text_vectors, read_vectors, EmbeddingVector, LexicalModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct EmbedItem {
    pub unit_id: String,
    pub text: String,
}

impl EmbedItem {
    pub fn new(unit_id: impl Into<String>, text: impl Into<String>) -> Self {
        EmbedItem {
            unit_id: unit_id.into(),
            text: text.into(),
        }
    }
}

/// Vectors for embeddable items (input order) and the ids that were not.
#[derive(Debug, Clone, Default)]
pub struct Embedded<T> {
    pub vectors: Vec<EmbeddingVector<T>>,
    pub unembeddable: Vec<String>,
}

pub trait EmbeddingProvider<T: Scalar> {
    fn embed(&self, items: &[EmbedItem]) -> Result<Embedded<T>>;
}

impl<T: Scalar> EmbeddingProvider<T> for LexicalModel {
    fn embed(&self, items: &[EmbedItem]) -> Result<Embedded<T>> {
        use rayon::prelude::*;
        let results: Vec<Option<EmbeddingVector<T>>> = items
            .par_iter()
            .map(|it| LexicalModel::embed(self, &it.unit_id, &it.text))
            .collect();
        let mut out = Embedded {
            vectors: Vec::new(),
            unembeddable: Vec::new(),
        };
        for (it, r) in items.iter().zip(results) {
            match r {
                Some(v) => out.vectors.push(v),
                None => out.unembeddable.push(it.unit_id.clone()),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Lexical,
    File,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Lexical: hash subtokens into this many dimensions (0 = exact vocabulary).
    pub hash_dim: usize,
    /// File: vector files (binary `.vec` or text `.txt`) holding every unit.
    pub vector_files: Vec<PathBuf>,
    /// Remote: base URL of the embedding service.
    pub url: String,
    pub timeout_ms: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Lexical,
            hash_dim: 0,
            vector_files: Vec::new(),
            url: String::new(),
            timeout_ms: 30_000,
            batch_size: 32,
            max_in_flight: 4,
            retries: 3,
            backoff_ms: 200,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProviderKind::File if self.vector_files.is_empty() => {
                Err(Error::validation("file provider needs vector_files"))
            }
            ProviderKind::Remote if self.url.is_empty() => {
                Err(Error::validation("remote provider needs url"))
            }
            ProviderKind::Remote if self.batch_size == 0 || self.max_in_flight == 0 => Err(
                Error::validation("remote provider batch_size and max_in_flight must be positive"),
            ),
            _ => Ok(()),
        }
    }
}

/// Serves precomputed vectors, re-normalized on load.
#[derive(Debug, Clone)]
pub struct FileProvider {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl FileProvider {
    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for p in paths {
            let vs = load_any::<f64>(p)?;
            for v in vs {
                match dim {
                    None => dim = Some(v.dim()),
                    Some(d) if d != v.dim() => {
                        return Err(Error::validation(format!(
                            "{}: vector {} has dim {}, expected {d}",
                            p.display(),
                            v.unit_id,
                            v.dim()
                        )))
                    }
                    _ => {}
                }
                vectors.insert(v.unit_id, v.values);
            }
        }
        Ok(FileProvider {
            vectors,
            dim: dim.unwrap_or(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn load_any<T: Scalar>(p: &Path) -> Result<Vec<EmbeddingVector<T>>> {
    if p.extension().is_some_and(|e| e == "txt") {
        read_text_vectors(p)
    } else {
        Ok(read_vectors(p)?.1)
    }
}

impl<T: Scalar> EmbeddingProvider<T> for FileProvider {
    fn embed(&self, items: &[EmbedItem]) -> Result<Embedded<T>> {
        let missing: Vec<&str> = items
            .iter()
            .filter(|it| !self.vectors.contains_key(&it.unit_id))
            .map(|it| it.unit_id.as_str())
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(20).copied().collect();
            return Err(Error::validation(format!(
                "vector files lack {} unit(s): {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        let mut out = Embedded {
            vectors: Vec::new(),
            unembeddable: Vec::new(),
        };
        for it in items {
            let raw = self.vectors[&it.unit_id].iter().map(|&x| T::of(x)).collect();
            match EmbeddingVector::normalized(it.unit_id.clone(), raw) {
                Some(v) => out.vectors.push(v),
                None => out.unembeddable.push(it.unit_id.clone()),
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for a service answering `POST {url}/embed` with
/// `{"texts": [..]}` → `{"vectors": [[..]]}`.
pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    batch_size: usize,
    max_in_flight: usize,
    retries: u32,
    backoff: Duration,
}

impl RemoteProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Remote(e.to_string()))?;
        Ok(RemoteProvider {
            client,
            endpoint: format!("{}/embed", cfg.url.trim_end_matches('/')),
            batch_size: cfg.batch_size,
            max_in_flight: cfg.max_in_flight,
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut attempt = 0;
        loop {
            let result = self
                .client
                .post(&self.endpoint)
                .json(&EmbedRequest {
                    texts: texts.to_vec(),
                })
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<EmbedResponse>());
            match result {
                Ok(r) if r.vectors.len() == texts.len() => return Ok(r.vectors),
                Ok(r) => {
                    return Err(Error::Remote(format!(
                        "asked for {} vectors, got {}",
                        texts.len(),
                        r.vectors.len()
                    )))
                }
                Err(e) if attempt < self.retries => {
                    log::warn!("embedding request failed ({e}); retrying");
                    thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(Error::Remote(format!("{}: {e}", self.endpoint))),
            }
        }
    }
}

impl<T: Scalar> EmbeddingProvider<T> for RemoteProvider {
    fn embed(&self, items: &[EmbedItem]) -> Result<Embedded<T>> {
        let batches: Vec<&[EmbedItem]> = items.chunks(self.batch_size).collect();
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(items.len());
        for wave in batches.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<Vec<f64>>>> = thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|b| {
                        s.spawn(move || {
                            let texts: Vec<&str> = b.iter().map(|i| i.text.as_str()).collect();
                            self.request(&texts)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("request thread panicked"))
                    .collect()
            });
            for r in results {
                raw.extend(r?);
            }
        }
        let mut dim = None;
        let mut out = Embedded {
            vectors: Vec::new(),
            unembeddable: Vec::new(),
        };
        for (it, values) in items.iter().zip(raw) {
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Remote(format!(
                        "vector for {} has dim {}, expected {d}",
                        it.unit_id,
                        values.len()
                    )))
                }
                _ => {}
            }
            let values = values.into_iter().map(T::of).collect();
            match EmbeddingVector::normalized(it.unit_id.clone(), values) {
                Some(v) => out.vectors.push(v),
                None => out.unembeddable.push(it.unit_id.clone()),
            }
        }
        Ok(out)
    }
}
