//! Text embedding providers.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{self, HttpSettings};
use crate::seed::fnv1a;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("embedding provider failed after {attempts} attempt(s): {message}")]
    Provider {
        attempts: u32,
        retryable: bool,
        message: String,
    },
    #[error("provider returned {got} values, expected dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

impl EmbeddingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbeddingError::Provider { retryable: true, .. })
    }
}

/// Unit-normalized dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalize `values` to unit length. An all-zero vector stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self(values)
    }

    /// Wrap values as-is, without normalization.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn euclidean(&self, other: &EmbeddingVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub trait EmbeddingProvider: Send + Sync + Debug {
    fn dim(&self) -> usize;

    /// Identifies the provider configuration; persisted next to anything built with it.
    fn fingerprint(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "has",
    "have", "he", "her", "his", "how", "in", "is", "it", "its", "of", "on", "or", "she", "that",
    "the", "their", "this", "to", "was", "were", "what", "when", "where", "which", "who", "whom",
    "why", "with",
];

/// Deterministic feature-hashing bag-of-words embedder.
///
/// Lowercased alphanumeric words (minus a short stopword list) are hashed to a
/// bucket and a sign; counts are damped with `1 + ln(tf)` and the vector is
/// unit-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let lower = trimmed.to_lowercase();
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for w in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        {
            *counts.entry(w).or_default() += 1;
        }
        if counts.is_empty() {
            // Nothing but stopwords or symbols: fall back to the raw string.
            counts.insert(&lower, 1);
        }
        let mut values = vec![0.0; self.dim];
        for (word, tf) in counts {
            let h = fnv1a(word.as_bytes(), self.seed);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign * (1.0 + f64::from(tf).ln());
        }
        Ok(EmbeddingVector::normalized(values))
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hash-bow:v1:dim={}:seed={}", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Settings for [`RemoteEmbedder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub url: String,
    pub dim: usize,
    /// Label recorded in the fingerprint, e.g. the served model name.
    #[serde(default)]
    pub model: String,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_batch() -> usize {
    64
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for a JSON embedding endpoint: `{"texts": [...]}` in, `{"embeddings": [[...]]}` out.
#[derive(Debug)]
pub struct RemoteEmbedder {
    cfg: RemoteEmbedderConfig,
    settings: HttpSettings,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteEmbedderConfig) -> Result<Self, EmbeddingError> {
        let settings = HttpSettings {
            url: cfg.url.clone(),
            bearer_token: cfg.token_env.as_deref().and_then(|k| std::env::var(k).ok()),
            timeout: Duration::from_millis(cfg.timeout_ms),
            retries: cfg.retries,
            backoff: Duration::from_millis(100),
        };
        let client = http::build_client(&settings).map_err(|message| EmbeddingError::Provider {
            attempts: 0,
            retryable: false,
            message,
        })?;
        Ok(Self {
            cfg,
            settings,
            client,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote:v1:{}:{}:dim={}", self.cfg.url, self.cfg.model, self.cfg.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyInput);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size.max(1)) {
            let resp: EmbedResponse = http::post_json(&self.client, &self.settings, &EmbedRequest { texts: chunk })
                .map_err(|f| EmbeddingError::Provider {
                    attempts: f.attempts,
                    retryable: f.status.is_none_or(|s| s >= 500 || s == 429),
                    message: f.message,
                })?;
            if resp.embeddings.len() != chunk.len() {
                return Err(EmbeddingError::Provider {
                    attempts: 1,
                    retryable: false,
                    message: format!("asked for {} embeddings, got {}", chunk.len(), resp.embeddings.len()),
                });
            }
            for v in resp.embeddings {
                if v.len() != self.cfg.dim {
                    return Err(EmbeddingError::Dimension {
                        expected: self.cfg.dim,
                        got: v.len(),
                    });
                }
                out.push(EmbeddingVector::normalized(v));
            }
        }
        Ok(out)
    }
}
