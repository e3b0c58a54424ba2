//! Exact cosine-similarity index over document embeddings, plus Recall@K.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contains_answer, Corpus, Document};
use crate::embedding::{dot, EmbeddingError, EmbeddingProvider, EmbeddingVector};

const INDEX_FORMAT: &str = "fitrag-vector-index";
const INDEX_VERSION: u32 = 1;
/// What was embedded for each document.
pub const DOC_INPUT: &str = "title. text";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("failed to access index file {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("index integrity error: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    doc_id: String,
    vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    dim: usize,
    provider_fingerprint: String,
    input: String,
    entries: Vec<IndexEntry>,
}

/// One embedding per document, scanned exhaustively at query time.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    provider_fingerprint: String,
    doc_ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

impl VectorIndex {
    pub fn build(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let inputs: Vec<String> = corpus.iter().map(|d| d.embedding_input()).collect();
        // Chunked so remote providers see reasonable batches; order is preserved.
        let chunks: Vec<Vec<EmbeddingVector>> = inputs
            .par_chunks(32)
            .map(|chunk| {
                let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
                provider.embed_batch(&refs)
            })
            .collect::<Result<_, _>>()?;
        let vectors: Vec<EmbeddingVector> = chunks.into_iter().flatten().collect();
        Ok(Self {
            dim: provider.dim(),
            provider_fingerprint: provider.fingerprint(),
            doc_ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_fingerprint(&self) -> &str {
        &self.provider_fingerprint
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, i: usize) -> &EmbeddingVector {
        &self.vectors[i]
    }

    /// Top-`k` entry positions by inner product, ties broken by ascending doc id.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot(query.as_slice(), v.as_slice())))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        scored.truncate(k);
        scored
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            dim: self.dim,
            provider_fingerprint: self.provider_fingerprint.clone(),
            input: DOC_INPUT.into(),
            entries: self
                .doc_ids
                .iter()
                .zip(&self.vectors)
                .map(|(id, v)| IndexEntry {
                    doc_id: id.clone(),
                    vector: v.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file).map_err(|e| IndexError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, json).map_err(|e| IndexError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let io = |message: String| IndexError::Io {
            path: path.to_path_buf(),
            message,
        };
        let raw = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let file: IndexFile = serde_json::from_str(&raw).map_err(|e| io(e.to_string()))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(IndexError::Integrity(format!(
                "unsupported index format {} v{}",
                file.format, file.version
            )));
        }
        if file.input != DOC_INPUT {
            return Err(IndexError::Integrity(format!("unknown document input `{}`", file.input)));
        }
        let mut doc_ids = Vec::with_capacity(file.entries.len());
        let mut vectors = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            if e.vector.dim() != file.dim {
                return Err(IndexError::Integrity(format!(
                    "vector for `{}` has dimension {}, index declares {}",
                    e.doc_id,
                    e.vector.dim(),
                    file.dim
                )));
            }
            if !e.vector.is_finite() {
                return Err(IndexError::Integrity(format!("vector for `{}` is not finite", e.doc_id)));
            }
            doc_ids.push(e.doc_id);
            vectors.push(e.vector);
        }
        Ok(Self {
            dim: file.dim,
            provider_fingerprint: file.provider_fingerprint,
            doc_ids,
            vectors,
        })
    }
}

/// A retrieved document with its 1-based rank.
#[derive(Debug, Clone)]
pub struct RetrievedDoc {
    pub doc: Arc<Document>,
    pub similarity: f64,
    pub rank: usize,
}

/// Corpus + index + the provider that built it.
#[derive(Debug, Clone)]
pub struct Retriever {
    corpus: Arc<Corpus>,
    index: Arc<VectorIndex>,
    provider: Arc<dyn EmbeddingProvider>,
    // Index position -> corpus document.
    docs: Vec<Arc<Document>>,
    positions: HashMap<String, usize>,
}

impl Retriever {
    pub fn new(
        corpus: Arc<Corpus>,
        index: Arc<VectorIndex>,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, IndexError> {
        if index.provider_fingerprint() != provider.fingerprint() {
            return Err(IndexError::Integrity(format!(
                "index built with `{}` but provider is `{}`",
                index.provider_fingerprint(),
                provider.fingerprint()
            )));
        }
        if index.dim() != provider.dim() {
            return Err(IndexError::Integrity(format!(
                "index dimension {} does not match provider dimension {}",
                index.dim(),
                provider.dim()
            )));
        }
        if index.len() != corpus.len() {
            return Err(IndexError::Integrity(format!(
                "index has {} entries but corpus has {} documents",
                index.len(),
                corpus.len()
            )));
        }
        let docs = index
            .doc_ids()
            .iter()
            .map(|id| {
                corpus
                    .get(id)
                    .cloned()
                    .ok_or_else(|| IndexError::Integrity(format!("index references unknown doc `{id}`")))
            })
            .collect::<Result<_, _>>()?;
        let positions = index.doc_ids().iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self {
            corpus,
            index,
            provider,
            docs,
            positions,
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn index(&self) -> &Arc<VectorIndex> {
        &self.index
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    /// Index vector of a document, if it is indexed.
    pub fn doc_vector(&self, doc_id: &str) -> Option<&EmbeddingVector> {
        self.positions.get(doc_id).map(|&i| self.index.vector(i))
    }

    pub fn retrieve(&self, question: &str, k: usize) -> Result<Vec<RetrievedDoc>, IndexError> {
        let q = self.provider.embed(question)?;
        Ok(self.retrieve_embedded(&q, k))
    }

    pub fn retrieve_embedded(&self, query: &EmbeddingVector, k: usize) -> Vec<RetrievedDoc> {
        self.index
            .search(query, k)
            .into_iter()
            .enumerate()
            .map(|(r, (i, sim))| RetrievedDoc {
                doc: Arc::clone(&self.docs[i]),
                similarity: sim,
                rank: r + 1,
            })
            .collect()
    }
}

/// 1.0 if any of the first `k` documents contains a gold answer, else 0.0.
/// `k` larger than the list considers the whole list.
pub fn recall_at_k<'a, S: AsRef<str>>(
    ranked: impl IntoIterator<Item = &'a Document>,
    gold_answers: &[S],
    k: usize,
) -> f64 {
    if ranked
        .into_iter()
        .take(k)
        .any(|d| contains_answer(&d.text, gold_answers))
    {
        1.0
    } else {
        0.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub(crate) fn cmp_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;

    fn corpus() -> Corpus {
        Corpus::from_documents([
            Document::new("d1", "Paris", "Paris is the capital of France.").unwrap(),
            Document::new("d2", "Lyon", "Lyon is a city on the Rhone.").unwrap(),
            Document::new("d3", "Berlin", "Berlin is the capital of Germany.").unwrap(),
        ])
        .unwrap()
    }

    fn retriever() -> Retriever {
        let c = Arc::new(corpus());
        let p: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::default());
        let idx = Arc::new(VectorIndex::build(&c, p.as_ref()).unwrap());
        Retriever::new(c, idx, p).unwrap()
    }

    #[test]
    fn builds_one_vector_per_doc() {
        let r = retriever();
        assert_eq!(r.index().len(), 3);
        assert!(matches!(
            VectorIndex::build(&Corpus::default(), &HashEmbedder::default()),
            Err(IndexError::EmptyCorpus)
        ));
    }

    #[test]
    fn self_query_ranks_first_and_ranks_are_dense() {
        let r = retriever();
        let d2 = r.corpus().get("d2").unwrap().embedding_input();
        let hits = r.retrieve(&d2, 100).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].doc.doc_id, "d2");
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
        for (i, h) in hits.iter().enumerate() {
            assert_eq!(h.rank, i + 1);
        }
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn ties_break_by_doc_id() {
        let c = Corpus::from_documents([
            Document::new("b", "", "same words here").unwrap(),
            Document::new("a", "", "same words here").unwrap(),
        ])
        .unwrap();
        let e = HashEmbedder::default();
        let idx = VectorIndex::build(&c, &e).unwrap();
        let q = e.embed("same words").unwrap();
        let hits = idx.search(&q, 2);
        assert_eq!(idx.doc_ids()[hits[0].0], "a");
    }

    #[test]
    fn save_load_round_trip() {
        let r = retriever();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        r.index().save(&path).unwrap();
        let loaded = VectorIndex::load(&path).unwrap();
        assert_eq!(&loaded, r.index().as_ref());
    }

    #[test]
    fn dimension_mismatch_on_load_is_integrity_error() {
        let r = retriever();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        r.index().save(&path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        v["dim"] = serde_json::json!(7);
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(VectorIndex::load(&path), Err(IndexError::Integrity(_))));
    }

    #[test]
    fn provider_mismatch_rejected() {
        let c = Arc::new(corpus());
        let idx = Arc::new(VectorIndex::build(&c, &HashEmbedder::new(64, 0)).unwrap());
        let p: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(64, 1));
        assert!(Retriever::new(c, idx, p).is_err());
    }

    #[test]
    fn recall_cases() {
        let docs: Vec<Document> = (1..=10)
            .map(|i| {
                let text = if i == 7 { "The answer is Paris.".to_string() } else { format!("Filler {i}.") };
                Document::new(format!("d{i}"), "", text).unwrap()
            })
            .collect();
        let gold = ["Paris"];
        assert_eq!(recall_at_k(&docs, &gold, 5), 0.0);
        assert_eq!(recall_at_k(&docs, &gold, 10), 1.0);
        assert_eq!(recall_at_k(&docs[6..], &gold, 1), 1.0);
        assert_eq!(recall_at_k(&docs, &["Rome"], 10), 0.0);
        assert_eq!(mean(&[1.0, 0.0, 1.0, 0.0]), 0.5);
    }
}
