//! Token reduction: rerank the retrieved set, pick one representative
//! sub-document per kept document, pre-rank them, and greedily grow the
//! smallest prefix the eligibility detector accepts.

mod dataset;
mod detector;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{generate_subdocuments, CorpusError, Document, SubDocument, Tokenizer, WindowConfig};
use crate::embedding::EmbeddingVector;
use crate::index::{cmp_desc, RetrievedDoc};
use crate::scorer::{BiLabelScore, Scorer, ScorerError};

pub use dataset::{
    build_detector_dataset, filter_overlap, jaccard, load_examples, save_examples, skyline, DetectorDataConfig,
    DetectorDataset, DetectorExample, ScoreAggregate,
};
pub use detector::{
    detector_loss_and_grad, train_detector, DetectorModel, DetectorTrainConfig, EligibilityDetector, TrainedDetector,
};

#[derive(Debug, Error)]
pub enum ReducerError {
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("detector training refused: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("file {path}: {message}")]
    File { path: std::path::PathBuf, message: String },
}

/// Which score orders the reranked list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankCriterion {
    #[default]
    BilabelSum,
    HasAnswer,
    LlmPrefer,
}

impl RerankCriterion {
    pub fn key(self, s: &BiLabelScore) -> f64 {
        match self {
            RerankCriterion::BilabelSum => s.combined(),
            RerankCriterion::HasAnswer => s.p_ans,
            RerankCriterion::LlmPrefer => s.p_pref,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RerankedDoc {
    pub doc: Arc<Document>,
    pub retrieval_rank: usize,
    pub score: BiLabelScore,
    /// `p_ans + p_pref`.
    pub combined: f64,
    /// 1-based position after reranking.
    pub rerank_position: usize,
}

/// Sort by `criterion` descending, ties by retrieval rank, and keep `k`.
pub fn rerank_by(scored: &[(RetrievedDoc, BiLabelScore)], k: usize, criterion: RerankCriterion) -> Vec<RerankedDoc> {
    let mut order: Vec<&(RetrievedDoc, BiLabelScore)> = scored.iter().collect();
    order.sort_by(|a, b| cmp_desc(criterion.key(&a.1), criterion.key(&b.1)).then(a.0.rank.cmp(&b.0.rank)));
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (r, s))| RerankedDoc {
            doc: Arc::clone(&r.doc),
            retrieval_rank: r.rank,
            score: *s,
            combined: s.combined(),
            rerank_position: i + 1,
        })
        .collect()
}

/// Rerank by the uniform sum of the two probabilities.
pub fn rerank_topk(scored: &[(RetrievedDoc, BiLabelScore)], k: usize) -> Vec<RerankedDoc> {
    rerank_by(scored, k, RerankCriterion::BilabelSum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubDoc {
    pub subdoc: SubDocument,
    pub score: BiLabelScore,
    pub combined: f64,
    /// Rerank position of the parent document.
    pub parent_position: usize,
}

/// Every window of `doc`, scored against the question.
pub fn score_subdocs(
    doc: &Document,
    parent_position: usize,
    question: &EmbeddingVector,
    scorer: &Scorer,
    window: WindowConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<ScoredSubDoc>, ReducerError> {
    let subs = generate_subdocuments(doc, window, tokenizer)?;
    let texts: Vec<&str> = subs.iter().map(|s| s.text.as_str()).collect();
    let vectors = scorer.provider().embed_batch(&texts).map_err(ScorerError::from)?;
    Ok(subs
        .into_iter()
        .zip(&vectors)
        .map(|(subdoc, v)| {
            let score = scorer.score_vectors(question, v);
            ScoredSubDoc {
                subdoc,
                combined: score.combined(),
                score,
                parent_position,
            }
        })
        .collect())
}

/// For each document, its highest-scoring window (ties to the earliest start).
pub fn representative_subdocs(
    docs: &[RerankedDoc],
    question: &EmbeddingVector,
    scorer: &Scorer,
    window: WindowConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<ScoredSubDoc>, ReducerError> {
    docs.iter()
        .map(|d| {
            let subs = score_subdocs(&d.doc, d.rerank_position, question, scorer, window, tokenizer)?;
            let best = subs
                .into_iter()
                .reduce(|best, s| if s.combined > best.combined { s } else { best })
                .expect("every document has at least one window");
            Ok(best)
        })
        .collect()
}

/// Descending by combined score, ties by parent rerank position.
pub fn prerank(mut subdocs: Vec<ScoredSubDoc>) -> Vec<ScoredSubDoc> {
    subdocs.sort_by(|a, b| cmp_desc(a.combined, b.combined).then(a.parent_position.cmp(&b.parent_position)));
    subdocs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDocCombination {
    pub members: Vec<ScoredSubDoc>,
    pub feature_vector: Vec<f64>,
    pub token_count: usize,
}

impl SubDocCombination {
    pub fn new(members: Vec<ScoredSubDoc>, max_docs: usize) -> Self {
        let feature_vector = featurize(members.iter().map(|m| &m.score), max_docs);
        let token_count = members.iter().map(|m| m.subdoc.token_count).sum();
        Self {
            members,
            feature_vector,
            token_count,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn passages(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.subdoc.text.as_str()).collect()
    }
}

/// `(p_ans, p_pref)` per member in order, zero-padded to `2 * max_docs`.
pub fn featurize<'a>(scores: impl IntoIterator<Item = &'a BiLabelScore>, max_docs: usize) -> Vec<f64> {
    let mut v: Vec<f64> = scores.into_iter().flat_map(|s| [s.p_ans, s.p_pref]).collect();
    assert!(v.len() <= 2 * max_docs, "more members than max_docs");
    v.resize(2 * max_docs, 0.0);
    v
}

/// Grow a prefix of `sorted` one sub-document at a time and stop at the first
/// prefix the detector accepts. If none is accepted, return the first
/// `max_docs` sub-documents.
pub fn greedy_filter(
    sorted: &[ScoredSubDoc],
    detector: &dyn EligibilityDetector,
    max_docs: usize,
) -> SubDocCombination {
    let candidates = &sorted[..sorted.len().min(max_docs)];
    let mut features = vec![0.0; 2 * max_docs];
    for (i, s) in candidates.iter().enumerate() {
        features[2 * i] = s.score.p_ans;
        features[2 * i + 1] = s.score.p_pref;
        if detector.accepts(&features) {
            return SubDocCombination::new(candidates[..=i].to_vec(), max_docs);
        }
    }
    SubDocCombination::new(candidates.to_vec(), max_docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReducerConfig {
    pub top_rerank: usize,
    pub max_docs: usize,
    pub window: WindowConfig,
}

impl Default for ReducerConfig {
    fn default() -> Self {
        Self {
            top_rerank: 10,
            max_docs: 10,
            window: WindowConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub reranked: Vec<RerankedDoc>,
    pub combination: SubDocCombination,
    /// Tokens of the reranked documents' full texts, for comparison.
    pub full_token_count: usize,
}

/// Rerank, pick representatives, pre-rank and greedily filter.
pub fn reduce(
    question: &EmbeddingVector,
    scored: &[(RetrievedDoc, BiLabelScore)],
    scorer: &Scorer,
    detector: &dyn EligibilityDetector,
    cfg: &ReducerConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Reduction, ReducerError> {
    if scored.is_empty() {
        return Err(ReducerError::Config("nothing to reduce: the retrieved set is empty".into()));
    }
    let reranked = rerank_topk(scored, cfg.top_rerank);
    let reps = representative_subdocs(&reranked, question, scorer, cfg.window, tokenizer)?;
    let combination = greedy_filter(&prerank(reps), detector, cfg.max_docs);
    let full_token_count = reranked.iter().map(|d| tokenizer.count(&d.doc.text)).sum();
    Ok(Reduction {
        reranked,
        combination,
        full_token_count,
    })
}
