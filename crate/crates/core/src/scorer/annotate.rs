//! Bi-label annotation of (question, document) training pairs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::Sample;
use super::{BiLabel, FeatureMode, ScorerError};
use crate::corpus::{contains_answer, Document, QaRecord, Tokenizer};
use crate::embedding::EmbeddingVector;
use crate::index::Retriever;
use crate::llm::{build_retrieve_prompt, is_correct, LlmClient, PromptTemplates, TemplateKind};

/// Labels for one pair, with the prompt and response that produced the
/// LLM_Prefer bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub label: BiLabel,
    pub prompt: String,
    pub response: String,
}

/// Has_Answer from gold-answer containment in the document; LLM_Prefer from
/// whether the LLM answers correctly with the document as its only passage.
pub fn annotate_training_pair(
    q: &QaRecord,
    doc: &Document,
    llm: &dyn LlmClient,
    templates: &PromptTemplates,
    tokenizer: &dyn Tokenizer,
) -> Result<Annotation, ScorerError> {
    let has_answer = contains_answer(&doc.text, &q.gold_answers);
    let req = build_retrieve_prompt(templates, TemplateKind::Comprehensive, &q.question, &[&doc.text], tokenizer)
        .expect("one passage is always present");
    let resp = llm.complete(&req).map_err(|e| ScorerError::Annotation {
        question_id: q.question_id.clone(),
        doc_id: doc.doc_id.clone(),
        message: e.to_string(),
    })?;
    Ok(Annotation {
        label: BiLabel::new(has_answer, is_correct(&resp.text, &q.gold_answers)),
        prompt: req.prompt,
        response: resp.text,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub question: EmbeddingVector,
    pub document: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub question_id: String,
    pub doc_id: String,
    pub features: PairFeatures,
    pub label: BiLabel,
    pub matched: bool,
}

impl LabeledPair {
    pub fn new(question_id: String, doc_id: String, features: PairFeatures, label: BiLabel) -> Self {
        Self {
            question_id,
            doc_id,
            features,
            matched: label.is_matched(),
            label,
        }
    }

    pub fn sample(&self, mode: FeatureMode) -> Sample {
        Sample {
            x: mode.build(self.features.question.as_slice(), self.features.document.as_slice()),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub pairs: Vec<LabeledPair>,
    pub provider_fingerprint: String,
    /// Pairs skipped because annotation failed.
    pub failures: Vec<String>,
}

impl TrainingSet {
    pub fn matched_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.matched).count()
    }

    /// `|matched| / |mismatched|`; infinite when nothing is mismatched.
    pub fn imbalance_ratio(&self) -> f64 {
        let m = self.matched_count();
        m as f64 / (self.pairs.len() - m) as f64
    }

    pub fn samples(&self, mode: FeatureMode) -> Vec<Sample> {
        self.pairs.iter().map(|p| p.sample(mode)).collect()
    }
}

/// Retrieve the top `per_question_k` documents for each question and annotate
/// every pair. Failed annotations are logged and counted, not fatal.
pub fn build_training_set(
    qa: &[QaRecord],
    retriever: &Retriever,
    llm: &dyn LlmClient,
    templates: &PromptTemplates,
    tokenizer: &dyn Tokenizer,
    per_question_k: usize,
) -> Result<TrainingSet, ScorerError> {
    let mut set = TrainingSet {
        provider_fingerprint: retriever.provider().fingerprint(),
        ..Default::default()
    };
    for q in qa {
        let q_vec = retriever.provider().embed(&q.question)?;
        for hit in retriever.retrieve_embedded(&q_vec, per_question_k) {
            match annotate_training_pair(q, &hit.doc, llm, templates, tokenizer) {
                Ok(a) => {
                    let document = retriever
                        .doc_vector(&hit.doc.doc_id)
                        .cloned()
                        .ok_or_else(|| ScorerError::Retrieval(format!("no vector for `{}`", hit.doc.doc_id)))?;
                    set.pairs.push(LabeledPair::new(
                        q.question_id.clone(),
                        hit.doc.doc_id.clone(),
                        PairFeatures {
                            question: q_vec.clone(),
                            document,
                        },
                        a.label,
                    ));
                }
                Err(e) => {
                    log::warn!("{e}");
                    set.failures.push(e.to_string());
                }
            }
        }
    }
    log::info!(
        "annotated {} pairs ({} failed), matched:mismatched = {:.2}",
        set.pairs.len(),
        set.failures.len(),
        set.imbalance_ratio()
    );
    Ok(set)
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[LabeledPair]) -> Result<(), ScorerError> {
    let path = path.as_ref();
    let err = |message: String| ScorerError::ModelFile {
        path: path.to_path_buf(),
        message,
    };
    let mut out = BufWriter::new(File::create(path).map_err(|e| err(e.to_string()))?);
    for p in pairs {
        let line = serde_json::to_string(p).map_err(|e| err(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| err(e.to_string()))?;
    }
    out.flush().map_err(|e| err(e.to_string()))
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>, ScorerError> {
    let path = path.as_ref();
    let err = |message: String| ScorerError::ModelFile {
        path: path.to_path_buf(),
        message,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(|e| err(e.to_string()))?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: LabeledPair = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        if p.matched != p.label.is_matched() {
            return Err(err(format!("line {}: `matched` disagrees with the label", i + 1)));
        }
        pairs.push(p);
    }
    Ok(pairs)
}
