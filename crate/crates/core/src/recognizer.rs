//! Self-knowledge recognition: decide whether a question needs retrieved context.
//!
//! Two facet scores feed the decision. `S_ltod` is the fraction of retrieved
//! documents whose Has_Answer logit exceeds `delta_ltod`; `S_nn` is the
//! fraction of the question's nearest labeled training questions that the LLM
//! answered correctly without retrieval. Retrieval is skipped only when both
//! exceed their thresholds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QaRecord, Tokenizer};
use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::llm::{build_noretrieve_prompt, is_correct, LlmClient, PromptTemplates};
use crate::scorer::BiLabelScore;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("S_ltod is undefined for an empty retrieved set")]
    EmptyScores,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("reference file {path}: {message}")]
    File { path: PathBuf, message: String },
}

/// What `delta_ltod` is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// The raw Has_Answer logit.
    #[default]
    Logit,
    /// The Has_Answer probability; `delta_ltod` must then lie in [0, 1].
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognizerConfig {
    pub delta_ltod: f64,
    pub s_l: f64,
    pub s_n: f64,
    pub k_neighbors: usize,
    pub threshold_mode: ThresholdMode,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            delta_ltod: 4.5,
            s_l: 0.04,
            s_n: 0.67,
            k_neighbors: 10,
            threshold_mode: ThresholdMode::Logit,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<(), RecognizerError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.s_l) || !unit.contains(&self.s_n) {
            return Err(RecognizerError::Config("s_l and s_n must lie in [0, 1]".into()));
        }
        if self.k_neighbors == 0 {
            return Err(RecognizerError::Config("k_neighbors must be at least 1".into()));
        }
        if !self.delta_ltod.is_finite() {
            return Err(RecognizerError::Config("delta_ltod must be finite".into()));
        }
        if self.threshold_mode == ThresholdMode::Probability && !unit.contains(&self.delta_ltod) {
            return Err(RecognizerError::Config(
                "delta_ltod must lie in [0, 1] in probability mode".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelfKnowledge {
    #[serde(rename = "correct_w/o_retrieve")]
    Correct,
    #[serde(rename = "incorrect_w/o_retrieve")]
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnEntry {
    pub question_id: String,
    pub label: SelfKnowledge,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NnReferenceSet {
    /// Provider the question embeddings came from, when known.
    pub provider_fingerprint: Option<String>,
    pub entries: Vec<NnEntry>,
}

#[derive(Serialize, Deserialize)]
struct ReferenceHeader {
    format: String,
    version: u32,
    provider_fingerprint: String,
}

const REFERENCE_FORMAT: &str = "fitrag-nn-reference";

impl NnReferenceSet {
    pub fn new(provider_fingerprint: Option<String>, entries: Vec<NnEntry>) -> Result<Self, RecognizerError> {
        if let Some(first) = entries.first() {
            let dim = first.embedding.dim();
            if entries.iter().any(|e| e.embedding.dim() != dim) {
                return Err(RecognizerError::Config("reference embeddings differ in dimension".into()));
            }
        }
        Ok(Self {
            provider_fingerprint,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn correct_count(&self) -> usize {
        self.entries.iter().filter(|e| e.label == SelfKnowledge::Correct).count()
    }

    /// JSONL: an optional header line naming the provider, then one entry per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecognizerError> {
        let path = path.as_ref();
        let err = file_err(path);
        let mut out = BufWriter::new(File::create(path).map_err(|e| err(e.to_string()))?);
        let mut write_line = |line: String| writeln!(out, "{line}").map_err(|e| err(e.to_string()));
        if let Some(fp) = &self.provider_fingerprint {
            let header = ReferenceHeader {
                format: REFERENCE_FORMAT.into(),
                version: 1,
                provider_fingerprint: fp.clone(),
            };
            write_line(serde_json::to_string(&header).map_err(|e| err(e.to_string()))?)?;
        }
        for e in &self.entries {
            write_line(serde_json::to_string(e).map_err(|e| err(e.to_string()))?)?;
        }
        out.flush().map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecognizerError> {
        let path = path.as_ref();
        let err = file_err(path);
        let reader = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
        let mut fingerprint = None;
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if i == 0 {
                if let Ok(h) = serde_json::from_str::<ReferenceHeader>(&line) {
                    if h.format != REFERENCE_FORMAT || h.version != 1 {
                        return Err(err(format!("unsupported format {} v{}", h.format, h.version)));
                    }
                    fingerprint = Some(h.provider_fingerprint);
                    continue;
                }
            }
            let entry: NnEntry = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            if !entry.embedding.is_finite() {
                return Err(err(format!("line {}: non-finite embedding", i + 1)));
            }
            entries.push(entry);
        }
        Self::new(fingerprint, entries)
    }
}

fn file_err(path: &Path) -> impl Fn(String) -> RecognizerError + '_ {
    move |message| RecognizerError::File {
        path: path.to_path_buf(),
        message,
    }
}

/// A reference set plus the questions skipped because the LLM call failed.
#[derive(Debug, Clone)]
pub struct NnBuild {
    pub reference: NnReferenceSet,
    pub failures: Vec<String>,
}

/// Ask every training question without retrieval and label it by whether the
/// answer is correct.
pub fn build_nn_reference(
    qa: &[QaRecord],
    llm: &dyn LlmClient,
    provider: &dyn EmbeddingProvider,
    templates: &PromptTemplates,
    tokenizer: &dyn Tokenizer,
) -> Result<NnBuild, RecognizerError> {
    let mut entries = Vec::with_capacity(qa.len());
    let mut failures = Vec::new();
    for q in qa {
        let req = build_noretrieve_prompt(templates, &q.question, tokenizer);
        let resp = match llm.complete(&req) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping `{}` in the reference set: {e}", q.question_id);
                failures.push(format!("{}: {e}", q.question_id));
                continue;
            }
        };
        let label = if is_correct(&resp.text, &q.gold_answers) {
            SelfKnowledge::Correct
        } else {
            SelfKnowledge::Incorrect
        };
        entries.push(NnEntry {
            question_id: q.question_id.clone(),
            label,
            embedding: provider.embed(&q.question)?,
        });
    }
    Ok(NnBuild {
        reference: NnReferenceSet::new(Some(provider.fingerprint()), entries)?,
        failures,
    })
}

/// Fraction of retrieved documents whose Has_Answer score exceeds `delta_ltod`.
pub fn s_ltod<'a>(
    scores: impl IntoIterator<Item = &'a BiLabelScore>,
    delta_ltod: f64,
    mode: ThresholdMode,
) -> Result<f64, RecognizerError> {
    let (mut above, mut total) = (0usize, 0usize);
    for s in scores {
        let v = match mode {
            ThresholdMode::Logit => s.logit_ans,
            ThresholdMode::Probability => s.p_ans,
        };
        above += usize::from(v > delta_ltod);
        total += 1;
    }
    if total == 0 {
        return Err(RecognizerError::EmptyScores);
    }
    Ok(above as f64 / total as f64)
}

/// Fraction of the `k` nearest reference questions (Euclidean distance, ties
/// by ascending question id) labeled correct without retrieval.
pub fn s_nn(query: &EmbeddingVector, reference: &NnReferenceSet, k: usize) -> Result<f64, RecognizerError> {
    if k == 0 {
        return Err(RecognizerError::Config("k must be at least 1".into()));
    }
    if reference.len() < k {
        return Err(RecognizerError::Config(format!(
            "reference set has {} entries, fewer than k = {k}",
            reference.len()
        )));
    }
    if reference.entries[0].embedding.dim() != query.dim() {
        return Err(RecognizerError::Config(format!(
            "query dimension {} does not match reference dimension {}",
            query.dim(),
            reference.entries[0].embedding.dim()
        )));
    }
    let mut dist: Vec<(f64, &NnEntry)> = reference
        .entries
        .iter()
        .map(|e| (query.euclidean(&e.embedding), e))
        .collect();
    let by_distance = |a: &(f64, &NnEntry), b: &(f64, &NnEntry)| {
        a.0.total_cmp(&b.0).then_with(|| a.1.question_id.cmp(&b.1.question_id))
    };
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance);
        dist.truncate(k);
    }
    let correct = dist.iter().filter(|(_, e)| e.label == SelfKnowledge::Correct).count();
    Ok(correct as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Retrieve,
    NoRetrieve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognizerVerdict {
    pub s_ltod: f64,
    pub s_nn: f64,
    pub decision: Decision,
}

/// No_Retrieve iff `s_ltod > s_l` and `s_nn > s_n`.
pub fn decide(s_ltod: f64, s_nn: f64, cfg: &RecognizerConfig) -> RecognizerVerdict {
    let decision = if s_ltod > cfg.s_l && s_nn > cfg.s_n {
        Decision::NoRetrieve
    } else {
        Decision::Retrieve
    };
    RecognizerVerdict { s_ltod, s_nn, decision }
}

/// Configuration and reference set bound together.
#[derive(Debug, Clone)]
pub struct Recognizer {
    pub config: RecognizerConfig,
    pub reference: NnReferenceSet,
}

impl Recognizer {
    pub fn new(config: RecognizerConfig, reference: NnReferenceSet) -> Result<Self, RecognizerError> {
        config.validate()?;
        if reference.len() < config.k_neighbors {
            return Err(RecognizerError::Config(format!(
                "reference set has {} entries, fewer than k_neighbors = {}",
                reference.len(),
                config.k_neighbors
            )));
        }
        Ok(Self { config, reference })
    }

    pub fn verdict(&self, scores: &[BiLabelScore], question: &EmbeddingVector) -> Result<RecognizerVerdict, RecognizerError> {
        let l = s_ltod(scores, self.config.delta_ltod, self.config.threshold_mode)?;
        let n = s_nn(question, &self.reference, self.config.k_neighbors)?;
        Ok(decide(l, n, &self.config))
    }
}
