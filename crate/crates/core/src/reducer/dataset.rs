//! Training data for the eligibility detector.
//!
//! For each question that needs retrieval, random combinations of its top
//! documents' sub-documents are sampled, near-duplicates are dropped, only the
//! combinations on the score skyline are kept, and each survivor is labeled
//! by asking the LLM with that combination as context.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{featurize, prerank, rerank_topk, score_subdocs, ReducerError, ScoredSubDoc};
use crate::corpus::{QaRecord, Tokenizer, WindowConfig};
use crate::index::Retriever;
use crate::llm::{build_noretrieve_prompt, build_retrieve_prompt, is_correct, LlmClient, PromptTemplates, TemplateKind};
use crate::scorer::Scorer;
use crate::seed::stream_rng;

/// How a combination's member scores collapse into its two skyline coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregate {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorDataConfig {
    pub max_docs: usize,
    pub samples_per_question: usize,
    /// Combinations whose member-set Jaccard with a kept one exceeds this are dropped.
    pub overlap_threshold: f64,
    pub aggregate: ScoreAggregate,
    pub top_retrieve: usize,
    pub top_rerank: usize,
    pub window: WindowConfig,
    pub seed: u64,
    /// Keep only questions the LLM gets wrong alone and right with the top documents.
    pub require_retrieval: bool,
}

impl Default for DetectorDataConfig {
    fn default() -> Self {
        Self {
            max_docs: 10,
            samples_per_question: 200,
            overlap_threshold: 0.8,
            aggregate: ScoreAggregate::Mean,
            top_retrieve: 100,
            top_rerank: 10,
            window: WindowConfig::default(),
            seed: 0,
            require_retrieval: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorExample {
    pub question_id: String,
    pub member_subdoc_ids: Vec<String>,
    /// Aggregated `(p_ans, p_pref)` used for the skyline.
    #[serde(default)]
    pub score_pair: [f64; 2],
    pub features: Vec<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DetectorDataset {
    pub examples: Vec<DetectorExample>,
    /// Questions left out because they do not need retrieval (or the top
    /// documents do not help).
    pub skipped_questions: Vec<String>,
    pub failures: Vec<String>,
}

pub fn jaccard<S: Ord>(a: &BTreeSet<S>, b: &BTreeSet<S>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Indices of the candidates kept when scanning in order and dropping any
/// whose overlap with an already kept candidate exceeds `threshold`.
pub fn filter_overlap<S: Ord>(candidates: &[BTreeSet<S>], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if kept.iter().all(|&k| jaccard(&candidates[k], c) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

fn dominates(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] >= b[0] && a[1] >= b[1] && (a[0] > b[0] || a[1] > b[1])
}

/// Indices of the points no other point dominates, in input order.
pub fn skyline(points: &[[f64; 2]]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|&p| dominates(p, points[i])))
        .collect()
}

fn aggregate(members: &[&ScoredSubDoc], how: ScoreAggregate) -> [f64; 2] {
    let a: f64 = members.iter().map(|m| m.score.p_ans).sum();
    let p: f64 = members.iter().map(|m| m.score.p_pref).sum();
    match how {
        ScoreAggregate::Sum => [a, p],
        ScoreAggregate::Mean => [a / members.len() as f64, p / members.len() as f64],
    }
}

/// Sample, filter and label sub-document combinations for every question.
#[allow(clippy::too_many_arguments)]
pub fn build_detector_dataset(
    qa: &[QaRecord],
    retriever: &Retriever,
    scorer: &Scorer,
    llm: &dyn LlmClient,
    templates: &PromptTemplates,
    tokenizer: &dyn Tokenizer,
    cfg: &DetectorDataConfig,
) -> Result<DetectorDataset, ReducerError> {
    if cfg.max_docs == 0 || cfg.top_rerank == 0 {
        return Err(ReducerError::Config("max_docs and top_rerank must be positive".into()));
    }
    let mut out = DetectorDataset::default();
    for q in qa {
        let q_vec = scorer.embed_question(&q.question)?;
        let hits = retriever.retrieve_embedded(&q_vec, cfg.top_retrieve);
        let reranked = rerank_topk(&scorer.score_retrieved(&q_vec, &hits, retriever)?, cfg.top_rerank);
        if reranked.is_empty() {
            out.skipped_questions.push(q.question_id.clone());
            continue;
        }

        if cfg.require_retrieval {
            let alone = build_noretrieve_prompt(templates, &q.question, tokenizer);
            let texts: Vec<&str> = reranked.iter().map(|d| d.doc.text.as_str()).collect();
            let with_docs = build_retrieve_prompt(templates, TemplateKind::Comprehensive, &q.question, &texts, tokenizer)
                .expect("reranked set is non-empty");
            let needs = llm
                .complete(&alone)
                .and_then(|a| llm.complete(&with_docs).map(|b| (a, b)))
                .map(|(a, b)| !is_correct(&a.text, &q.gold_answers) && is_correct(&b.text, &q.gold_answers));
            match needs {
                Ok(true) => {}
                Ok(false) => {
                    out.skipped_questions.push(q.question_id.clone());
                    continue;
                }
                Err(e) => {
                    log::warn!("skipping `{}` for detector data: {e}", q.question_id);
                    out.failures.push(format!("{}: {e}", q.question_id));
                    continue;
                }
            }
        }

        let mut subs = Vec::new();
        for d in &reranked {
            subs.extend(score_subdocs(&d.doc, d.rerank_position, &q_vec, scorer, cfg.window, tokenizer)?);
        }
        // Members are listed in pre-rank order, the order the greedy filter sees.
        let subs = prerank(subs);
        let ids: Vec<String> = subs.iter().map(|s| s.subdoc.id()).collect();

        let mut rng = stream_rng(cfg.seed, &format!("detector-data/{}", q.question_id));
        let max_size = cfg.max_docs.min(subs.len());
        let mut combos: Vec<Vec<usize>> = Vec::with_capacity(cfg.samples_per_question);
        for _ in 0..cfg.samples_per_question {
            let size = rng.gen_range(1..=max_size);
            let mut members = sample(&mut rng, subs.len(), size).into_vec();
            members.sort_unstable();
            combos.push(members);
        }
        let sets: Vec<BTreeSet<&str>> = combos
            .iter()
            .map(|c| c.iter().map(|&i| ids[i].as_str()).collect())
            .collect();
        let distinct: Vec<usize> = filter_overlap(&sets, cfg.overlap_threshold);
        let pairs: Vec<[f64; 2]> = distinct
            .iter()
            .map(|&c| aggregate(&combos[c].iter().map(|&i| &subs[i]).collect::<Vec<_>>(), cfg.aggregate))
            .collect();

        for k in skyline(&pairs) {
            let members: Vec<&ScoredSubDoc> = combos[distinct[k]].iter().map(|&i| &subs[i]).collect();
            let texts: Vec<&str> = members.iter().map(|m| m.subdoc.text.as_str()).collect();
            let req = build_retrieve_prompt(templates, TemplateKind::Comprehensive, &q.question, &texts, tokenizer)
                .expect("combinations are non-empty");
            match llm.complete(&req) {
                Ok(resp) => out.examples.push(DetectorExample {
                    question_id: q.question_id.clone(),
                    member_subdoc_ids: members.iter().map(|m| m.subdoc.id()).collect(),
                    score_pair: pairs[k],
                    features: featurize(members.iter().map(|m| &m.score), cfg.max_docs),
                    label: is_correct(&resp.text, &q.gold_answers),
                }),
                Err(e) => {
                    log::warn!("skipping a combination for `{}`: {e}", q.question_id);
                    out.failures.push(format!("{}: {e}", q.question_id));
                }
            }
        }
    }
    log::info!(
        "detector data: {} examples ({} positive), {} questions skipped",
        out.examples.len(),
        out.examples.iter().filter(|e| e.label).count(),
        out.skipped_questions.len()
    );
    Ok(out)
}

pub fn save_examples(path: impl AsRef<Path>, examples: &[DetectorExample]) -> Result<(), ReducerError> {
    let path = path.as_ref();
    let err = |message: String| ReducerError::File {
        path: path.to_path_buf(),
        message,
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| err(e.to_string()))?);
    for e in examples {
        let line = serde_json::to_string(e).map_err(|e| err(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<DetectorExample>, ReducerError> {
    let path = path.as_ref();
    let err = |message: String| ReducerError::File {
        path: path.to_path_buf(),
        message,
    };
    let reader = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?);
        }
    }
    Ok(out)
}
