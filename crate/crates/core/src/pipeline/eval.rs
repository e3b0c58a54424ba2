//! Evaluation harness: accuracy, prompt tokens, skip rate, Recall@K and ablations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnswerOptions, Answered, Pipeline, PipelineError, Stage};
use crate::corpus::QaRecord;
use crate::index::{mean, recall_at_k};
use crate::llm::TemplateKind;
use crate::recognizer::{Decision, RecognizerConfig};
use crate::reducer::{rerank_by, RerankCriterion};

pub const RECALL_KS: [usize; 5] = [1, 5, 10, 20, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoRecognizer,
    NoReducer,
    FixedW,
    Template(TemplateKind),
}

impl Ablation {
    pub fn name(&self) -> String {
        match self {
            Ablation::NoRecognizer => "no_recognizer".into(),
            Ablation::NoReducer => "no_reducer".into(),
            Ablation::FixedW => "fixed_w".into(),
            Ablation::Template(k) => format!("template={}", k.name()),
        }
    }

    fn apply(&self, mut opts: AnswerOptions) -> AnswerOptions {
        match self {
            Ablation::NoRecognizer => opts.force_retrieve = true,
            Ablation::NoReducer => opts.reduce = false,
            Ablation::FixedW => opts.fixed_w_scorer = true,
            Ablation::Template(k) => opts.template = *k,
        }
        opts
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_recognizer" => Ok(Ablation::NoRecognizer),
            "no_reducer" => Ok(Ablation::NoReducer),
            "fixed_w" => Ok(Ablation::FixedW),
            _ => match s.strip_prefix("template=") {
                Some(k) => k.parse().map(Ablation::Template),
                None => Err(format!("unknown ablation `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub question_id: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Questions that produced an answer (transport failures excluded).
    pub evaluated: usize,
    pub accuracy: f64,
    pub mean_prompt_tokens: f64,
    pub retrieval_skip_rate: f64,
    /// Prompt tokens per question id.
    pub prompt_tokens: BTreeMap<String, usize>,
    pub failures: Vec<QuestionFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub template: String,
    pub recognizer: RecognizerConfig,
    #[serde(flatten)]
    pub summary: EvalSummary,
    /// ordering -> "@K" -> mean Recall@K.
    pub recall: BTreeMap<String, BTreeMap<String, f64>>,
    pub ablations: BTreeMap<String, EvalSummary>,
}

struct Run {
    summary: EvalSummary,
    answered: Vec<Option<Answered>>,
}

impl Pipeline {
    fn run_all(&self, qa: &[QaRecord], opts: AnswerOptions) -> Result<Run, PipelineError> {
        let work = |q: &QaRecord| self.answer_with(&q.question_id, &q.question, Some(&q.gold_answers), opts);
        let cap = self.llm.max_concurrency().max(1);
        let results: Vec<Result<Answered, PipelineError>> = if cap == 1 {
            qa.iter().map(work).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cap)
                .build()
                .map_err(|e| PipelineError::new(Stage::Load, e))?;
            // `collect` keeps input order, so aggregation below is order-independent.
            pool.install(|| qa.par_iter().map(work).collect())
        };

        let mut failures = Vec::new();
        let mut answered = Vec::with_capacity(qa.len());
        for (q, r) in qa.iter().zip(results) {
            match r {
                Ok(a) => answered.push(Some(a)),
                Err(e) if e.transport => {
                    log::warn!("question `{}` excluded: {e}", q.question_id);
                    failures.push(QuestionFailure {
                        question_id: q.question_id.clone(),
                        stage: e.stage,
                        message: e.message,
                    });
                    answered.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        let traces: Vec<_> = answered.iter().flatten().map(|a| &a.trace).collect();
        let frac = |f: &dyn Fn(&super::AnswerTrace) -> bool| {
            mean(&traces.iter().map(|t| f64::from(u8::from(f(t)))).collect::<Vec<_>>())
        };
        let summary = EvalSummary {
            evaluated: traces.len(),
            accuracy: frac(&|t| t.correct == Some(true)),
            mean_prompt_tokens: mean(&traces.iter().map(|t| t.prompt_tokens as f64).collect::<Vec<_>>()),
            retrieval_skip_rate: frac(&|t| t.verdict.decision == Decision::NoRetrieve),
            prompt_tokens: traces.iter().map(|t| (t.question_id.clone(), t.prompt_tokens)).collect(),
            failures,
        };
        Ok(Run { summary, answered })
    }

    /// Evaluate the default pipeline and each requested ablation on `qa`.
    pub fn evaluate(&self, qa: &[QaRecord], ablations: &[Ablation]) -> Result<EvalReport, PipelineError> {
        if qa.is_empty() {
            return Err(PipelineError::new(Stage::Load, "the evaluation set is empty"));
        }
        let base = self.run_all(qa, self.default_options())?;

        let orderings = [
            ("similarity", None),
            ("has_answer_only", Some(RerankCriterion::HasAnswer)),
            ("llm_prefer_only", Some(RerankCriterion::LlmPrefer)),
            ("bilabel_sum", Some(RerankCriterion::BilabelSum)),
        ];
        let mut recall = BTreeMap::new();
        for (name, criterion) in orderings {
            let mut per_k: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (q, a) in qa.iter().zip(&base.answered) {
                let Some(a) = a else { continue };
                let docs: Vec<_> = match criterion {
                    None => a.scored.iter().map(|(r, _)| std::sync::Arc::clone(&r.doc)).collect(),
                    Some(c) => rerank_by(&a.scored, a.scored.len(), c).into_iter().map(|d| d.doc).collect(),
                };
                for k in RECALL_KS {
                    per_k
                        .entry(format!("@{k}"))
                        .or_default()
                        .push(recall_at_k(docs.iter().map(|d| d.as_ref()), &q.gold_answers, k));
                }
            }
            recall.insert(name.to_string(), per_k.into_iter().map(|(k, v)| (k, mean(&v))).collect());
        }

        let mut ablation_reports = BTreeMap::new();
        for ab in ablations {
            let run = self.run_all(qa, ab.apply(self.default_options()))?;
            ablation_reports.insert(ab.name(), run.summary);
        }

        Ok(EvalReport {
            questions: qa.len(),
            template: self.settings.template.name().to_string(),
            recognizer: self.recognizer.config.clone(),
            summary: base.summary,
            recall,
            ablations: ablation_reports,
        })
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, name: &str, e: &EvalSummary| {
            let _ = writeln!(
                s,
                "{name:<24} {:>6} {:>9.4} {:>12.1} {:>10.4}",
                e.evaluated, e.accuracy, e.mean_prompt_tokens, e.retrieval_skip_rate
            );
        };
        let _ = writeln!(s, "{:<24} {:>6} {:>9} {:>12} {:>10}", "run", "n", "accuracy", "prompt_tok", "skip_rate");
        row(&mut s, "default", &self.summary);
        for (name, e) in &self.ablations {
            row(&mut s, name, e);
        }
        let _ = writeln!(s);
        let ks: Vec<String> = RECALL_KS.iter().map(|k| format!("@{k}")).collect();
        let _ = write!(s, "{:<24}", "recall");
        for k in &ks {
            let _ = write!(s, " {k:>7}");
        }
        let _ = writeln!(s);
        for (name, per_k) in &self.recall {
            let _ = write!(s, "{name:<24}");
            for k in &ks {
                let _ = write!(s, " {:>7.4}", per_k.get(k).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(s);
        }
        s
    }
}
