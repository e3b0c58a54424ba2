//! End-to-end inference: retrieve, score, recognize, reduce, prompt, answer.

mod config;
mod eval;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SubDocument, Tokenizer};
use crate::embedding::EmbeddingVector;
use crate::index::{RetrievedDoc, Retriever};
use crate::llm::{build_noretrieve_prompt, build_retrieve_prompt, is_correct, LlmClient, PromptTemplates, TemplateKind};
use crate::recognizer::{Decision, Recognizer, RecognizerVerdict};
use crate::reducer::{reduce, rerank_topk, EligibilityDetector, ReducerConfig, ScoredSubDoc, SubDocCombination};
use crate::scorer::{BiLabelScore, Scorer};

pub use config::{EmbeddingConfig, LlmConfig, PipelineConfig, PipelinePaths};
pub use eval::{Ablation, EvalReport, EvalSummary, QuestionFailure, RECALL_KS};

/// Where in the pipeline a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Retrieve,
    Score,
    Recognize,
    Reduce,
    Generate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Retrieve => "retrieve",
            Stage::Score => "score",
            Stage::Recognize => "recognize",
            Stage::Reduce => "reduce",
            Stage::Generate => "generate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    /// Network-level failure that may succeed on a later attempt.
    pub transport: bool,
}

impl PipelineError {
    pub fn new(stage: Stage, err: impl std::fmt::Display) -> Self {
        Self {
            stage,
            message: err.to_string(),
            transport: false,
        }
    }
}

/// Inference settings that are not owned by a component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub top_retrieve: usize,
    pub reducer: ReducerConfig,
    pub template: TemplateKind,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            top_retrieve: 100,
            reducer: ReducerConfig::default(),
            template: TemplateKind::Comprehensive,
        }
    }
}

/// Per-run switches used by ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerOptions {
    /// Skip the recognizer and always retrieve.
    pub force_retrieve: bool,
    /// Use the reranked documents whole instead of reducing them.
    pub reduce: bool,
    pub template: TemplateKind,
    /// Score with the fixed-weight scorer instead of the default one.
    pub fixed_w_scorer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedPassage {
    pub subdoc_id: String,
    pub p_ans: f64,
    pub p_pref: f64,
    pub token_count: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedCombination {
    pub passages: Vec<TracedPassage>,
    pub token_count: usize,
}

impl From<&SubDocCombination> for TracedCombination {
    fn from(c: &SubDocCombination) -> Self {
        Self {
            passages: c
                .members
                .iter()
                .map(|m| TracedPassage {
                    subdoc_id: m.subdoc.id(),
                    p_ans: m.score.p_ans,
                    p_pref: m.score.p_pref,
                    token_count: m.subdoc.token_count,
                    text: m.subdoc.text.clone(),
                })
                .collect(),
            token_count: c.token_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub question_id: String,
    pub question: String,
    pub verdict: RecognizerVerdict,
    /// Present exactly when the verdict is Retrieve.
    pub combination: Option<TracedCombination>,
    pub prompt_tokens: usize,
    pub response: String,
    /// `None` when no gold answers were supplied.
    pub correct: Option<bool>,
    /// Wall-clock milliseconds per stage.
    pub timings_ms: std::collections::BTreeMap<String, u64>,
}

impl AnswerTrace {
    /// The trace with timings cleared, for comparisons across runs.
    pub fn without_timings(mut self) -> Self {
        self.timings_ms.clear();
        self
    }
}

/// A loaded pipeline. All parts are immutable and shareable across threads.
pub struct Pipeline {
    pub retriever: Retriever,
    pub scorer: Scorer,
    /// Scorer trained with a fixed class weight, for the `fixed_w` ablation.
    pub fixed_w_scorer: Option<Scorer>,
    pub recognizer: Recognizer,
    pub detector: Arc<dyn EligibilityDetector>,
    pub llm: Arc<dyn LlmClient>,
    pub templates: PromptTemplates,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub settings: PipelineSettings,
}

pub(crate) struct Answered {
    pub trace: AnswerTrace,
    pub scored: Vec<(RetrievedDoc, BiLabelScore)>,
}

impl Pipeline {
    pub fn default_options(&self) -> AnswerOptions {
        AnswerOptions {
            force_retrieve: false,
            reduce: true,
            template: self.settings.template,
            fixed_w_scorer: false,
        }
    }

    /// Answer one question with the default options.
    pub fn answer_question(
        &self,
        question_id: &str,
        question: &str,
        gold_answers: Option<&[String]>,
    ) -> Result<AnswerTrace, PipelineError> {
        self.answer_with(question_id, question, gold_answers, self.default_options())
            .map(|a| a.trace)
    }

    pub(crate) fn answer_with(
        &self,
        question_id: &str,
        question: &str,
        gold_answers: Option<&[String]>,
        opts: AnswerOptions,
    ) -> Result<Answered, PipelineError> {
        let mut timings = std::collections::BTreeMap::new();
        let mut clock = Instant::now();
        let mut lap = |name: &str, timings: &mut std::collections::BTreeMap<String, u64>| {
            timings.insert(name.to_string(), clock.elapsed().as_millis() as u64);
            clock = Instant::now();
        };
        let tok = self.tokenizer.as_ref();
        let scorer = if opts.fixed_w_scorer {
            self.fixed_w_scorer.as_ref().ok_or_else(|| {
                PipelineError::new(Stage::Load, "the fixed_w ablation needs a fixed-weight scorer model")
            })?
        } else {
            &self.scorer
        };

        let q_vec: EmbeddingVector = self.retriever.provider().embed(question).map_err(|e| PipelineError {
            stage: Stage::Retrieve,
            transport: e.is_retryable(),
            message: e.to_string(),
        })?;
        let hits = self.retriever.retrieve_embedded(&q_vec, self.settings.top_retrieve);
        lap("retrieve", &mut timings);

        let scored = scorer
            .score_retrieved(&q_vec, &hits, &self.retriever)
            .map_err(|e| PipelineError::new(Stage::Score, e))?;
        lap("score", &mut timings);

        let scores: Vec<BiLabelScore> = scored.iter().map(|(_, s)| *s).collect();
        let mut verdict = self
            .recognizer
            .verdict(&scores, &q_vec)
            .map_err(|e| PipelineError::new(Stage::Recognize, e))?;
        if opts.force_retrieve {
            verdict.decision = Decision::Retrieve;
        }
        lap("recognize", &mut timings);

        let (req, combination) = match verdict.decision {
            Decision::NoRetrieve => (build_noretrieve_prompt(&self.templates, question, tok), None),
            Decision::Retrieve => {
                let combination = if opts.reduce {
                    reduce(&q_vec, &scored, scorer, self.detector.as_ref(), &self.settings.reducer, tok)
                        .map_err(|e| PipelineError::new(Stage::Reduce, e))?
                        .combination
                } else {
                    let members = rerank_topk(&scored, self.settings.reducer.top_rerank)
                        .into_iter()
                        .map(|d| ScoredSubDoc {
                            subdoc: SubDocument::whole(&d.doc, tok),
                            score: d.score,
                            combined: d.combined,
                            parent_position: d.rerank_position,
                        })
                        .collect::<Vec<_>>();
                    let width = members.len().max(self.settings.reducer.max_docs);
                    SubDocCombination::new(members, width)
                };
                lap("reduce", &mut timings);
                let req = build_retrieve_prompt(&self.templates, opts.template, question, &combination.passages(), tok)
                    .ok_or_else(|| PipelineError::new(Stage::Reduce, "the combination is empty"))?;
                (req, Some(combination))
            }
        };

        let resp = self.llm.complete(&req).map_err(|e| PipelineError {
            stage: Stage::Generate,
            transport: e.is_transport(),
            message: e.to_string(),
        })?;
        lap("generate", &mut timings);

        Ok(Answered {
            trace: AnswerTrace {
                question_id: question_id.to_string(),
                question: question.to_string(),
                verdict,
                combination: combination.as_ref().map(TracedCombination::from),
                prompt_tokens: req.token_count,
                correct: gold_answers.map(|g| is_correct(&resp.text, g)),
                response: resp.text,
                timings_ms: timings,
            },
            scored,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{QaRecord, WhitespacePunctTokenizer};
    use crate::embedding::{EmbeddingProvider, HashEmbedder};
    use crate::index::VectorIndex;
    use crate::llm::{LlmError, LlmRequest, LlmResponse};
    use crate::nn::Mlp;
    use crate::recognizer::{build_nn_reference, RecognizerConfig};
    use crate::scorer::{FeatureMode, ScorerModel};
    use crate::synthetic::{redundant_corpus, ReaderLlm, SyntheticQa};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIM: usize = 32;

    fn world() -> SyntheticQa {
        redundant_corpus(5, "p", 6, 4, 6, 0.0)
    }

    /// Untrained head, accept-all detector, reader that knows every fact.
    fn pipeline(world: &SyntheticQa, delta_ltod: f64, llm: Arc<dyn LlmClient>) -> Pipeline {
        let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(DIM, 0));
        let tok = WhitespacePunctTokenizer;
        let templates = PromptTemplates::default();
        let reader = ReaderLlm::new(&world.facts).with_known(&world.facts);
        let reference = build_nn_reference(&world.qa(), &reader, provider.as_ref(), &templates, &tok)
            .unwrap()
            .reference;
        let corpus = Arc::new(world.corpus.clone());
        let index = Arc::new(VectorIndex::build(&corpus, provider.as_ref()).unwrap());
        let model = ScorerModel {
            head: Mlp::new(&[3 * DIM + 1, 4, 2], &mut ChaCha8Rng::seed_from_u64(0)),
            feature_mode: FeatureMode::Interaction,
            provider_fingerprint: provider.fingerprint(),
            w_final: 0.5,
            seed: 0,
        };
        Pipeline {
            retriever: Retriever::new(corpus, index, Arc::clone(&provider)).unwrap(),
            scorer: Scorer::new(model, provider).unwrap(),
            fixed_w_scorer: None,
            recognizer: Recognizer::new(RecognizerConfig { delta_ltod, k_neighbors: 3, ..Default::default() }, reference).unwrap(),
            detector: Arc::new(|f: &[f64]| f.iter().filter(|&&x| x != 0.0).count() >= 4),
            llm,
            templates,
            tokenizer: Arc::new(tok),
            settings: PipelineSettings {
                top_retrieve: 20,
                reducer: ReducerConfig {
                    top_rerank: 4,
                    max_docs: 4,
                    window: crate::corpus::WindowConfig { window: 2, stride: 1 },
                },
                ..Default::default()
            },
        }
    }

    fn reader(world: &SyntheticQa) -> Arc<dyn LlmClient> {
        Arc::new(ReaderLlm::new(&world.facts))
    }

    #[test]
    fn confident_questions_skip_retrieval() {
        let w = world();
        let p = pipeline(&w, -1e9, Arc::new(ReaderLlm::new(&w.facts).with_known(&w.facts)));
        let q = &w.qa()[0];
        let t = p.answer_question(&q.question_id, &q.question, Some(&q.gold_answers)).unwrap();
        assert_eq!(t.verdict.decision, Decision::NoRetrieve);
        assert!(t.combination.is_none());
        let plain = build_noretrieve_prompt(&p.templates, &q.question, p.tokenizer.as_ref());
        assert_eq!(t.prompt_tokens, plain.token_count);
        assert_eq!(t.correct, Some(true));
    }

    #[test]
    fn unconfident_questions_retrieve_and_reduce() {
        let w = world();
        let p = pipeline(&w, 1e9, reader(&w));
        for q in w.qa() {
            let t = p.answer_question(&q.question_id, &q.question, None).unwrap();
            assert_eq!(t.verdict.decision, Decision::Retrieve);
            let c = t.combination.expect("retrieve branch carries a combination");
            assert!(!c.passages.is_empty() && c.passages.len() <= 4);
            assert_eq!(c.token_count, c.passages.iter().map(|p| p.token_count).sum::<usize>());
            assert!(t.prompt_tokens > c.token_count);
            assert_eq!(t.correct, None);
        }
    }

    #[test]
    fn traces_repeat_apart_from_timings() {
        let w = world();
        let p = pipeline(&w, 1e9, reader(&w));
        let q = &w.qa()[2];
        let a = p.answer_question(&q.question_id, &q.question, Some(&q.gold_answers)).unwrap();
        let b = p.answer_question(&q.question_id, &q.question, Some(&q.gold_answers)).unwrap();
        assert!(a.timings_ms.contains_key("generate"));
        assert_eq!(a.without_timings(), b.without_timings());
    }

    #[test]
    fn ablations_change_what_they_should() {
        let w = world();
        let p = pipeline(&w, -1e9, Arc::new(ReaderLlm::new(&w.facts).with_known(&w.facts)));
        let report = p
            .evaluate(&w.qa(), &[Ablation::NoRecognizer, Ablation::NoReducer])
            .unwrap();
        assert_eq!(report.summary.retrieval_skip_rate, 1.0);
        let forced = &report.ablations["no_recognizer"];
        assert_eq!(forced.retrieval_skip_rate, 0.0);
        assert_eq!(forced.evaluated, w.facts.len());

        let p = pipeline(&w, 1e9, reader(&w));
        let report = p.evaluate(&w.qa(), &[Ablation::NoReducer]).unwrap();
        let whole = &report.ablations["no_reducer"];
        for (id, &tokens) in &report.summary.prompt_tokens {
            assert!(whole.prompt_tokens[id] >= tokens, "{id}: {} < {tokens}", whole.prompt_tokens[id]);
        }
        assert_eq!(report.recall.len(), 4);
    }

    #[test]
    fn empty_question_set_is_an_error() {
        let w = world();
        let p = pipeline(&w, 1e9, reader(&w));
        let err = p.evaluate(&[], &[]).unwrap_err();
        assert_eq!(err.stage, Stage::Load);
    }

    #[test]
    fn fixed_w_ablation_needs_its_model() {
        let w = world();
        let p = pipeline(&w, 1e9, reader(&w));
        assert!(p.evaluate(&w.qa(), &[Ablation::FixedW]).is_err());
    }

    /// Fails with a transport error or a script error for one question.
    #[derive(Debug)]
    struct Flaky {
        inner: ReaderLlm,
        bad_question: String,
        transport: bool,
    }

    impl LlmClient for Flaky {
        fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
            if req.question.as_deref() == Some(self.bad_question.as_str()) {
                return Err(if self.transport {
                    LlmError::Transport {
                        attempts: 3,
                        status: Some(503),
                        message: "unavailable".into(),
                    }
                } else {
                    LlmError::Unscripted(req.prompt.chars().take(20).collect())
                });
            }
            self.inner.complete(req)
        }
    }

    #[test]
    fn transport_failures_are_excluded_and_listed() {
        let w = world();
        let qa: Vec<QaRecord> = w.qa();
        let flaky = |transport| {
            Arc::new(Flaky {
                inner: ReaderLlm::new(&w.facts),
                bad_question: qa[1].question.clone(),
                transport,
            }) as Arc<dyn LlmClient>
        };

        let report = pipeline(&w, 1e9, flaky(true)).evaluate(&qa, &[]).unwrap();
        assert_eq!(report.summary.evaluated, qa.len() - 1);
        assert_eq!(report.summary.failures.len(), 1);
        assert_eq!(report.summary.failures[0].question_id, qa[1].question_id);
        assert_eq!(report.summary.failures[0].stage, Stage::Generate);
        assert!(!report.summary.prompt_tokens.contains_key(&qa[1].question_id));

        let err = pipeline(&w, 1e9, flaky(false)).evaluate(&qa, &[]).unwrap_err();
        assert_eq!(err.stage, Stage::Generate);
        assert!(!err.transport);
    }

    #[test]
    fn ablation_names_parse_back() {
        for ab in [
            Ablation::NoRecognizer,
            Ablation::NoReducer,
            Ablation::FixedW,
            Ablation::Template(TemplateKind::Comprehensive),
        ] {
            assert_eq!(ab.name().parse::<Ablation>().unwrap(), ab);
        }
        assert!("no_such".parse::<Ablation>().is_err());
    }
}
