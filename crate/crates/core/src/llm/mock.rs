//! Deterministic stand-ins for a black-box LLM.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LlmClient, LlmError, LlmRequest, LlmResponse};

/// Match clause of a script entry. With both fields set, the entry applies
/// only to that question *and* when the pattern matches the full prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

/// One line of a mock script file: `{"match": {"question"|"pattern": ...}, "answer": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    pub answer: String,
}

impl ScriptEntry {
    pub fn question(q: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch {
                question: Some(q.into()),
                pattern: None,
            },
            answer: answer.into(),
        }
    }

    pub fn pattern(p: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch {
                question: None,
                pattern: Some(p.into()),
            },
            answer: answer.into(),
        }
    }

    pub fn question_and_pattern(q: impl Into<String>, p: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch {
                question: Some(q.into()),
                pattern: Some(p.into()),
            },
            answer: answer.into(),
        }
    }
}

/// Scripted mock LLM.
///
/// Lookup order: entries keyed on the request's exact question (in script
/// order), then question-less pattern entries (in script order). A strict
/// mock errors on a miss; a lenient one returns its fallback answer.
#[derive(Debug, Clone)]
pub struct ScriptedLlm {
    by_question: HashMap<String, Vec<(Option<Regex>, String)>>,
    patterns: Vec<(Regex, String)>,
    strict: bool,
    fallback: String,
}

impl ScriptedLlm {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>, strict: bool) -> Result<Self, LlmError> {
        let mut by_question: HashMap<String, Vec<(Option<Regex>, String)>> = HashMap::new();
        let mut patterns = Vec::new();
        for e in entries {
            let re = e
                .matcher
                .pattern
                .as_deref()
                .map(Regex::new)
                .transpose()
                .map_err(|err| LlmError::Script(err.to_string()))?;
            match (e.matcher.question, re) {
                (Some(q), re) => by_question.entry(q.trim().to_string()).or_default().push((re, e.answer)),
                (None, Some(re)) => patterns.push((re, e.answer)),
                (None, None) => return Err(LlmError::Script("entry needs a question or a pattern".into())),
            }
        }
        Ok(Self {
            by_question,
            patterns,
            strict,
            fallback: "I don't know.".into(),
        })
    }

    pub fn with_fallback(mut self, answer: impl Into<String>) -> Self {
        self.fallback = answer.into();
        self
    }

    /// Load a JSONL script file.
    pub fn load(path: impl AsRef<Path>, strict: bool) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| LlmError::Script(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        Self::new(entries, strict)
    }

    fn lookup(&self, req: &LlmRequest) -> Option<&str> {
        if let Some(q) = &req.question {
            if let Some(cands) = self.by_question.get(q.trim()) {
                for (re, answer) in cands {
                    if re.as_ref().is_none_or(|re| re.is_match(&req.prompt)) {
                        return Some(answer);
                    }
                }
            }
        }
        self.patterns
            .iter()
            .find(|(re, _)| re.is_match(&req.prompt))
            .map(|(_, a)| a.as_str())
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let text = match self.lookup(req) {
            Some(a) => a.to_string(),
            None if self.strict => {
                return Err(LlmError::Unscripted(req.prompt.chars().take(80).collect()));
            }
            None => self.fallback.clone(),
        };
        Ok(LlmResponse { text, latency_ms: 0 })
    }

    fn max_concurrency(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Closure-backed client, handy for tests that need programmatic behaviour.
pub struct FnLlm<F>(pub F);

impl<F> std::fmt::Debug for FnLlm<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnLlm")
    }
}

impl<F> LlmClient for FnLlm<F>
where
    F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (self.0)(req).map(|text| LlmResponse { text, latency_ms: 0 })
    }

    fn max_concurrency(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}
