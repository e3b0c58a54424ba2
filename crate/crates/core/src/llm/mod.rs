//! Black-box LLM access: requests, clients and answer checking.

mod mock;
mod prompt;
mod remote;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contains_answer, Tokenizer};

pub use mock::{FnLlm, ScriptEntry, ScriptMatch, ScriptedLlm};
pub use prompt::{
    build_noretrieve_prompt, build_retrieve_prompt, NoRetrieveTemplate, PromptTemplates, RetrieveTemplate,
    TemplateKind,
};
pub use remote::{RemoteLlm, RemoteLlmConfig};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM transport failed after {attempts} attempt(s): {message}")]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("no scripted response for prompt starting {0:?}")]
    Unscripted(String),
    #[error("invalid mock script: {0}")]
    Script(String),
}

impl LlmError {
    /// Network-level failures, as opposed to a broken script or request.
    pub fn is_transport(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    /// Prompt size under the tokenizer used at render time.
    pub token_count: usize,
    /// The question the prompt asks, when known; the mock keys on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

impl LlmRequest {
    pub fn new(prompt: String, question: Option<String>, tokenizer: &dyn Tokenizer) -> Self {
        Self {
            token_count: tokenizer.count(&prompt),
            prompt,
            question,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub latency_ms: u64,
}

pub trait LlmClient: Send + Sync + Debug {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;

    /// How many requests may be in flight at once.
    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Containment check of gold answers in a model generation.
pub fn is_correct<S: AsRef<str>>(response_text: &str, gold_answers: &[S]) -> bool {
    contains_answer(response_text, gold_answers)
}
