//! Black-box retrieval-augmented generation with factual-information aware
//! document scoring and sub-document token reduction.
//!
//! The crate is organised along the inference path:
//!
//! - [`corpus`]: documents, sentence segmentation, sliding-window sub-documents,
//!   token counting and gold-answer containment.
//! - [`embedding`] and [`index`]: pluggable text embedders and an exact cosine index.
//! - [`scorer`]: the two-headed (Has_Answer / LLM_Prefer) document scorer and its
//!   imbalance-aware training loop with a hypergradient-learned class weight.
//! - [`recognizer`]: decides whether the LLM needs retrieved context at all.
//! - [`reducer`]: reranking, representative sub-documents, the eligibility detector
//!   and the greedy sub-document filter.
//! - [`llm`]: prompt templates and black-box LLM clients (remote HTTP and scripted mock).
//! - [`pipeline`]: end-to-end inference and the evaluation harness.

pub mod corpus;
pub mod embedding;
mod http;
pub mod index;
pub mod llm;
pub mod nn;
pub mod pipeline;
pub mod recognizer;
pub mod reducer;
pub mod scorer;
pub mod seed;
pub mod synthetic;

pub use corpus::{contains_answer, Corpus, Document, MatchMode, QaRecord, SubDocument};
pub use embedding::{EmbeddingProvider, EmbeddingVector, HashEmbedder};
pub use index::{RetrievedDoc, VectorIndex};
pub use llm::{LlmClient, LlmRequest, LlmResponse, PromptTemplates, TemplateKind};
pub use scorer::{BiLabel, BiLabelScore, Scorer, ScorerModel};
