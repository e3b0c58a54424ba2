//! Two-headed document scorer: Has_Answer and LLM_Prefer.
//!
//! A frozen embedding provider turns the question and document into vectors;
//! a small MLP head maps the combined features to two logits. Only the head is
//! trained (see [`train`]).

mod annotate;
mod loss;
mod train;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::index::{RetrievedDoc, Retriever};
use crate::nn::{sigmoid, Mlp};

pub use annotate::{
    annotate_training_pair, build_training_set, load_pairs, save_pairs, Annotation, LabeledPair, PairFeatures, TrainingSet,
};
pub use loss::{bce_loss, class_weight, loss_and_grad, partial_loss_and_grad, validation_losses, weighted_loss, Sample};
pub use train::{
    hypergradient, hypergradient_step, train_scorer, train_step, EpochStats, Hypergradient, ScorerTrainConfig,
    TrainHistory, TrainedScorer,
};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("training produced a non-finite gradient at step {step}")]
    NonFinite { step: usize },
    #[error("degenerate label balance: {0}")]
    ImbalanceDegenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("annotation failed for question `{question_id}`, doc `{doc_id}`: {message}")]
    Annotation {
        question_id: String,
        doc_id: String,
        message: String,
    },
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error("model file {path}: {message}")]
    ModelFile { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BiLabel {
    pub has_answer: bool,
    pub llm_prefer: bool,
}

impl BiLabel {
    pub fn new(has_answer: bool, llm_prefer: bool) -> Self {
        Self { has_answer, llm_prefer }
    }

    /// Both labels agree (the Kronecker delta of the two bits).
    pub fn is_matched(&self) -> bool {
        self.has_answer == self.llm_prefer
    }

    pub fn targets(&self) -> [f64; 2] {
        [f64::from(u8::from(self.has_answer)), f64::from(u8::from(self.llm_prefer))]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiLabelScore {
    pub logit_ans: f64,
    pub logit_pref: f64,
    pub p_ans: f64,
    pub p_pref: f64,
}

impl BiLabelScore {
    pub fn from_logits(logit_ans: f64, logit_pref: f64) -> Self {
        Self {
            logit_ans,
            logit_pref,
            p_ans: sigmoid(logit_ans),
            p_pref: sigmoid(logit_pref),
        }
    }

    /// Uniform sum of the two probabilities.
    pub fn combined(&self) -> f64 {
        self.p_ans + self.p_pref
    }
}

/// How question and document embeddings become the head's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `q ⊕ d`.
    #[default]
    Concat,
    /// `q ⊕ d ⊕ (q ⊙ d)`; the elementwise product exposes term overlap to the head.
    ConcatProduct,
    /// `q ⊕ d ⊕ (q ⊙ d) ⊕ [q · d]`: adds the similarity itself, which a small
    /// head cannot assemble from hashed buckets it has rarely seen.
    Interaction,
}

impl FeatureMode {
    pub fn input_dim(self, embedding_dim: usize) -> usize {
        match self {
            FeatureMode::Concat => 2 * embedding_dim,
            FeatureMode::ConcatProduct => 3 * embedding_dim,
            FeatureMode::Interaction => 3 * embedding_dim + 1,
        }
    }

    pub fn build(self, q: &[f64], d: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim(q.len()));
        x.extend_from_slice(q);
        x.extend_from_slice(d);
        if self != FeatureMode::Concat {
            x.extend(q.iter().zip(d).map(|(a, b)| a * b));
        }
        if self == FeatureMode::Interaction {
            x.push(q.iter().zip(d).map(|(a, b)| a * b).sum());
        }
        x
    }
}

const MODEL_FORMAT: &str = "fitrag-scorer";
const MODEL_VERSION: u32 = 1;

/// Trained head plus the metadata needed to use it safely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub head: Mlp,
    pub feature_mode: FeatureMode,
    pub provider_fingerprint: String,
    pub w_final: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    architecture: Architecture,
    params: Vec<f64>,
    w_final: f64,
    provider_fingerprint: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Architecture {
    sizes: Vec<usize>,
    hidden_activation: String,
    outputs: Vec<String>,
    feature_mode: FeatureMode,
}

impl ScorerModel {
    pub fn score_vectors(&self, q: &EmbeddingVector, d: &EmbeddingVector) -> BiLabelScore {
        let x = self.feature_mode.build(q.as_slice(), d.as_slice());
        let out = self.head.forward(&x);
        BiLabelScore::from_logits(out[0], out[1])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScorerError> {
        let path = path.as_ref();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            architecture: Architecture {
                sizes: self.head.sizes().to_vec(),
                hidden_activation: "tanh".into(),
                outputs: vec!["has_answer".into(), "llm_prefer".into()],
                feature_mode: self.feature_mode,
            },
            params: self.head.params().to_vec(),
            w_final: self.w_final,
            provider_fingerprint: self.provider_fingerprint.clone(),
            seed: self.seed,
        };
        let err = |message: String| ScorerError::ModelFile {
            path: path.to_path_buf(),
            message,
        };
        let json = serde_json::to_string(&file).map_err(|e| err(e.to_string()))?;
        fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScorerError> {
        let path = path.as_ref();
        let err = |message: String| ScorerError::ModelFile {
            path: path.to_path_buf(),
            message,
        };
        let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ModelFile = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(err(format!("unsupported format {} v{}", file.format, file.version)));
        }
        if file.architecture.sizes.last() != Some(&2) {
            return Err(err("scorer head must have two outputs".into()));
        }
        let head = Mlp::from_params(file.architecture.sizes, file.params).map_err(err)?;
        Ok(Self {
            head,
            feature_mode: file.architecture.feature_mode,
            provider_fingerprint: file.provider_fingerprint,
            w_final: file.w_final,
            seed: file.seed,
        })
    }
}

/// A scorer model bound to the embedding provider it was trained with.
#[derive(Debug, Clone)]
pub struct Scorer {
    model: Arc<ScorerModel>,
    provider: Arc<dyn EmbeddingProvider>,
}

impl Scorer {
    pub fn new(model: ScorerModel, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, ScorerError> {
        if model.provider_fingerprint != provider.fingerprint() {
            return Err(ScorerError::Config(format!(
                "scorer trained with `{}` but provider is `{}`",
                model.provider_fingerprint,
                provider.fingerprint()
            )));
        }
        let expected = model.feature_mode.input_dim(provider.dim());
        if model.head.input_dim() != expected {
            return Err(ScorerError::Config(format!(
                "scorer input width {} does not match provider features {expected}",
                model.head.input_dim()
            )));
        }
        Ok(Self {
            model: Arc::new(model),
            provider,
        })
    }

    pub fn model(&self) -> &ScorerModel {
        &self.model
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn embed_question(&self, question: &str) -> Result<EmbeddingVector, ScorerError> {
        Ok(self.provider.embed(question)?)
    }

    pub fn score(&self, question: &str, doc_text: &str) -> Result<BiLabelScore, ScorerError> {
        let q = self.embed_question(question)?;
        self.score_embedded(&q, doc_text)
    }

    pub fn score_embedded(&self, q: &EmbeddingVector, doc_text: &str) -> Result<BiLabelScore, ScorerError> {
        let d = self.provider.embed(doc_text)?;
        Ok(self.model.score_vectors(q, &d))
    }

    pub fn score_vectors(&self, q: &EmbeddingVector, d: &EmbeddingVector) -> BiLabelScore {
        self.model.score_vectors(q, d)
    }

    /// Score retrieved documents using their index vectors.
    pub fn score_retrieved(
        &self,
        q: &EmbeddingVector,
        hits: &[RetrievedDoc],
        retriever: &Retriever,
    ) -> Result<Vec<(RetrievedDoc, BiLabelScore)>, ScorerError> {
        hits.iter()
            .map(|h| {
                let score = match retriever.doc_vector(&h.doc.doc_id) {
                    Some(v) => self.score_vectors(q, v),
                    None => self.score_vectors(q, &self.provider.embed(&h.doc.embedding_input())?),
                };
                Ok((h.clone(), score))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(provider: &HashEmbedder) -> ScorerModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        ScorerModel {
            head: Mlp::new(&[FeatureMode::Concat.input_dim(provider.dim), 8, 2], &mut rng),
            feature_mode: FeatureMode::Concat,
            provider_fingerprint: provider.fingerprint(),
            w_final: 0.5,
            seed: 5,
        }
    }

    #[test]
    fn scores_are_deterministic_and_consistent() {
        let p = HashEmbedder::new(32, 1);
        let s = Scorer::new(model(&p), Arc::new(p)).unwrap();
        let a = s.score("who won", "Smith won the race.").unwrap();
        let b = s.score("who won", "Smith won the race.").unwrap();
        assert_eq!(a, b);
        assert!((a.p_ans - sigmoid(a.logit_ans)).abs() < 1e-9);
        assert!((a.p_pref - sigmoid(a.logit_pref)).abs() < 1e-9);
    }

    #[test]
    fn provider_mismatch_rejected() {
        let p = HashEmbedder::new(32, 1);
        let m = model(&p);
        assert!(Scorer::new(m, Arc::new(HashEmbedder::new(32, 2))).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let p = HashEmbedder::new(16, 0);
        let m = model(&p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scorer.json");
        m.save(&path).unwrap();
        assert_eq!(ScorerModel::load(&path).unwrap(), m);
    }

    #[test]
    fn feature_modes() {
        let q = [1.0, 2.0];
        let d = [3.0, 4.0];
        assert_eq!(FeatureMode::Concat.build(&q, &d), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(FeatureMode::ConcatProduct.build(&q, &d), vec![1.0, 2.0, 3.0, 4.0, 3.0, 8.0]);
        assert_eq!(FeatureMode::Interaction.build(&q, &d), vec![1.0, 2.0, 3.0, 4.0, 3.0, 8.0, 11.0]);
        assert_eq!(FeatureMode::Interaction.input_dim(2), 7);
    }
}
