//! JSON configuration covering every component, and loading a pipeline from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineError, PipelineSettings, Stage};
use crate::corpus::{Corpus, WhitespacePunctTokenizer};
use crate::embedding::{EmbeddingProvider, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use crate::index::{Retriever, VectorIndex};
use crate::llm::{LlmClient, PromptTemplates, RemoteLlm, RemoteLlmConfig, ScriptedLlm, TemplateKind};
use crate::recognizer::{NnReferenceSet, Recognizer, RecognizerConfig};
use crate::reducer::{DetectorDataConfig, DetectorModel, DetectorTrainConfig, ReducerConfig};
use crate::scorer::{Scorer, ScorerModel, ScorerTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Remote(RemoteEmbedderConfig),
}

fn default_dim() -> usize {
    256
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash {
            dim: default_dim(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmConfig {
    Mock {
        script: PathBuf,
        #[serde(default = "default_strict")]
        strict: bool,
        #[serde(default)]
        fallback: Option<String>,
    },
    Remote(RemoteLlmConfig),
}

fn default_strict() -> bool {
    true
}

/// Artifact locations. Relative paths (and a mock script path) resolve against
/// the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelinePaths {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub train_qa: Option<PathBuf>,
    pub training_pairs: Option<PathBuf>,
    pub scorer: Option<PathBuf>,
    pub fixed_w_scorer: Option<PathBuf>,
    pub detector_data: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    pub nn_reference: Option<PathBuf>,
}

impl PipelinePaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.index,
            &mut self.train_qa,
            &mut self.training_pairs,
            &mut self.scorer,
            &mut self.fixed_w_scorer,
            &mut self.detector_data,
            &mut self.detector,
            &mut self.nn_reference,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed; every component derives its own labeled streams from it.
    pub seed: u64,
    pub paths: PipelinePaths,
    pub embedding: EmbeddingConfig,
    pub llm: Option<LlmConfig>,
    pub recognizer: RecognizerConfig,
    pub top_retrieve: usize,
    pub reducer: ReducerConfig,
    pub template: TemplateKind,
    pub templates: PromptTemplates,
    /// Documents annotated per training question.
    pub annotate_k: usize,
    pub scorer_training: ScorerTrainConfig,
    pub detector_data: DetectorDataConfig,
    pub detector_training: DetectorTrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PipelinePaths::default(),
            embedding: EmbeddingConfig::default(),
            llm: None,
            recognizer: RecognizerConfig::default(),
            top_retrieve: 100,
            reducer: ReducerConfig::default(),
            template: TemplateKind::Comprehensive,
            templates: PromptTemplates::default(),
            annotate_k: 50,
            scorer_training: ScorerTrainConfig::default(),
            detector_data: DetectorDataConfig::default(),
            detector_training: DetectorTrainConfig::default(),
        }
    }
}

fn load_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Load, e)
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&raw).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        if let Some(LlmConfig::Mock { script, .. }) = &mut cfg.llm {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// Set the root seed and hand it to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scorer_training.seed = seed;
        self.detector_data.seed = seed;
        self.detector_training.seed = seed;
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            top_retrieve: self.top_retrieve,
            reducer: self.reducer,
            template: self.template,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_retrieve == 0 || self.reducer.top_rerank == 0 || self.reducer.top_rerank > self.top_retrieve {
            return Err(load_err("need 1 <= top_rerank <= top_retrieve"));
        }
        if self.reducer.max_docs == 0 {
            return Err(load_err("max_docs must be positive"));
        }
        self.recognizer.validate().map_err(load_err)
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, PipelineError> {
        let p = p.as_deref().ok_or_else(|| load_err(format!("config has no `paths.{what}`")))?;
        if !p.exists() {
            return Err(load_err(format!("{what} file {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn provider(&self) -> Result<Arc<dyn EmbeddingProvider>, PipelineError> {
        Ok(match &self.embedding {
            EmbeddingConfig::Hash { dim, seed } => {
                if *dim == 0 {
                    return Err(load_err("embedding dimension must be positive"));
                }
                Arc::new(HashEmbedder::new(*dim, *seed))
            }
            EmbeddingConfig::Remote(c) => Arc::new(RemoteEmbedder::new(c.clone()).map_err(load_err)?),
        })
    }

    pub fn llm_client(&self) -> Result<Arc<dyn LlmClient>, PipelineError> {
        match &self.llm {
            None => Err(load_err("config has no `llm` section")),
            Some(LlmConfig::Mock {
                script,
                strict,
                fallback,
            }) => {
                let mut llm = ScriptedLlm::load(script, *strict).map_err(load_err)?;
                if let Some(f) = fallback {
                    llm = llm.with_fallback(f.clone());
                }
                Ok(Arc::new(llm))
            }
            Some(LlmConfig::Remote(c)) => Ok(Arc::new(RemoteLlm::new(c.clone()).map_err(load_err)?)),
        }
    }

    pub fn corpus(&self) -> Result<Arc<Corpus>, PipelineError> {
        let p = self.require(&self.paths.corpus, "corpus")?;
        Ok(Arc::new(Corpus::load(p).map_err(load_err)?))
    }

    /// Load the saved index when configured and present, otherwise build it in memory.
    pub fn retriever(&self, provider: Arc<dyn EmbeddingProvider>) -> Result<Retriever, PipelineError> {
        let corpus = self.corpus()?;
        let index = match self.paths.index.as_deref().filter(|p| p.exists()) {
            Some(p) => VectorIndex::load(p).map_err(load_err)?,
            None => VectorIndex::build(&corpus, provider.as_ref()).map_err(load_err)?,
        };
        Retriever::new(corpus, Arc::new(index), provider).map_err(load_err)
    }

    /// Load every artifact the inference path needs.
    pub fn build_pipeline(&self) -> Result<Pipeline, PipelineError> {
        self.validate()?;
        let provider = self.provider()?;
        let retriever = self.retriever(Arc::clone(&provider))?;
        let scorer_model = ScorerModel::load(self.require(&self.paths.scorer, "scorer")?).map_err(load_err)?;
        let scorer = Scorer::new(scorer_model, Arc::clone(&provider)).map_err(load_err)?;
        let fixed_w_scorer = match self.paths.fixed_w_scorer.as_deref().filter(|p| p.exists()) {
            Some(p) => Some(
                Scorer::new(ScorerModel::load(p).map_err(load_err)?, Arc::clone(&provider)).map_err(load_err)?,
            ),
            None => None,
        };
        let reference =
            NnReferenceSet::load(self.require(&self.paths.nn_reference, "nn_reference")?).map_err(load_err)?;
        if let Some(fp) = &reference.provider_fingerprint {
            if *fp != provider.fingerprint() {
                return Err(load_err(format!(
                    "reference set embedded with `{fp}` but provider is `{}`",
                    provider.fingerprint()
                )));
            }
        }
        let detector = DetectorModel::load(self.require(&self.paths.detector, "detector")?).map_err(load_err)?;
        if detector.max_docs != self.reducer.max_docs {
            return Err(load_err(format!(
                "detector was trained for max_docs = {} but the config says {}",
                detector.max_docs, self.reducer.max_docs
            )));
        }
        Ok(Pipeline {
            retriever,
            scorer,
            fixed_w_scorer,
            recognizer: Recognizer::new(self.recognizer.clone(), reference).map_err(load_err)?,
            detector: Arc::new(detector),
            llm: self.llm_client()?,
            templates: self.templates.clone(),
            tokenizer: Arc::new(WhitespacePunctTokenizer),
            settings: self.settings(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"seed": 9, "paths": {"corpus": "data/corpus.jsonl", "scorer": "/abs/scorer.json"},
                "llm": {"kind": "mock", "script": "script.jsonl"}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.corpus.as_deref(), Some(dir.path().join("data/corpus.jsonl").as_path()));
        assert_eq!(cfg.paths.scorer.as_deref(), Some(Path::new("/abs/scorer.json")));
        assert_eq!(cfg.scorer_training.seed, 9);
        assert_eq!(cfg.detector_training.seed, 9);
        let script = dir.path().join("script.jsonl");
        assert!(matches!(&cfg.llm, Some(LlmConfig::Mock { script: s, strict: true, .. }) if *s == script));
        assert_eq!(cfg.embedding, EmbeddingConfig::default());
    }

    #[test]
    fn bad_files_are_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = PipelineConfig::load(dir.path().join("missing.json")).unwrap_err();
        assert_eq!(err.stage, Stage::Load);
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"top_retrieve\": \"many\"}").unwrap();
        assert!(PipelineConfig::load(&path).unwrap_err().message.contains("bad.json"));
    }

    #[test]
    fn validation_catches_inconsistent_settings() {
        assert!(PipelineConfig::default().validate().is_ok());
        let mut cfg = PipelineConfig::default();
        cfg.reducer.top_rerank = cfg.top_retrieve + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.reducer.max_docs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.recognizer.s_n = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_artifacts_are_named() {
        let cfg = PipelineConfig::default();
        assert!(cfg.require(&cfg.paths.corpus, "corpus").unwrap_err().message.contains("paths.corpus"));
        assert!(cfg.llm_client().is_err());
        let cfg = PipelineConfig {
            embedding: EmbeddingConfig::Hash { dim: 0, seed: 0 },
            ..Default::default()
        };
        assert!(cfg.provider().is_err());
    }
}
