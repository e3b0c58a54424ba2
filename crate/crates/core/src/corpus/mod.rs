//! Documents, question records, sentence windows and token accounting.

mod answer;
mod sentences;
mod tokenize;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use answer::{contains_answer, matches_answer, normalize_answer, MatchMode};
pub use sentences::{split_sentences, Span};
pub use tokenize::{Tokenizer, WhitespacePunctTokenizer};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
    #[error("question `{0}` has no gold answers")]
    NoGoldAnswers(String),
    #[error("need 1 <= stride <= window (got window={window}, stride={stride})")]
    InvalidWindow { window: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub sentences: Vec<Span>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        let text = text.into();
        let sentences = split_sentences(&text);
        if sentences.is_empty() {
            return Err(CorpusError::EmptyDocument(doc_id));
        }
        Ok(Self {
            doc_id,
            title: title.into(),
            text,
            sentences,
        })
    }

    pub fn sentence(&self, i: usize) -> &str {
        self.sentences[i].slice(&self.text)
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// Text handed to embedders: `"title. text"`, or just the text when untitled.
    pub fn embedding_input(&self) -> String {
        let title = self.title.trim();
        if title.is_empty() {
            self.text.clone()
        } else {
            format!("{}. {}", title.trim_end_matches('.'), self.text)
        }
    }
}

/// Sliding-window sub-document parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window: 3, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDocument {
    pub parent_doc_id: String,
    pub start_sentence: usize,
    pub sentence_count: usize,
    pub text: String,
    pub token_count: usize,
}

impl SubDocument {
    /// Stable identity: parent id plus first sentence index.
    pub fn id(&self) -> String {
        format!("{}#{}", self.parent_doc_id, self.start_sentence)
    }

    pub fn whole(doc: &Document, tokenizer: &dyn Tokenizer) -> Self {
        make_subdoc(doc, 0, doc.sentence_count(), tokenizer)
    }
}

fn make_subdoc(doc: &Document, start: usize, count: usize, tokenizer: &dyn Tokenizer) -> SubDocument {
    let text = (start..start + count)
        .map(|i| doc.sentence(i))
        .collect::<Vec<_>>()
        .join(" ");
    SubDocument {
        parent_doc_id: doc.doc_id.clone(),
        start_sentence: start,
        sentence_count: count,
        token_count: tokenizer.count(&text),
        text,
    }
}

/// Cut `doc` into windows of `window` sentences moving `stride` sentences at a time.
///
/// A document shorter than the window yields one sub-document with all of its
/// sentences. When the stride does not land on the last sentence, a final
/// window ending at the last sentence is appended so every sentence is covered.
pub fn generate_subdocuments(
    doc: &Document,
    cfg: WindowConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<SubDocument>, CorpusError> {
    // A stride longer than the window would skip sentences entirely.
    if cfg.window == 0 || cfg.stride == 0 || cfg.stride > cfg.window {
        return Err(CorpusError::InvalidWindow {
            window: cfg.window,
            stride: cfg.stride,
        });
    }
    let s = doc.sentence_count();
    if s <= cfg.window {
        return Ok(vec![make_subdoc(doc, 0, s, tokenizer)]);
    }
    let mut out = Vec::with_capacity((s - cfg.window) / cfg.stride + 2);
    let mut start = 0;
    while start + cfg.window <= s {
        out.push(make_subdoc(doc, start, cfg.window, tokenizer));
        start += cfg.stride;
    }
    let last_start = s - cfg.window;
    if out.last().map(|d| d.start_sentence) != Some(last_start) {
        out.push(make_subdoc(doc, last_start, cfg.window, tokenizer));
    }
    Ok(out)
}

/// Immutable document collection.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Arc<Document>>,
    by_id: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for doc in docs {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: Document) -> Result<(), CorpusError> {
        if self.by_id.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateId(doc.doc_id));
        }
        self.by_id.insert(doc.doc_id.clone(), self.docs.len());
        self.docs.push(Arc::new(doc));
        Ok(())
    }

    /// Load a JSONL corpus of `{"id", "title", "text"}` objects. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let mut corpus = Corpus::default();
        for (line_no, line) in read_lines(path)? {
            let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            let doc = Document::new(rec.id, rec.title, rec.text).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Arc<Document>> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn documents(&self) -> &[Arc<Document>] {
        &self.docs
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Document>> {
        self.docs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question_id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
}

impl QaRecord {
    pub fn new(
        question_id: impl Into<String>,
        question: impl Into<String>,
        gold_answers: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let question_id = question_id.into();
        if gold_answers.iter().all(|a| normalize_answer(a).is_empty()) {
            return Err(CorpusError::NoGoldAnswers(question_id));
        }
        Ok(Self {
            question_id,
            question: question.into(),
            gold_answers,
        })
    }
}

/// Load a JSONL QA file of `{"question_id", "question", "answers": [...]}` objects.
pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaRecord>, CorpusError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: QaRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let rec = QaRecord::new(rec.question_id, rec.question, rec.gold_answers).map_err(|e| {
            CorpusError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Non-blank lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn doc_with(n: usize) -> Document {
        let text = (1..=n).map(|i| format!("Sentence number {i}.")).collect::<Vec<_>>().join(" ");
        Document::new("d", "", text).unwrap()
    }

    #[test]
    fn windows_over_five_sentences() {
        let tok = WhitespacePunctTokenizer;
        let subs = generate_subdocuments(&doc_with(5), WindowConfig::default(), &tok).unwrap();
        let starts: Vec<_> = subs.iter().map(|s| (s.start_sentence, s.sentence_count)).collect();
        assert_eq!(starts, vec![(0, 3), (1, 3), (2, 3)]);
        assert_eq!(subs[1].text, "Sentence number 2. Sentence number 3. Sentence number 4.");
        assert_eq!(subs[1].token_count, 12);
    }

    #[test]
    fn short_docs_yield_one_window() {
        let tok = WhitespacePunctTokenizer;
        for n in [1, 2, 3] {
            let subs = generate_subdocuments(&doc_with(n), WindowConfig::default(), &tok).unwrap();
            assert_eq!(subs.len(), 1);
            assert_eq!(subs[0].sentence_count, n);
        }
    }

    #[test]
    fn zero_window_rejected() {
        let tok = WhitespacePunctTokenizer;
        let cfg = WindowConfig { window: 0, stride: 1 };
        assert!(generate_subdocuments(&doc_with(3), cfg, &tok).is_err());
    }

    #[test]
    fn load_corpus_cases() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        let mut f = File::create(&good).unwrap();
        writeln!(f, r#"{{"id":"a","title":"A","text":"One. Two."}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","title":"B","text":"Three."}}"#).unwrap();
        assert_eq!(Corpus::load(&good).unwrap().len(), 2);

        let empty = dir.path().join("empty.jsonl");
        File::create(&empty).unwrap();
        assert!(Corpus::load(&empty).unwrap().is_empty());

        let missing = dir.path().join("missing.jsonl");
        let mut f = File::create(&missing).unwrap();
        writeln!(f, r#"{{"id":"a","title":"A","text":"ok"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","title":"B"}}"#).unwrap();
        match Corpus::load(&missing) {
            Err(CorpusError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let dup = dir.path().join("dup.jsonl");
        let mut f = File::create(&dup).unwrap();
        writeln!(f, r#"{{"id":"a","title":"","text":"x"}}"#).unwrap();
        writeln!(f, r#"{{"id":"a","title":"","text":"y"}}"#).unwrap();
        assert!(matches!(Corpus::load(&dup), Err(CorpusError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn qa_requires_answers() {
        assert!(QaRecord::new("q", "Who?", vec![]).is_err());
        assert!(QaRecord::new("q", "Who?", vec!["Paris".into()]).is_ok());
    }

    proptest! {
        #[test]
        fn windows_cover_every_sentence(n in 1usize..30, window in 1usize..6, stride in 1usize..4) {
            let tok = WhitespacePunctTokenizer;
            let doc = doc_with(n);
            let cfg = WindowConfig { window, stride };
            if stride > window {
                prop_assert!(generate_subdocuments(&doc, cfg, &tok).is_err());
                return Ok(());
            }
            let subs = generate_subdocuments(&doc, cfg, &tok).unwrap();
            prop_assert!(!subs.is_empty());
            let mut covered = vec![false; n];
            for s in &subs {
                prop_assert!(s.sentence_count >= 1);
                prop_assert_eq!(s.sentence_count, window.min(n));
                for i in s.start_sentence..s.start_sentence + s.sentence_count {
                    covered[i] = true;
                }
                let joined: Vec<_> = (s.start_sentence..s.start_sentence + s.sentence_count)
                    .map(|i| doc.sentence(i)).collect();
                prop_assert_eq!(&s.text, &joined.join(" "));
            }
            prop_assert!(covered.iter().all(|&c| c));
            if stride == 1 && n >= window {
                prop_assert_eq!(subs.len(), n - window + 1);
            }
        }

        #[test]
        fn spans_cover_non_whitespace(text in "[a-zA-Z .!?\n]{0,60}") {
            let spans = split_sentences(&text);
            let mut last = 0;
            for s in &spans {
                prop_assert!(s.start >= last && s.end > s.start);
                prop_assert!(text[last..s.start].trim().is_empty());
                last = s.end;
            }
            prop_assert!(text[last..].trim().is_empty());
        }
    }
}
