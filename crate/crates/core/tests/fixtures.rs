use std::path::PathBuf;

use serde::Deserialize;

use fitrag::corpus::{generate_subdocuments, load_qa, split_sentences, WindowConfig, WhitespacePunctTokenizer};
use fitrag::embedding::HashEmbedder;
use fitrag::index::{recall_at_k, Retriever, VectorIndex};
use fitrag::Corpus;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Deserialize)]
struct Case {
    text: String,
    sentences: Vec<String>,
}

#[test]
fn segmentation_cases() {
    let raw = std::fs::read_to_string(fixture("sentences.jsonl")).unwrap();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let case: Case = serde_json::from_str(line).unwrap();
        let got: Vec<&str> = split_sentences(&case.text).iter().map(|s| s.slice(&case.text)).collect();
        assert_eq!(got, case.sentences, "text: {}", case.text);
    }
}

#[test]
fn corpus_windows_and_retrieval() {
    let corpus = std::sync::Arc::new(Corpus::load(fixture("corpus.jsonl")).unwrap());
    assert_eq!(corpus.len(), 5);
    let tok = WhitespacePunctTokenizer;
    let d1 = corpus.get("d1").unwrap();
    let windows = generate_subdocuments(d1, WindowConfig::default(), &tok).unwrap();
    assert_eq!(windows.len(), 1, "three sentences fit one window");
    assert_eq!(windows[0].text, d1.text);

    let provider = std::sync::Arc::new(HashEmbedder::new(256, 0));
    let index = std::sync::Arc::new(VectorIndex::build(&corpus, provider.as_ref()).unwrap());
    let retriever = Retriever::new(corpus, index, provider).unwrap();
    let qa = load_qa(fixture("qa.jsonl")).unwrap();
    assert_eq!(qa.len(), 3);
    for q in &qa {
        let hits = retriever.retrieve(&q.question, 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(
            recall_at_k(hits.iter().map(|h| h.doc.as_ref()), &q.gold_answers, 3),
            1.0,
            "{}",
            q.question
        );
    }
}
