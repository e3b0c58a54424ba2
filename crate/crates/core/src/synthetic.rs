//! Seeded synthetic corpora, QA sets and a reader-style mock LLM for
//! desk-scale experiments and tests.
//!
//! Entities and answers are pseudo-words, so no answer string can appear by
//! accident. Each fact `(entity, attribute) -> answer` can be planted as:
//!
//! - a *statement*: "Records confirm that the {attr} of {E} is {answer}."
//! - a *misleading* statement that contains the answer but asserts another value;
//! - *lexical distractor* sentences that repeat the question terms without an answer.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{Corpus, Document, QaRecord};
use crate::llm::{is_correct, LlmClient, LlmError, LlmRequest, LlmResponse, ScriptEntry};
use crate::scorer::{BiLabel, Sample};
use crate::seed::stream_rng;

pub const ATTRIBUTES: [&str; 24] = [
    "founder", "capital", "emblem", "patron", "harbor", "anthem", "currency", "summit", "festival", "guild",
    "motto", "mascot", "poet", "cathedral", "dynasty", "glacier", "lighthouse", "monastery", "observatory",
    "orchard", "regiment", "sculptor", "vineyard", "waterfall",
];

const FILLER: [&str; 24] = [
    "The weather there is usually mild in spring.",
    "Local markets open early on most mornings.",
    "Travel guides describe a quiet and friendly atmosphere.",
    "Several old bridges cross the slow brown river.",
    "Farmers grow barley and beans on the surrounding hills.",
    "The winters can be long and rather damp.",
    "A narrow railway line links the valley towns.",
    "Visitors often remark on the painted wooden houses.",
    "Fishing boats return to shore before sunset.",
    "The regional museum keeps a small pottery collection.",
    "Children learn traditional songs at school.",
    "Most roads were paved during the last century.",
    "Pine forests cover much of the northern slopes.",
    "Evening concerts are held in the square during summer.",
    "Weavers still use hand looms in a few workshops.",
    "The dialect spoken there has many borrowed words.",
    "A stone tower overlooks the eastern gate.",
    "Snow rarely settles on the lower meadows.",
    "Merchants once traded salt and wool along the coast.",
    "Bakeries sell a dark rye bread with caraway.",
    "The library opens to the public twice a week.",
    "Cyclists follow a marked trail along the lakeshore.",
    "Old maps show a different course for the stream.",
    "Herds of goats graze near the abandoned quarry.",
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mir", "ven", "tas", "dor", "qui", "zel", "bra", "nox", "fen", "hul", "ith", "por", "sa", "gru",
    "wen", "tal", "ruk", "ost", "ely", "vam", "jor", "cid",
];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize, used: &mut BTreeSet<String>) -> String {
    loop {
        let w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        let mut c = w.chars();
        let w = c.next().unwrap().to_uppercase().collect::<String>() + c.as_str();
        if used.insert(w.to_lowercase()) {
            return w;
        }
    }
}

/// One planted fact and the question asking for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub question_id: String,
    pub entity: String,
    pub attribute: String,
    pub answer: String,
    /// The value a misleading statement asserts instead.
    pub wrong: String,
}

impl Fact {
    pub fn question(&self) -> String {
        format!("What is the {} of {}?", self.attribute, self.entity)
    }

    pub fn statement(&self) -> String {
        format!("Records confirm that the {} of {} is {}.", self.attribute, self.entity, self.answer)
    }

    pub fn misleading(&self) -> String {
        format!(
            "Records once listed {} for {}, yet the {} is {}.",
            self.answer, self.entity, self.attribute, self.wrong
        )
    }

    pub fn distractor_sentences(&self) -> [String; 3] {
        [
            format!("Many visitors ask about the {} of {}.", self.attribute, self.entity),
            format!("The {} of {} is a frequent topic in {} guides.", self.attribute, self.entity, self.entity),
            format!("Writers in {} still debate the {} of {}.", self.entity, self.attribute, self.entity),
        ]
    }

    pub fn qa_record(&self) -> QaRecord {
        QaRecord::new(self.question_id.clone(), self.question(), vec![self.answer.clone()]).expect("answers are non-empty")
    }
}

fn make_facts(rng: &mut ChaCha8Rng, prefix: &str, n_entities: usize, attrs_per_entity: usize) -> Vec<Fact> {
    assert!(attrs_per_entity <= ATTRIBUTES.len());
    let mut used = BTreeSet::new();
    let mut facts = Vec::new();
    // Attributes are dealt round-robin from one shuffled list, so no two
    // questions share one until the list runs out.
    let mut attrs = ATTRIBUTES.to_vec();
    attrs.shuffle(rng);
    let mut next_attr = attrs.iter().cycle();
    for e in 0..n_entities {
        let entity = pseudo_word(rng, 3, &mut used);
        for attr in next_attr.by_ref().take(attrs_per_entity) {
            facts.push(Fact {
                question_id: format!("{prefix}{e:02}-{attr}"),
                entity: entity.clone(),
                attribute: attr.to_string(),
                answer: pseudo_word(rng, 4, &mut used),
                wrong: pseudo_word(rng, 4, &mut used),
            });
        }
    }
    facts
}

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    FILLER.choose_multiple(rng, n.min(FILLER.len())).map(|s| s.to_string()).collect()
}

/// A corpus, its questions, and the facts behind them.
#[derive(Debug, Clone)]
pub struct SyntheticQa {
    pub corpus: Corpus,
    pub facts: Vec<Fact>,
    /// Questions whose answer document was deliberately diluted with filler.
    pub diluted: BTreeSet<String>,
}

impl SyntheticQa {
    pub fn qa(&self) -> Vec<QaRecord> {
        self.facts.iter().map(Fact::qa_record).collect()
    }
}

/// Ten documents per question: one answer document, five lexical
/// distractors, and four background documents about the entity. Every other
/// answer document is padded with `dilution` filler sentences so its cosine
/// similarity drops below the distractors'.
pub fn planted_answer_corpus(
    seed: u64,
    prefix: &str,
    n_entities: usize,
    attrs_per_entity: usize,
    dilution: usize,
) -> SyntheticQa {
    let mut rng = stream_rng(seed, "synthetic/planted");
    let facts = make_facts(&mut rng, prefix, n_entities, attrs_per_entity);
    let mut docs = Vec::new();
    let mut diluted = BTreeSet::new();
    for (i, f) in facts.iter().enumerate() {
        let id = |kind: &str, j: usize| format!("{}-{kind}{j}", f.question_id);
        let dilute = i % 2 == 1;
        let mut answer_text = vec![f.statement()];
        answer_text.extend(fillers(&mut rng, if dilute { dilution } else { 1 }));
        if dilute {
            diluted.insert(f.question_id.clone());
            let shift = rng.gen_range(0..answer_text.len());
            answer_text.rotate_right(shift);
        }
        docs.push(Document::new(id("ans", 0), f.entity.clone(), answer_text.join(" ")).unwrap());
        for j in 0..5 {
            let mut s: Vec<String> = f.distractor_sentences().to_vec();
            s.shuffle(&mut rng);
            s.truncate(2 + j % 2);
            s.extend(fillers(&mut rng, 1));
            docs.push(Document::new(id("dis", j), f.entity.clone(), s.join(" ")).unwrap());
        }
        for j in 0..4 {
            let mut s = vec![format!("{} is known across the region.", f.entity)];
            s.extend(fillers(&mut rng, 3));
            docs.push(Document::new(id("bg", j), f.entity.clone(), s.join(" ")).unwrap());
        }
    }
    SyntheticQa {
        corpus: Corpus::from_documents(docs).expect("generated ids are unique"),
        facts,
        diluted,
    }
}

/// `docs_per_question` documents of `sentences` sentences per question. Each
/// document holds its fact in exactly one sentence, so the answer sits inside
/// a single three-sentence window; the other sentences are filler. In roughly
/// `misleading_fraction` of the documents the fact sentence is misleading.
pub fn redundant_corpus(
    seed: u64,
    prefix: &str,
    n_questions: usize,
    docs_per_question: usize,
    sentences: usize,
    misleading_fraction: f64,
) -> SyntheticQa {
    let mut rng = stream_rng(seed, "synthetic/redundant");
    let facts = make_facts(&mut rng, prefix, n_questions, 1);
    let mut docs = Vec::new();
    for f in &facts {
        for j in 0..docs_per_question {
            let mut s = fillers(&mut rng, sentences - 1);
            // Misleading documents never come first, so every question has
            // at least one document with a plain statement.
            let fact = if j > 0 && rng.gen_bool(misleading_fraction) {
                f.misleading()
            } else {
                f.statement()
            };
            s.insert(rng.gen_range(0..=s.len()), fact);
            docs.push(Document::new(format!("{}-d{j}", f.question_id), f.entity.clone(), s.join(" ")).unwrap());
        }
    }
    SyntheticQa {
        corpus: Corpus::from_documents(docs).expect("generated ids are unique"),
        facts,
        diluted: BTreeSet::new(),
    }
}

/// A mock reader. For a prompt with passages it answers from the first
/// passage that states the asked fact: a plain statement gives the right
/// answer, a misleading one the wrong value. With no such passage, or with no
/// passages at all, it answers correctly only for questions it "knows".
#[derive(Debug, Clone, Default)]
pub struct ReaderLlm {
    facts: BTreeMap<String, Fact>,
    known: BTreeSet<String>,
}

impl ReaderLlm {
    pub fn new<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> Self {
        Self {
            facts: facts.into_iter().map(|f| (f.question(), f.clone())).collect(),
            known: BTreeSet::new(),
        }
    }

    /// Mark questions the reader can answer without context.
    pub fn with_known<'a>(mut self, questions: impl IntoIterator<Item = &'a Fact>) -> Self {
        self.known.extend(questions.into_iter().map(Fact::question));
        self
    }

    fn read(&self, req: &LlmRequest) -> String {
        let Some(f) = req.question.as_deref().and_then(|q| self.facts.get(q)) else {
            return "I don't know.".into();
        };
        let statement = f.statement();
        let misleading = f.misleading();
        if let Some(passages) = req.prompt.split_once("\nPassages:\n").map(|(_, rest)| rest) {
            for line in passages.lines().take_while(|l| !l.starts_with("Question:")) {
                match (line.find(&statement), line.find(&misleading)) {
                    (Some(a), Some(b)) if b < a => return format!("It is {}.", f.wrong),
                    (Some(_), _) => return format!("The answer is {}.", f.answer),
                    (None, Some(_)) => return format!("It is {}.", f.wrong),
                    (None, None) => {}
                }
            }
        }
        if self.known.contains(&f.question()) {
            format!("I believe it is {}.", f.answer)
        } else {
            "I don't know.".into()
        }
    }

    /// An equivalent-on-plain-statements script for [`crate::llm::ScriptedLlm`]:
    /// correct whenever the statement appears among the passages.
    pub fn script(&self) -> Vec<ScriptEntry> {
        let mut entries = Vec::new();
        for (q, f) in &self.facts {
            if self.known.contains(q) {
                entries.push(ScriptEntry::question(q.clone(), format!("I believe it is {}.", f.answer)));
            } else {
                entries.push(ScriptEntry::question_and_pattern(
                    q.clone(),
                    format!("(?s)Passages:.*{}", regex::escape(&f.statement())),
                    format!("The answer is {}.", f.answer),
                ));
            }
        }
        entries
    }
}

impl LlmClient for ReaderLlm {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        Ok(LlmResponse {
            text: self.read(req),
            latency_ms: 0,
        })
    }

    fn max_concurrency(&self) -> usize {
        4
    }
}

/// Whether the reader answers `prompt` correctly.
pub fn reader_is_correct(llm: &ReaderLlm, fact: &Fact, prompt: &LlmRequest) -> bool {
    is_correct(&llm.read(prompt), std::slice::from_ref(&fact.answer))
}

/// Feature-level bi-label data with a controlled matched:mismatched ratio.
///
/// `x[0]` carries the Has_Answer signal and `x[1]` the LLM_Prefer signal,
/// each with unit Gaussian noise; the remaining coordinates are noise. A
/// learner that sees mostly matched pairs can lean on the correlation
/// between the two signals, which fails on the mismatched minority.
pub fn imbalanced_samples(seed: u64, n_matched: usize, n_mismatched: usize, dim: usize, signal: f64) -> Vec<Sample> {
    assert!(dim >= 2);
    let mut rng = stream_rng(seed, "synthetic/imbalanced");
    let mut out = Vec::with_capacity(n_matched + n_mismatched);
    let mut push = |rng: &mut ChaCha8Rng, label: BiLabel| {
        let [y1, y2] = label.targets();
        let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        x[0] += signal * (2.0 * y1 - 1.0);
        x[1] += signal * (2.0 * y2 - 1.0);
        out.push(Sample { x, label });
    };
    for _ in 0..n_matched {
        let b = rng.gen_bool(0.5);
        push(&mut rng, BiLabel::new(b, b));
    }
    for _ in 0..n_mismatched {
        let b = rng.gen_bool(0.5);
        push(&mut rng, BiLabel::new(b, !b));
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WhitespacePunctTokenizer;
    use crate::llm::{build_noretrieve_prompt, build_retrieve_prompt, PromptTemplates, TemplateKind};

    #[test]
    fn planted_corpus_shape() {
        let s = planted_answer_corpus(1, "q", 10, 5, 8);
        assert_eq!(s.corpus.len(), 500);
        assert_eq!(s.facts.len(), 50);
        for f in &s.facts {
            let with: Vec<_> = s.corpus.iter().filter(|d| d.text.contains(&f.answer)).collect();
            assert_eq!(with.len(), 1, "{}", f.question_id);
        }
    }

    #[test]
    fn redundant_docs_hold_one_fact_sentence() {
        let s = redundant_corpus(2, "r", 5, 10, 12, 0.3);
        assert_eq!(s.corpus.len(), 50);
        for d in s.corpus.iter() {
            assert_eq!(d.sentence_count(), 12);
            let hits = (0..12).filter(|&i| d.sentence(i).contains("Records")).count();
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn reader_follows_first_statement() {
        let s = redundant_corpus(3, "r", 1, 1, 3, 0.0);
        let f = &s.facts[0];
        let llm = ReaderLlm::new(&s.facts);
        let t = PromptTemplates::default();
        let tok = WhitespacePunctTokenizer;
        let ask = |passages: &[String]| {
            let r = build_retrieve_prompt(&t, TemplateKind::Comprehensive, &f.question(), passages, &tok).unwrap();
            reader_is_correct(&llm, f, &r)
        };
        assert!(ask(&[f.statement()]));
        assert!(!ask(&[f.misleading()]));
        assert!(!ask(&[f.misleading(), f.statement()]));
        assert!(ask(&["Nothing here.".into(), f.statement(), f.misleading()]));
        assert!(!ask(&["Nothing here.".into()]));
        let alone = build_noretrieve_prompt(&t, &f.question(), &tok);
        assert!(!reader_is_correct(&llm, f, &alone));
        assert!(reader_is_correct(&llm.clone().with_known(&s.facts), f, &alone));
    }

    #[test]
    fn imbalanced_ratio_is_exact() {
        let s = imbalanced_samples(4, 1000, 100, 6, 1.0);
        let matched = s.iter().filter(|s| s.label.is_matched()).count();
        assert_eq!(matched as f64 / (s.len() - matched) as f64, 10.0);
    }
}
