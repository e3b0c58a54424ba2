//! Gold-answer matching.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Normalized gold answer is a substring of the normalized text.
    #[default]
    Containment,
    /// Normalized text equals a normalized gold answer.
    Exact,
}

/// Lowercase, collapse whitespace and strip non-alphanumeric characters from
/// both ends of every whitespace-separated token. Tokens that become empty are dropped.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for tok in lower.split_whitespace() {
        let tok = tok.trim_matches(|c: char| !c.is_alphanumeric());
        if tok.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Containment check used for Has_Answer labels and answer correctness.
pub fn contains_answer<S: AsRef<str>>(text: &str, gold_answers: &[S]) -> bool {
    matches_answer(text, gold_answers, MatchMode::Containment)
}

pub fn matches_answer<S: AsRef<str>>(text: &str, gold_answers: &[S], mode: MatchMode) -> bool {
    let norm = normalize_answer(text);
    gold_answers.iter().any(|g| {
        let g = normalize_answer(g.as_ref());
        !g.is_empty()
            && match mode {
                MatchMode::Containment => norm.contains(&g),
                MatchMode::Exact => norm == g,
            }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn containment_cases() {
        assert!(contains_answer("He lived in Paris.", &["Paris"]));
        assert!(contains_answer("He lived in Parisian suburbs.", &["Paris"]));
        assert!(!contains_answer("He lived in Lyon.", &["Paris"]));
        assert!(contains_answer("PARIS", &["Paris"]));
        assert!(contains_answer("it was  New\n York,", &["new york"]));
    }

    #[test]
    fn exact_mode() {
        assert!(matches_answer(" Paris. ", &["paris"], MatchMode::Exact));
        assert!(!matches_answer("He lived in Paris.", &["Paris"], MatchMode::Exact));
    }

    #[test]
    fn punctuation_only_gold_never_matches() {
        assert!(!contains_answer("anything ?", &["?"]));
    }

    proptest! {
        #[test]
        fn monotone_under_extension(
            pre in "[a-c .,]{0,8}",
            t in "[a-c .,]{1,10}",
            post in "[a-c .,]{0,8}",
            gold in "[a-c]{1,3}( [a-c]{1,2})?",
        ) {
            let golds = [gold];
            if contains_answer(&t, &golds) {
                let sup = format!("{pre}{t}{post}");
                prop_assert!(contains_answer(&sup, &golds));
            }
        }
    }
}
