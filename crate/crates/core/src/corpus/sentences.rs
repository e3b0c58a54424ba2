//! Rule-based sentence segmentation.

use serde::{Deserialize, Serialize};

/// Byte range `[start, end)` into a document's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

const TITLES: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "Prof", "St", "Jr", "Sr", "Mt", "Gen", "Col", "Capt", "Lt", "Sgt",
    "Rev", "Hon", "vs", "Messrs", "Mme", "No",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}')
}

fn is_single_capital(word: &str) -> bool {
    let mut chars = word.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

/// Split `text` into sentences.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) that is followed by whitespace or the end of the text. A single
/// `.` does not end a sentence after a title abbreviation ("Mr.") or after an
/// initial ("J. Smith"). A lone capital letter opening a sentence ("A. B!") is
/// only treated as an initial when a name or another initial follows it.
///
/// Text without any terminator yields one span. Whitespace-only text yields none.
pub fn split_sentences(text: &str) -> Vec<Span> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < n {
        let (pos, c) = chars[i];
        if start.is_none() && !c.is_whitespace() {
            start = Some(pos);
        }
        let Some(sent_start) = start else {
            i += 1;
            continue;
        };
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && is_terminator(chars[j + 1].1) {
            j += 1;
        }
        while j + 1 < n && is_closer(chars[j + 1].1) {
            j += 1;
        }
        let at_boundary = j + 1 == n || chars[j + 1].1.is_whitespace();
        let guarded = c == '.' && j == i && is_abbreviation(text, sent_start, pos, &chars[j + 1..]);
        if at_boundary && !guarded {
            let end = chars[j].0 + chars[j].1.len_utf8();
            spans.push(Span { start: sent_start, end });
            start = None;
        }
        i = j + 1;
    }
    if let Some(s) = start {
        let end = text.trim_end().len();
        if end > s {
            spans.push(Span { start: s, end });
        }
    }
    spans
}

/// Whether the `.` at byte `dot` closes an abbreviation rather than a sentence.
fn is_abbreviation(text: &str, sent_start: usize, dot: usize, rest: &[(usize, char)]) -> bool {
    let before = &text[sent_start..dot];
    let word_start = before
        .rfind(char::is_whitespace)
        .map(|p| p + before[p..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = before[word_start..].trim_start_matches(|c: char| !c.is_alphanumeric());
    if TITLES.contains(&word) {
        return true;
    }
    if !is_single_capital(word) {
        return false;
    }
    let first_word_of_sentence = word_start == 0;
    if !first_word_of_sentence {
        return true;
    }
    let next: String = rest
        .iter()
        .map(|&(_, c)| c)
        .skip_while(|c| c.is_whitespace())
        .take_while(|c| !c.is_whitespace())
        .collect();
    let letters: String = next.chars().take_while(|c| c.is_alphabetic()).collect();
    let starts_upper = letters.chars().next().is_some_and(char::is_uppercase);
    let is_initial = is_single_capital(&letters) && next[letters.len()..].starts_with('.');
    starts_upper && (letters.chars().count() >= 2 || is_initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(text: &str) -> Vec<&str> {
        split_sentences(text).iter().map(|s| s.slice(text)).collect()
    }

    #[test]
    fn terminators_split() {
        assert_eq!(sents("A. B! C?"), vec!["A.", "B!", "C?"]);
    }

    #[test]
    fn no_terminator_is_one_span() {
        assert_eq!(sents("no terminator"), vec!["no terminator"]);
        assert_eq!(sents("  padded text  "), vec!["padded text"]);
    }

    #[test]
    fn initials_and_titles_stay_joined() {
        assert_eq!(
            sents("Mr. J. Smith won. He smiled."),
            vec!["Mr. J. Smith won.", "He smiled."]
        );
        assert_eq!(sents("J. R. R. Tolkien wrote it."), vec!["J. R. R. Tolkien wrote it."]);
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences(" \n\t").is_empty());
    }

    #[test]
    fn closing_quotes_and_runs() {
        assert_eq!(
            sents("He said \"stop.\" Then left?! Done"),
            vec!["He said \"stop.\"", "Then left?!", "Done"]
        );
    }

    #[test]
    fn decimal_point_does_not_split() {
        assert_eq!(sents("Pi is 3.14 roughly. Yes."), vec!["Pi is 3.14 roughly.", "Yes."]);
    }
}
