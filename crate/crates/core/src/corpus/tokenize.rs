use std::fmt::Debug;

/// Token counter used for prompt accounting and sub-document sizes.
pub trait Tokenizer: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Whitespace split, with leading and trailing punctuation characters of each
/// chunk counted as separate tokens. `"Who was king?"` is four tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunctTokenizer;

impl WhitespacePunctTokenizer {
    pub fn tokens(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let core_start = chunk.find(char::is_alphanumeric);
            let Some(core_start) = core_start else {
                out.extend(chunk.char_indices().map(|(i, c)| &chunk[i..i + c.len_utf8()]));
                continue;
            };
            let core_end = chunk
                .char_indices()
                .rev()
                .find(|(_, c)| c.is_alphanumeric())
                .map(|(i, c)| i + c.len_utf8())
                .unwrap_or(chunk.len());
            let lead = &chunk[..core_start];
            out.extend(lead.char_indices().map(|(i, c)| &lead[i..i + c.len_utf8()]));
            out.push(&chunk[core_start..core_end]);
            let trail = &chunk[core_end..];
            out.extend(trail.char_indices().map(|(i, c)| &trail[i..i + c.len_utf8()]));
        }
        out
    }
}

impl Tokenizer for WhitespacePunctTokenizer {
    fn name(&self) -> &str {
        "whitespace-punct"
    }

    fn count(&self, text: &str) -> usize {
        Self::tokens(text).len()
    }
}
