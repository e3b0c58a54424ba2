//! Prompt templates for the retrieve and no-retrieve branches.
//!
//! Instruction wordings are data, so template ablations are a configuration swap.

use serde::{Deserialize, Serialize};

use super::LlmRequest;
use crate::corpus::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    #[default]
    Comprehensive,
    Simple,
    Cot,
}

impl TemplateKind {
    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Comprehensive => "comprehensive",
            TemplateKind::Simple => "simple",
            TemplateKind::Cot => "cot",
        }
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "comprehensive" => Ok(TemplateKind::Comprehensive),
            "simple" => Ok(TemplateKind::Simple),
            "cot" => Ok(TemplateKind::Cot),
            other => Err(format!("unknown template `{other}` (expected comprehensive, simple or cot)")),
        }
    }
}

/// Instruction block, passage list, question, optional trailing cue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieveTemplate {
    pub instruction: String,
    #[serde(default)]
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoRetrieveTemplate {
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub comprehensive: RetrieveTemplate,
    pub simple: RetrieveTemplate,
    pub cot: RetrieveTemplate,
    pub no_retrieve: NoRetrieveTemplate,
}

const REFER: &str = "Refer to the passage below and answer the following question.";

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            comprehensive: RetrieveTemplate {
                instruction: format!(
                    "{REFER}\nMake sure you fully understand the meaning of the question and passages.\n\
                     Then give the answer and explain why you choose this answer."
                ),
                suffix: String::new(),
            },
            simple: RetrieveTemplate {
                instruction: REFER.into(),
                suffix: "The answer is".into(),
            },
            cot: RetrieveTemplate {
                instruction: REFER.into(),
                suffix: "Let's think step by step.".into(),
            },
            no_retrieve: NoRetrieveTemplate {
                instruction: "First generate a background passage about the question based on your \
                              internal knowledge.\nThen answer the question by reasoning over that passage."
                    .into(),
            },
        }
    }
}

impl PromptTemplates {
    pub fn retrieve_template(&self, kind: TemplateKind) -> &RetrieveTemplate {
        match kind {
            TemplateKind::Comprehensive => &self.comprehensive,
            TemplateKind::Simple => &self.simple,
            TemplateKind::Cot => &self.cot,
        }
    }

    /// Render a retrieve-branch prompt; passages are numbered `1.`, `2.`, ... in order.
    pub fn render_retrieve<S: AsRef<str>>(&self, kind: TemplateKind, question: &str, passages: &[S]) -> String {
        let t = self.retrieve_template(kind);
        let mut out = String::new();
        out.push_str(t.instruction.trim_end());
        out.push_str("\nPassages:\n");
        for (i, p) in passages.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, p.as_ref().trim()));
        }
        out.push_str("Question: ");
        out.push_str(question.trim());
        if !t.suffix.trim().is_empty() {
            out.push('\n');
            out.push_str(t.suffix.trim());
        }
        out
    }

    pub fn render_no_retrieve(&self, question: &str) -> String {
        format!("{}\nQuestion: {}", self.no_retrieve.instruction.trim_end(), question.trim())
    }
}

/// Build the retrieve-branch request. Returns `None` when there are no passages.
pub fn build_retrieve_prompt<S: AsRef<str>>(
    templates: &PromptTemplates,
    kind: TemplateKind,
    question: &str,
    passages: &[S],
    tokenizer: &dyn Tokenizer,
) -> Option<LlmRequest> {
    if passages.is_empty() {
        return None;
    }
    let prompt = templates.render_retrieve(kind, question, passages);
    Some(LlmRequest::new(prompt, Some(question.trim().to_string()), tokenizer))
}

pub fn build_noretrieve_prompt(templates: &PromptTemplates, question: &str, tokenizer: &dyn Tokenizer) -> LlmRequest {
    let prompt = templates.render_no_retrieve(question);
    LlmRequest::new(prompt, Some(question.trim().to_string()), tokenizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WhitespacePunctTokenizer;

    const Q: &str = "Who was the British Prime Minister in 1953?";

    #[test]
    fn passages_numbered_in_order() {
        let t = PromptTemplates::default();
        let tok = WhitespacePunctTokenizer;
        let req = build_retrieve_prompt(&t, TemplateKind::Comprehensive, Q, &["first passage", "second passage"], &tok)
            .unwrap();
        let lines: Vec<&str> = req.prompt.lines().collect();
        let i1 = lines.iter().position(|l| *l == "1. first passage").unwrap();
        let i2 = lines.iter().position(|l| *l == "2. second passage").unwrap();
        assert!(i1 < i2);
        assert_eq!(*lines.last().unwrap(), format!("Question: {Q}"));
        assert_eq!(req.token_count, tok.count(&req.prompt));
    }

    #[test]
    fn comprehensive_has_three_instruction_parts() {
        let t = PromptTemplates::default();
        let p = t.render_retrieve(TemplateKind::Comprehensive, Q, &["x"]);
        assert!(p.starts_with("Refer to the passage below and answer the following question.\n"));
        assert!(p.contains("Make sure you fully understand the meaning of the question and passages."));
        assert!(p.contains("Then give the answer and explain why you choose this answer."));
    }

    #[test]
    fn simple_and_cot_suffixes() {
        let t = PromptTemplates::default();
        assert!(t.render_retrieve(TemplateKind::Simple, Q, &["x"]).ends_with("\nThe answer is"));
        assert!(t.render_retrieve(TemplateKind::Cot, Q, &["x"]).ends_with("\nLet's think step by step."));
    }

    #[test]
    fn no_retrieve_prompt() {
        let t = PromptTemplates::default();
        let tok = WhitespacePunctTokenizer;
        let req = build_noretrieve_prompt(&t, Q, &tok);
        assert!(req.prompt.contains("background passage about the question"));
        assert!(req.prompt.ends_with(Q));
        assert!(!req.prompt.contains("Passages:"));
        assert_eq!(req, build_noretrieve_prompt(&t, Q, &tok));
        let with = build_retrieve_prompt(&t, TemplateKind::Comprehensive, Q, &["a"], &tok).unwrap();
        assert!(req.token_count < with.token_count);
    }

    #[test]
    fn empty_combination_has_no_prompt() {
        let t = PromptTemplates::default();
        let none: [&str; 0] = [];
        assert!(build_retrieve_prompt(&t, TemplateKind::Simple, Q, &none, &WhitespacePunctTokenizer).is_none());
    }

    #[test]
    fn template_names_parse() {
        for k in [TemplateKind::Comprehensive, TemplateKind::Simple, TemplateKind::Cot] {
            assert_eq!(k.name().parse::<TemplateKind>().unwrap(), k);
        }
        assert!("fancy".parse::<TemplateKind>().is_err());
    }
}
