//! Prompt templates for response generation and annotation.
//!
//! Templates use `{name}` placeholders filled by plain substitution.

use serde::{Deserialize, Serialize};

use super::reconcile::AnnotationRequest;
use crate::types::RagExample;

/// Response-generation template. Documents are joined by line breaks.
pub const GENERATION_TEMPLATE: &str =
    "Use the following pieces of context to answer the question.\n\n{documents}\n\nQuestion: {question}";

pub const ANNOTATION_SYSTEM: &str = "\
You check whether an answer is grounded in retrieved context.
You receive a question, numbered context sentences (key \"doc.sentence\") and numbered answer sentences.
Think step by step in the \"reasoning\" field before giving labels.
For every answer sentence choose one label:
- \"supported\": list the keys of every context sentence that supports it in \"support\".
- \"generally_supported\": transitions, general statements grounded in the question and context as a whole, \
and statements that the context lacks the information needed to answer.
- \"partially_supported\": only part of the claim is supported; list the keys that support that part.
- \"unsupported\": no context sentence supports it.
Also judge whether the answer as a whole is supported by the context.
Reply with JSON only:
{\"reasoning\": string, \"response_supported\": bool, \
\"sentences\": [{\"index\": int, \"label\": string, \"support\": [string]}]}";

pub const ANNOTATION_USER: &str =
    "Question: {question}\n\nContext sentences:\n{context}\n\nAnswer sentences:\n{response}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub generation: String,
    pub annotation_system: String,
    pub annotation_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            generation: GENERATION_TEMPLATE.to_string(),
            annotation_system: ANNOTATION_SYSTEM.to_string(),
            annotation_user: ANNOTATION_USER.to_string(),
        }
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(template.to_string(), |acc, (k, v)| {
        acc.replace(&format!("{{{k}}}"), v)
    })
}

impl PromptTemplates {
    pub fn render_generation(&self, example: &RagExample) -> String {
        let docs: Vec<&str> = example.context.iter().map(|d| d.text.as_str()).collect();
        fill(
            &self.generation,
            &[("documents", &docs.join("\n")), ("question", &example.question)],
        )
    }

    pub fn render_annotation_user(&self, request: &AnnotationRequest<'_>) -> String {
        let mut context = String::new();
        for (d, sentences) in request.context_sentences.iter().enumerate() {
            for (s, text) in sentences.iter().enumerate() {
                context.push_str(&format!("[{d}.{s}] {text}\n"));
            }
        }
        let response: Vec<String> = request
            .response_sentences
            .iter()
            .enumerate()
            .map(|(i, s)| format!("({i}) {s}"))
            .collect();
        fill(
            &self.annotation_user,
            &[
                ("question", request.question),
                ("context", context.trim_end()),
                ("response", &response.join("\n")),
            ],
        )
    }
}
