//! Annotator backed by a chat-completion HTTP endpoint.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::prompts::PromptTemplates;
use super::reconcile::{AnnotationOutcome, AnnotationRequest, AnnotatorClient, AnnotatorError};
use crate::types::{ContextRef, SupportAnnotation};

pub const ENV_API_KEY: &str = "SPANGUARD_ANNOTATOR_API_KEY";
pub const ENV_BASE_URL: &str = "SPANGUARD_ANNOTATOR_BASE_URL";
pub const ENV_MODEL: &str = "SPANGUARD_ANNOTATOR_MODEL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4-turbo";

#[derive(Debug, Clone)]
pub struct ChatAnnotatorConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub templates: PromptTemplates,
    pub timeout: Duration,
    pub max_concurrency: usize,
}

impl Default for ChatAnnotatorConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            model: DEFAULT_MODEL.into(),
            templates: PromptTemplates::default(),
            timeout: Duration::from_secs(120),
            max_concurrency: 4,
        }
    }
}

impl ChatAnnotatorConfig {
    /// Defaults overridden by `SPANGUARD_ANNOTATOR_*` environment variables.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            c.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            c.model = v;
        }
        c.api_key = std::env::var(ENV_API_KEY).ok();
        c
    }
}

pub struct ChatAnnotator {
    config: ChatAnnotatorConfig,
    http: reqwest::blocking::Client,
}

impl ChatAnnotator {
    pub fn new(config: ChatAnnotatorConfig) -> Result<Self, AnnotatorError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AnnotatorError::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct Judgement {
    response_supported: bool,
    sentences: Vec<SentenceJudgement>,
}

#[derive(Deserialize)]
struct SentenceJudgement {
    index: usize,
    label: String,
    #[serde(default)]
    support: Vec<String>,
}

fn parse_key(key: &str) -> Result<ContextRef, AnnotatorError> {
    let bad = || AnnotatorError::Malformed(format!("bad context key {key:?}"));
    let (d, s) = key.trim().trim_matches(['[', ']']).split_once('.').ok_or_else(bad)?;
    Ok(ContextRef::new(
        d.parse().map_err(|_| bad())?,
        s.parse().map_err(|_| bad())?,
    ))
}

/// Converts the model's JSON reply into an outcome. Partially supported
/// sentences keep their cited evidence and are flagged; without evidence
/// they are unsupported.
pub fn parse_judgement(content: &str) -> Result<AnnotationOutcome, AnnotatorError> {
    let body = content
        .trim()
        .trim_start_matches("```json")
        .trim_start_matches("```")
        .trim_end_matches("```");
    let j: Judgement =
        serde_json::from_str(body).map_err(|e| AnnotatorError::Malformed(e.to_string()))?;
    let mut annotations = Vec::with_capacity(j.sentences.len());
    let mut partially_supported = Vec::new();
    for s in j.sentences {
        let refs = s
            .support
            .iter()
            .map(|k| parse_key(k))
            .collect::<Result<Vec<_>, _>>()?;
        let ann = match s.label.as_str() {
            "supported" | "partially_supported" if !refs.is_empty() => {
                SupportAnnotation::supported(s.index, refs)
            }
            "generally_supported" => SupportAnnotation::generally_supported(s.index),
            "supported" | "partially_supported" | "unsupported" => {
                SupportAnnotation::unsupported(s.index)
            }
            other => {
                return Err(AnnotatorError::Malformed(format!(
                    "unknown label {other:?} for sentence {}",
                    s.index
                )))
            }
        };
        if s.label == "partially_supported" {
            partially_supported.push(s.index);
        }
        annotations.push(ann);
    }
    Ok(AnnotationOutcome {
        response_level_supported: j.response_supported,
        annotations,
        partially_supported,
    })
}

impl AnnotatorClient for ChatAnnotator {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<AnnotationOutcome, AnnotatorError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": self.config.templates.annotation_system},
                {"role": "user", "content": self.config.templates.render_annotation_user(request)},
            ],
        });
        let mut req = self.http.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AnnotatorError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AnnotatorError::Transport(format!("HTTP {status}: {text}")));
        }
        let chat: ChatResponse = resp
            .json()
            .map_err(|e| AnnotatorError::Malformed(e.to_string()))?;
        let content = chat
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AnnotatorError::Malformed("no choices".into()))?
            .message
            .content;
        parse_judgement(&content)
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency
    }
}
