//! Service configuration: file (TOML or JSON) plus `SPANGUARD_*` overrides.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use spanguard_core::aggregation::AggregationConfig;
use spanguard_core::scoring::onnx::{OnnxScorer, OnnxScorerConfig};
use spanguard_core::{DetectorConfig, LexicalOverlapScorer, Stride, SupportScorer};

pub const ENV_PREFIX: &str = "SPANGUARD_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("environment variable {name}: cannot parse {value:?}")]
    Env { name: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scorer(#[from] spanguard_core::Error),
}

/// Which scorer backs the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    /// Deterministic word-overlap oracle.
    Lexical {
        #[serde(default = "default_overlap")]
        overlap_fraction: f64,
    },
    /// Exported token-classification graph.
    Onnx(OnnxScorerConfig),
}

fn default_overlap() -> f64 {
    LexicalOverlapScorer::DEFAULT_OVERLAP
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::Lexical {
            overlap_fraction: default_overlap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub max_sequence_length: usize,
    pub stride: Stride,
    /// Tokens below this support are reported in spans.
    pub span_threshold: f64,
    /// Responses with hallucination probability at or above this are flagged.
    pub example_threshold: f64,
    /// Most windows sent to the scorer in one call.
    pub max_batch_windows: usize,
    /// How long the batcher waits for more windows before running a partial
    /// batch.
    pub max_wait_ms: u64,
    pub max_concurrent_requests: usize,
    /// Requests allowed to wait for a slot; beyond this the service sheds load.
    pub queue_capacity: usize,
    /// Upper bound on context + question + response tokens per request.
    pub max_request_tokens: usize,
    /// Threads running scorer batches.
    pub scorer_threads: usize,
    pub scorer: ScorerSpec,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_sequence_length: 512,
            stride: Stride::Capacity,
            span_threshold: 0.5,
            example_threshold: 0.5,
            max_batch_windows: 64,
            max_wait_ms: 10,
            max_concurrent_requests: 64,
            queue_capacity: 256,
            max_request_tokens: 65_536,
            scorer_threads: std::thread::available_parallelism().map_or(4, |n| n.get()),
            scorer: ScorerSpec::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Env {
        name: name.into(),
        value: value.into(),
    })
}

impl ServiceConfig {
    /// Reads a `.toml` or `.json` file; other extensions are tried as TOML.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: shown,
            message,
        })
    }

    /// Applies `SPANGUARD_<FIELD>` overrides from `vars`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let Some(field) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let (name, v) = (k.as_ref(), v.as_ref());
            match field {
                "BIND" => self.bind = v.to_string(),
                "MAX_SEQUENCE_LENGTH" => self.max_sequence_length = parse_env(name, v)?,
                "STRIDE" => self.stride = Stride::Tokens(parse_env(name, v)?),
                "SPAN_THRESHOLD" => self.span_threshold = parse_env(name, v)?,
                "EXAMPLE_THRESHOLD" => self.example_threshold = parse_env(name, v)?,
                "MAX_BATCH_WINDOWS" => self.max_batch_windows = parse_env(name, v)?,
                "MAX_WAIT_MS" => self.max_wait_ms = parse_env(name, v)?,
                "MAX_CONCURRENT_REQUESTS" => self.max_concurrent_requests = parse_env(name, v)?,
                "QUEUE_CAPACITY" => self.queue_capacity = parse_env(name, v)?,
                "MAX_REQUEST_TOKENS" => self.max_request_tokens = parse_env(name, v)?,
                "SCORER_THREADS" => self.scorer_threads = parse_env(name, v)?,
                "MODEL_PATH" | "VOCAB_PATH" => {
                    let ScorerSpec::Onnx(onnx) = &mut self.scorer else {
                        self.scorer = ScorerSpec::Onnx(OnnxScorerConfig::default());
                        return self.apply_env([(name, v)]);
                    };
                    if field == "MODEL_PATH" {
                        onnx.model_path = v.into();
                    } else {
                        onnx.vocab_path = v.into();
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// File (if any), then process environment, then validation.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        c.apply_env(std::env::vars())?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, t) in [
            ("span_threshold", self.span_threshold),
            ("example_threshold", self.example_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("{name} {t} must lie in (0, 1)"));
            }
        }
        for (name, n) in [
            ("max_batch_windows", self.max_batch_windows),
            ("max_concurrent_requests", self.max_concurrent_requests),
            ("scorer_threads", self.scorer_threads),
            ("max_request_tokens", self.max_request_tokens),
        ] {
            if n == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.max_sequence_length < spanguard_core::windowing::MIN_SEQUENCE_LENGTH {
            return bad(format!(
                "max_sequence_length {} is below {}",
                self.max_sequence_length,
                spanguard_core::windowing::MIN_SEQUENCE_LENGTH
            ));
        }
        Ok(())
    }

    pub fn max_wait(&self) -> Duration {
        Duration::from_millis(self.max_wait_ms)
    }

    /// Pipeline settings shared with offline evaluation.
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            stride: self.stride,
            batch_size: self.max_batch_windows,
            aggregation: AggregationConfig::with_threshold(self.span_threshold),
            ..DetectorConfig::default()
        }
    }

    pub fn build_scorer(&self) -> Result<Arc<dyn SupportScorer>, ConfigError> {
        Ok(match &self.scorer {
            ScorerSpec::Lexical { overlap_fraction } => Arc::new(
                LexicalOverlapScorer::new(self.max_sequence_length).with_overlap(*overlap_fraction),
            ),
            ScorerSpec::Onnx(onnx) => Arc::new(OnnxScorer::load(OnnxScorerConfig {
                max_sequence_length: self.max_sequence_length,
                ..onnx.clone()
            })?),
        })
    }
}
