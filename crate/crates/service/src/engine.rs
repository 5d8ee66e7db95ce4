//! Request admission, pipeline execution and latency bookkeeping.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use spanguard_core::pipeline::finish;
use spanguard_core::{
    assemble_matrix, build_windows, tokenize_example, DetectionResult, DetectorConfig, Document, RagExample,
    SupportScorer,
};
use tokio::sync::Semaphore;

use crate::batcher::{Batcher, BatcherOptions};
use crate::config::ServiceConfig;
use crate::metrics::Metrics;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestDocument {
    #[serde(default)]
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectRequest {
    /// Echoed as the result's `example_id`; defaults to the request id.
    #[serde(default)]
    pub id: Option<String>,
    pub context: Vec<RequestDocument>,
    pub question: String,
    pub response: String,
}

impl DetectRequest {
    pub fn from_example(example: &RagExample) -> Self {
        Self {
            id: Some(example.id.clone()),
            context: example
                .context
                .iter()
                .map(|d| RequestDocument {
                    id: d.id.clone(),
                    text: d.text.clone(),
                })
                .collect(),
            question: example.question.clone(),
            response: example.response.clone(),
        }
    }

    /// The request as a pipeline example; `default_id` is used when the
    /// request carries no id.
    pub fn into_example(self, default_id: &str) -> RagExample {
        RagExample {
            id: self.id.unwrap_or_else(|| default_id.to_string()),
            context: self.context.into_iter().map(|d| Document::new(d.id, d.text)).collect(),
            question: self.question,
            response: self.response,
        }
    }
}

/// Per-phase timings of one request, in microseconds. `score_us` includes
/// time spent waiting for batch-mates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub tokenize_us: u64,
    pub window_us: u64,
    pub score_us: u64,
    pub aggregate_us: u64,
    pub total_us: u64,
    pub input_token_count: usize,
    pub window_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub request_id: String,
    #[serde(flatten)]
    pub result: DetectionResult,
    /// `hallucination_probability >= example_threshold`.
    pub hallucinated: bool,
    pub latency_ms: f64,
    pub latency: LatencyRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("request has {tokens} tokens, limit is {limit}")]
    TooLarge { tokens: usize, limit: usize },
    #[error("service saturated, retry later")]
    Saturated,
    #[error("scoring failed: {0}")]
    Scorer(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::TooLarge { .. } => 413,
            ServiceError::Saturated => 503,
            ServiceError::Scorer(_) | ServiceError::Internal(_) => 500,
        }
    }
}

impl From<spanguard_core::Error> for ServiceError {
    fn from(e: spanguard_core::Error) -> Self {
        use spanguard_core::Error as E;
        match e {
            E::InvalidExample(_) | E::EmptyAfterTokenization { .. } | E::QuestionResponseTooLong { .. } => {
                ServiceError::BadRequest(e.to_string())
            }
            E::ScorerFailure { .. } | E::ShapeMismatch { .. } | E::ModelRuntime(_) => {
                ServiceError::Scorer(e.to_string())
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

/// Failure tagged with the request it belongs to.
#[derive(Debug)]
pub struct RequestError {
    pub request_id: String,
    pub error: ServiceError,
}

pub struct Engine {
    config: ServiceConfig,
    detector: DetectorConfig,
    scorer: Arc<dyn SupportScorer>,
    batcher: Batcher,
    slots: Semaphore,
    waiting: AtomicUsize,
    next_id: AtomicU64,
    metrics: Arc<Metrics>,
}

/// Releases the in-flight gauge however the request ends.
struct InFlight<'a>(&'a Metrics);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight_delta(-1);
    }
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

impl Engine {
    pub fn new(config: ServiceConfig, scorer: Arc<dyn SupportScorer>) -> Self {
        let metrics = Arc::new(Metrics::default());
        let batcher = Batcher::start(
            scorer.clone(),
            BatcherOptions {
                max_batch_windows: config.max_batch_windows,
                max_wait: config.max_wait(),
                threads: config.scorer_threads,
            },
            metrics.clone(),
        );
        Self {
            detector: config.detector_config(),
            slots: Semaphore::new(config.max_concurrent_requests),
            waiting: AtomicUsize::new(0),
            next_id: AtomicU64::new(1),
            config,
            scorer,
            batcher,
            metrics,
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Pipeline settings; running the offline pipeline with these and the
    /// same scorer gives identical results.
    pub fn detector_config(&self) -> &DetectorConfig {
        &self.detector
    }

    pub fn scorer(&self) -> &Arc<dyn SupportScorer> {
        &self.scorer
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn next_request_id(&self) -> String {
        format!("req-{:08}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub async fn detect(&self, request: DetectRequest) -> Result<DetectResponse, RequestError> {
        let request_id = self.next_request_id();
        let out = self.detect_inner(request, &request_id).await;
        let status = out.as_ref().map_or_else(|e| e.status(), |_| 200);
        self.metrics.record_response(status);
        out.map_err(|error| RequestError { request_id, error })
    }

    async fn detect_inner(&self, request: DetectRequest, request_id: &str) -> Result<DetectResponse, ServiceError> {
        let start = Instant::now();
        let _permit = match self.slots.try_acquire() {
            Ok(p) => p,
            Err(_) => {
                if self.waiting.fetch_add(1, Ordering::AcqRel) >= self.config.queue_capacity {
                    self.waiting.fetch_sub(1, Ordering::AcqRel);
                    self.metrics.record_rejected();
                    return Err(ServiceError::Saturated);
                }
                let p = self.slots.acquire().await;
                self.waiting.fetch_sub(1, Ordering::AcqRel);
                p.map_err(|_| ServiceError::Internal("admission closed".into()))?
            }
        };
        self.metrics.in_flight_delta(1);
        let _gauge = InFlight(&self.metrics);

        let example = request.into_example(request_id);
        example.validate()?;

        // tokenizing and windowing are CPU work; keep them off the reactor
        let scorer = self.scorer.clone();
        let detector = self.detector;
        let limit = self.config.max_request_tokens;
        let prepared = tokio::task::spawn_blocking(move || -> Result<_, ServiceError> {
            let t = Instant::now();
            let tokenized = tokenize_example(&example, scorer.tokenizer())?;
            let tokenize_us = micros(t);
            let input_tokens = tokenized.context_len() + tokenized.question_len() + tokenized.response_len();
            if input_tokens > limit {
                return Err(ServiceError::TooLarge { tokens: input_tokens, limit });
            }
            let t = Instant::now();
            let windows = build_windows(&tokenized, &detector.window_config(&*scorer))?;
            Ok((tokenized, windows, input_tokens, tokenize_us, micros(t)))
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let (tokenized, windows, input_tokens, tokenize_us, window_us) = prepared?;
        self.metrics.record_input_tokens(input_tokens);

        let t = Instant::now();
        let tokenized = Arc::new(tokenized);
        let windows = Arc::new(windows);
        let rows = self
            .batcher
            .score(tokenized.clone(), windows.clone())
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let score_us = micros(t);

        let t = Instant::now();
        let matrix = assemble_matrix(&tokenized, &windows, rows)?;
        let result = finish(&matrix, &self.detector)?;
        let aggregate_us = micros(t);

        let total_us = micros(start);
        let latency = LatencyRecord {
            tokenize_us,
            window_us,
            score_us,
            aggregate_us,
            total_us,
            input_token_count: input_tokens,
            window_count: windows.len(),
        };
        self.metrics
            .record_latency([tokenize_us, window_us, score_us, aggregate_us, total_us]);
        Ok(DetectResponse {
            request_id: request_id.to_string(),
            hallucinated: result.hallucination_probability >= self.config.example_threshold,
            result,
            latency_ms: total_us as f64 / 1000.0,
            latency,
        })
    }
}
