//! End-to-end detection of one example: tokenize, window, score, aggregate.
//!
//! Both offline evaluation and the HTTP service go through `detect`, so the
//! two paths cannot drift apart.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_with, AggregationConfig, AggregationMode, DetectionResult};
use crate::error::Result;
use crate::scoring::{score_example, SupportMatrix, SupportScorer};
use crate::text::tokenize_example;
use crate::types::{RagExample, TokenizedExample};
use crate::windowing::{build_windows, Stride, Window, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub stride: Stride,
    pub batch_size: usize,
    pub mode: AggregationMode,
    pub aggregation: AggregationConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            stride: Stride::Capacity,
            batch_size: 32,
            mode: AggregationMode::Token,
            aggregation: AggregationConfig::default(),
        }
    }
}

impl DetectorConfig {
    /// Window configuration for `scorer`: its sequence length and reserved
    /// tokens, with this config's stride.
    pub fn window_config(&self, scorer: &dyn SupportScorer) -> WindowConfig {
        WindowConfig {
            max_sequence_length: scorer.max_sequence_length(),
            stride: self.stride,
            reserved_special_tokens: scorer.reserved_special_tokens(),
        }
    }
}

/// Wall-clock microseconds spent in each phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub tokenize_us: u64,
    pub window_us: u64,
    pub score_us: u64,
    pub aggregate_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub result: DetectionResult,
    pub timings: PhaseTimings,
    pub window_count: usize,
    pub context_tokens: usize,
    pub input_tokens: usize,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

/// Tokenizes `example` with the scorer's tokenizer and builds its windows.
pub fn prepare(
    example: &RagExample,
    scorer: &dyn SupportScorer,
    config: &DetectorConfig,
) -> Result<(TokenizedExample, Vec<Window>)> {
    let tokenized = tokenize_example(example, scorer.tokenizer())?;
    let windows = build_windows(&tokenized, &config.window_config(scorer))?;
    Ok((tokenized, windows))
}

/// Runs the full pipeline on one example.
pub fn detect(
    example: &RagExample,
    scorer: &dyn SupportScorer,
    config: &DetectorConfig,
) -> Result<Detection> {
    let start = Instant::now();
    let t = Instant::now();
    let tokenized = tokenize_example(example, scorer.tokenizer())?;
    let tokenize_us = micros(t);

    let t = Instant::now();
    let windows = build_windows(&tokenized, &config.window_config(scorer))?;
    let window_us = micros(t);

    let t = Instant::now();
    let matrix = score_example(&tokenized, &windows, scorer, config.batch_size)?;
    let score_us = micros(t);

    let t = Instant::now();
    let result = finish(&matrix, config)?;
    let aggregate_us = micros(t);

    Ok(Detection {
        result,
        window_count: windows.len(),
        context_tokens: tokenized.context_len(),
        input_tokens: tokenized.context_len() + tokenized.question_len() + tokenized.response_len(),
        timings: PhaseTimings {
            tokenize_us,
            window_us,
            score_us,
            aggregate_us,
            total_us: micros(start),
        },
    })
}

/// Aggregation step shared by `detect` and callers that score windows
/// themselves (e.g. a cross-request batcher).
pub fn finish(matrix: &SupportMatrix, config: &DetectorConfig) -> Result<DetectionResult> {
    aggregate_with(matrix, config.mode, &config.aggregation)
}
