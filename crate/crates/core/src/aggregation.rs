//! Collapsing a support matrix into token, span and example scores.
//!
//! Token-level mode takes the maximum over windows for every response token,
//! then the minimum over tokens for the example support probability `P_S`.
//! Example-level mode (the naive chunking baseline) takes the minimum within
//! each window first and the maximum over windows afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::SupportMatrix;
use crate::types::Span;

pub const DEFAULT_SPAN_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    /// Tokens whose support falls below this are reported as hallucinated.
    pub span_threshold: f64,
    /// `P_S` is the k-th smallest token support. `1` is the plain minimum.
    pub kth_smallest: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            span_threshold: DEFAULT_SPAN_THRESHOLD,
            kth_smallest: 1,
        }
    }
}

impl AggregationConfig {
    pub fn with_threshold(span_threshold: f64) -> Self {
        Self {
            span_threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span_threshold > 0.0 && self.span_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "span threshold {} must lie in (0, 1)",
                self.span_threshold
            )));
        }
        if self.kth_smallest == 0 {
            return Err(Error::InvalidConfig("kth_smallest must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSupportProfile {
    pub probs: Vec<f64>,
    /// Window that produced each token's maximum (first on ties).
    pub source_window: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinatedSpan {
    pub char_span: Span,
    /// Response tokens `[start, end)` covered by the span.
    pub token_range: [usize; 2],
    pub sentence_index: usize,
    pub min_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub example_id: String,
    pub support_probability: f64,
    pub hallucination_probability: f64,
    pub token_profile: TokenSupportProfile,
    pub hallucinated_spans: Vec<HallucinatedSpan>,
}

impl DetectionResult {
    fn new(
        example_id: String,
        support_probability: f64,
        token_profile: TokenSupportProfile,
        hallucinated_spans: Vec<HallucinatedSpan>,
    ) -> Self {
        Self {
            example_id,
            support_probability,
            hallucination_probability: 1.0 - support_probability,
            token_profile,
            hallucinated_spans,
        }
    }
}

fn check(matrix: &SupportMatrix) -> Result<usize> {
    let r = matrix.response_len();
    if matrix.rows.is_empty() || r == 0 {
        return Err(Error::EmptyMatrix);
    }
    if matrix.response_sentences.len() != r {
        return Err(Error::InvalidConfig(format!(
            "matrix has {r} response spans but {} sentence tags",
            matrix.response_sentences.len()
        )));
    }
    for (i, row) in matrix.rows.iter().enumerate() {
        if row.len() != r {
            return Err(Error::ShapeMismatch {
                window: i,
                expected: r,
                got: row.len(),
            });
        }
    }
    Ok(r)
}

/// Column-wise maximum over windows.
pub fn token_profile(matrix: &SupportMatrix) -> Result<TokenSupportProfile> {
    let r = check(matrix)?;
    let mut probs = matrix.rows[0].clone();
    let mut source_window = vec![0; r];
    for (i, row) in matrix.rows.iter().enumerate().skip(1) {
        for j in 0..r {
            if row[j] > probs[j] {
                probs[j] = row[j];
                source_window[j] = i;
            }
        }
    }
    Ok(TokenSupportProfile {
        probs,
        source_window,
    })
}

fn kth_smallest(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(k - 1).min(v.len() - 1)]
}

/// Maximal runs of tokens below `threshold`, split at sentence boundaries.
pub fn hallucinated_spans(
    probs: &[f64],
    spans: &[Span],
    sentences: &[usize],
    threshold: f64,
) -> Vec<HallucinatedSpan> {
    let mut out = Vec::new();
    let mut j = 0;
    while j < probs.len() {
        if probs[j] >= threshold {
            j += 1;
            continue;
        }
        let start = j;
        let mut min_prob = probs[j];
        j += 1;
        while j < probs.len() && probs[j] < threshold && sentences[j] == sentences[start] {
            min_prob = min_prob.min(probs[j]);
            j += 1;
        }
        out.push(HallucinatedSpan {
            char_span: Span::new(spans[start].start, spans[j - 1].end),
            token_range: [start, j],
            sentence_index: sentences[start],
            min_prob,
        });
    }
    out
}

/// Token-level aggregation: max over windows, then min over tokens.
pub fn aggregate(matrix: &SupportMatrix, config: &AggregationConfig) -> Result<DetectionResult> {
    config.validate()?;
    let profile = token_profile(matrix)?;
    let support = kth_smallest(&profile.probs, config.kth_smallest);
    let spans = hallucinated_spans(
        &profile.probs,
        &matrix.response_spans,
        &matrix.response_sentences,
        config.span_threshold,
    );
    Ok(DetectionResult::new(
        matrix.example_id.clone(),
        support,
        profile,
        spans,
    ))
}

/// Example-level baseline: every window is judged as a whole (its minimum
/// token support) and the best window wins. The token profile is flat at
/// `P_S` and no spans are reported.
pub fn aggregate_example_level(matrix: &SupportMatrix) -> Result<DetectionResult> {
    let r = check(matrix)?;
    let (best_window, support) = matrix
        .rows
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, s)| {
            if s > bs {
                (i, s)
            } else {
                (bi, bs)
            }
        });
    Ok(DetectionResult::new(
        matrix.example_id.clone(),
        support,
        TokenSupportProfile {
            probs: vec![support; r],
            source_window: vec![best_window; r],
        },
        Vec::new(),
    ))
}

/// How window scores are combined into an example score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    Token,
    Example,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "token" => Ok(Self::Token),
            "example" => Ok(Self::Example),
            other => Err(format!("unknown aggregation mode {other:?} (token|example)")),
        }
    }
}

pub fn aggregate_with(
    matrix: &SupportMatrix,
    mode: AggregationMode,
    config: &AggregationConfig,
) -> Result<DetectionResult> {
    match mode {
        AggregationMode::Token => aggregate(matrix, config),
        AggregationMode::Example => aggregate_example_level(matrix),
    }
}
