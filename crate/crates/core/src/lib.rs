//! Hallucination detection for long-context retrieval-augmented generation.
//!
//! A response is checked against its retrieved context by splitting the
//! context into windows that each fit a fixed-length encoder, scoring every
//! response token against every window, and taking the best support each
//! token receives anywhere in the context. Tokens that no window supports
//! form the reported hallucinated spans.
//!
//! ```
//! use spanguard_core::{detect, DetectorConfig, Document, LexicalOverlapScorer, RagExample};
//!
//! let example = RagExample {
//!     id: "demo".into(),
//!     context: vec![Document::new("d0", "The bridge opened in 1932. It spans the harbour.")],
//!     question: "When did the bridge open?".into(),
//!     response: "The bridge opened in 1932. It was painted green.".into(),
//! };
//! let scorer = LexicalOverlapScorer::new(64);
//! let out = detect(&example, &scorer, &DetectorConfig::default()).unwrap();
//! assert_eq!(out.result.hallucinated_spans.len(), 1);
//! assert!(out.result.hallucination_probability > 0.5);
//! ```

pub mod aggregation;
pub mod costmodel;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod scoring;
pub mod text;
pub mod types;
pub mod windowing;

pub use aggregation::{
    aggregate, aggregate_example_level, aggregate_with, AggregationConfig, AggregationMode,
    DetectionResult, HallucinatedSpan, TokenSupportProfile, DEFAULT_SPAN_THRESHOLD,
};
pub use error::{Error, Result};
pub use evaluation::{auroc, bucket_analysis, tune_threshold, ExampleLabel, LabeledScore};
pub use pipeline::{detect, Detection, DetectorConfig, PhaseTimings};
pub use scoring::{
    assemble_matrix, score_example, AnnotationScorer, Concurrency, LexicalOverlapScorer, NoisyScorer,
    ScorerError, SupportMatrix, SupportScorer, WindowInput,
};
pub use text::{
    tokenize_example, Tokenizer, WhitespaceTokenizer, WordPieceTokenizer, WordPunctTokenizer,
};
pub use types::{
    ContextRef, Document, RagExample, Span, SupportAnnotation, SupportKind, SupportLabel,
    TokenizedExample,
};
pub use windowing::{build_windows, project_labels, Stride, Window, WindowConfig, WindowLabels};
