//! Token-support scorers and batched scoring of an example's windows.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::text::{Tokenizer, WordPunctTokenizer};
use crate::types::{Span, SupportAnnotation, TokenizedExample};
use crate::windowing::{resolve_evidence, window_token_labels, Window};

#[cfg(feature = "onnx")]
pub mod onnx;

/// Failure reported by a scorer backend.
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct ScorerError(pub String);

/// Whether a scorer tolerates concurrent calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    SingleFlight,
}

/// Borrowed view of one window of one example.
#[derive(Debug, Clone, Copy)]
pub struct WindowInput<'a> {
    pub example: &'a TokenizedExample,
    pub window: &'a Window,
}

/// Maps a window to one support probability per response token.
///
/// Implementations must be deterministic, return exactly `R` values in
/// `[0, 1]`, and produce the same row for a window regardless of which batch
/// it is scored in.
pub trait SupportScorer: Send + Sync {
    /// Maximum model input length `L`.
    fn max_sequence_length(&self) -> usize;

    /// Special tokens (separators etc.) that count against `L`.
    fn reserved_special_tokens(&self) -> usize {
        0
    }

    fn tokenizer(&self) -> &dyn Tokenizer;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError>;

    /// Scores several windows at once. Backends with real batching override
    /// this; the default scores one window at a time.
    fn score_batch(&self, inputs: &[WindowInput<'_>]) -> Vec<Result<Vec<f64>, ScorerError>> {
        inputs.iter().map(|i| self.score_window(*i)).collect()
    }
}

impl<S: SupportScorer + ?Sized> SupportScorer for std::sync::Arc<S> {
    fn max_sequence_length(&self) -> usize {
        (**self).max_sequence_length()
    }
    fn reserved_special_tokens(&self) -> usize {
        (**self).reserved_special_tokens()
    }
    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
        (**self).score_window(input)
    }
    fn score_batch(&self, inputs: &[WindowInput<'_>]) -> Vec<Result<Vec<f64>, ScorerError>> {
        (**self).score_batch(inputs)
    }
}

/// Per-window, per-response-token support probabilities for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMatrix {
    pub example_id: String,
    pub rows: Vec<Vec<f64>>,
    pub windows: Vec<Window>,
    pub response_spans: Vec<Span>,
    pub response_sentences: Vec<usize>,
}

impl SupportMatrix {
    /// Builds a matrix from raw rows, assigning each token its own sentence
    /// and a synthetic one-byte span.
    pub fn from_rows(example_id: impl Into<String>, rows: Vec<Vec<f64>>) -> Self {
        let r = rows.first().map_or(0, Vec::len);
        Self {
            example_id: example_id.into(),
            windows: (0..rows.len())
                .map(|index| Window {
                    index,
                    context_range: 0..0,
                })
                .collect(),
            rows,
            response_spans: (0..r).map(|j| Span::new(j, j + 1)).collect(),
            response_sentences: vec![0; r],
        }
    }

    pub fn response_len(&self) -> usize {
        self.response_spans.len()
    }
}

/// Checks a row returned by a scorer for window `window`.
pub fn validate_row(row: &[f64], expected: usize, window: usize) -> Result<()> {
    if row.len() != expected {
        return Err(Error::ShapeMismatch {
            window,
            expected,
            got: row.len(),
        });
    }
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::ScorerFailure {
            window,
            message: format!("probability {p} outside [0, 1]"),
        });
    }
    Ok(())
}

/// Scores every window of `example`, `batch_size` windows per scorer call.
///
/// Row order follows window order and the result does not depend on
/// `batch_size`.
pub fn score_example(
    example: &TokenizedExample,
    windows: &[Window],
    scorer: &dyn SupportScorer,
    batch_size: usize,
) -> Result<SupportMatrix> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let inputs: Vec<WindowInput<'_>> = windows
        .iter()
        .map(|window| WindowInput { example, window })
        .collect();

    let run = |chunk: &[WindowInput<'_>]| scorer.score_batch(chunk);
    let batches: Vec<Vec<Result<Vec<f64>, ScorerError>>> = match scorer.concurrency() {
        Concurrency::Concurrent if inputs.len() > batch_size => {
            inputs.par_chunks(batch_size).map(run).collect()
        }
        _ => inputs.chunks(batch_size).map(run).collect(),
    };

    assemble_matrix(example, windows, batches.into_iter().flatten().collect())
}

/// Builds the matrix from per-window scorer results given in window order,
/// checking every row.
pub fn assemble_matrix(
    example: &TokenizedExample,
    windows: &[Window],
    results: Vec<Result<Vec<f64>, ScorerError>>,
) -> Result<SupportMatrix> {
    let r = example.response_len();
    let mut rows = Vec::with_capacity(windows.len());
    for (result, window) in results.into_iter().zip(windows) {
        let row = result.map_err(|e| Error::ScorerFailure {
            window: window.index,
            message: e.0,
        })?;
        validate_row(&row, r, window.index)?;
        rows.push(row);
    }
    if rows.len() != windows.len() {
        return Err(Error::ScorerFailure {
            window: rows.len(),
            message: format!("scorer returned {} rows for {} windows", rows.len(), windows.len()),
        });
    }

    Ok(SupportMatrix {
        example_id: example.example_id.clone(),
        rows,
        windows: windows.to_vec(),
        response_spans: example.response_tokens.iter().map(|t| t.span).collect(),
        response_sentences: example
            .response_tokens
            .iter()
            .map(|t| t.sentence_index)
            .collect(),
    })
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "of", "in", "on", "at", "to", "for", "by",
    "with", "from", "as", "is", "are", "was", "were", "be", "been", "being", "it", "its",
    "this", "that", "these", "those", "he", "she", "they", "we", "you", "i", "his", "her",
    "their", "our", "your", "has", "have", "had", "do", "does", "did", "not", "no", "so",
    "than", "then", "there", "which", "who", "whom", "what", "when", "where", "why", "how",
    "also", "can", "will", "would", "should", "could", "may", "might", "into", "about",
];

fn content_word(token: &str) -> Option<String> {
    if !token.chars().any(char::is_alphanumeric) {
        return None;
    }
    let lower = token.to_lowercase();
    (!STOPWORDS.contains(&lower.as_str())).then_some(lower)
}

/// Deterministic test oracle: a response sentence is supported (1.0) in a
/// window iff at least `overlap_fraction` of its distinct content words occur
/// among the window's context tokens; otherwise 0.0. Sentences without
/// content words are supported. The question never counts as evidence.
#[derive(Debug, Clone)]
pub struct LexicalOverlapScorer {
    pub overlap_fraction: f64,
    pub max_sequence_length: usize,
    pub reserved_special_tokens: usize,
    tokenizer: WordPunctTokenizer,
}

impl Default for LexicalOverlapScorer {
    fn default() -> Self {
        Self::new(512)
    }
}

impl LexicalOverlapScorer {
    pub const DEFAULT_OVERLAP: f64 = 0.6;

    pub fn new(max_sequence_length: usize) -> Self {
        Self {
            overlap_fraction: Self::DEFAULT_OVERLAP,
            max_sequence_length,
            reserved_special_tokens: 0,
            tokenizer: WordPunctTokenizer,
        }
    }

    pub fn with_overlap(mut self, fraction: f64) -> Self {
        self.overlap_fraction = fraction;
        self
    }
}

/// Shorthand for `LexicalOverlapScorer::default()`.
pub fn lexical_overlap_oracle() -> LexicalOverlapScorer {
    LexicalOverlapScorer::default()
}

impl SupportScorer for LexicalOverlapScorer {
    fn max_sequence_length(&self) -> usize {
        self.max_sequence_length
    }

    fn reserved_special_tokens(&self) -> usize {
        self.reserved_special_tokens
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
        let ex = input.example;
        let range = input.window.context_range.clone();
        let ctx = ex
            .context_tokens
            .get(range.clone())
            .ok_or_else(|| ScorerError(format!("window range {range:?} out of bounds")))?;
        let n_sent = ex.response_sentences.len().max(1);
        let mut words: Vec<HashSet<String>> = vec![HashSet::new(); n_sent];
        for t in &ex.response_tokens {
            if let Some(w) = content_word(&t.text) {
                words[t.sentence_index].insert(w);
            }
        }
        let wanted: HashSet<&str> = words.iter().flatten().map(String::as_str).collect();
        let mut present: HashSet<&str> = HashSet::with_capacity(wanted.len());
        let mut buf = String::new();
        for t in ctx {
            buf.clear();
            buf.extend(t.text.chars().flat_map(char::to_lowercase));
            if let Some(w) = wanted.get(buf.as_str()) {
                present.insert(w);
            }
        }
        let supported: Vec<f64> = words
            .iter()
            .map(|ws| {
                if ws.is_empty() {
                    return 1.0;
                }
                let hit = ws.iter().filter(|w| present.contains(w.as_str())).count();
                let ok = hit as f64 + 1e-9 >= self.overlap_fraction * ws.len() as f64;
                if ok {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(ex
            .response_tokens
            .iter()
            .map(|t| supported[t.sentence_index])
            .collect())
    }
}

/// Replays ground-truth annotations: emits 1.0 exactly where the projected
/// window labels say supported.
#[derive(Debug, Clone)]
pub struct AnnotationScorer {
    annotations: HashMap<String, Vec<SupportAnnotation>>,
    pub max_sequence_length: usize,
    tokenizer: WordPunctTokenizer,
}

impl AnnotationScorer {
    pub fn new(max_sequence_length: usize) -> Self {
        Self {
            annotations: HashMap::new(),
            max_sequence_length,
            tokenizer: WordPunctTokenizer,
        }
    }

    pub fn insert(&mut self, example_id: impl Into<String>, annotations: Vec<SupportAnnotation>) {
        self.annotations.insert(example_id.into(), annotations);
    }

    pub fn with(mut self, example_id: impl Into<String>, annotations: Vec<SupportAnnotation>) -> Self {
        self.insert(example_id, annotations);
        self
    }
}

/// Annotation-replay scorer for a single example.
pub fn annotation_oracle(
    example_id: impl Into<String>,
    annotations: Vec<SupportAnnotation>,
    max_sequence_length: usize,
) -> AnnotationScorer {
    AnnotationScorer::new(max_sequence_length).with(example_id, annotations)
}

impl SupportScorer for AnnotationScorer {
    fn max_sequence_length(&self) -> usize {
        self.max_sequence_length
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
        let id = &input.example.example_id;
        let anns = self
            .annotations
            .get(id)
            .ok_or_else(|| ScorerError(format!("no annotations for example {id:?}")))?;
        let evidence = resolve_evidence(input.example, anns).map_err(|e| ScorerError(e.to_string()))?;
        Ok(window_token_labels(input.example, &evidence, &input.window.context_range)
            .into_iter()
            .map(|l| l.as_probability())
            .collect())
    }
}

/// Wraps a scorer and blends its output with seeded uniform noise:
/// `p' = (1 - amplitude) * p + amplitude * u`.
///
/// The noise for a token depends only on the seed, the example id, the
/// window's context range, and the token index, so batching cannot change it.
#[derive(Debug, Clone)]
pub struct NoisyScorer<S> {
    pub inner: S,
    pub amplitude: f64,
    pub seed: u64,
}

impl<S> NoisyScorer<S> {
    pub fn new(inner: S, amplitude: f64, seed: u64) -> Self {
        Self {
            inner,
            amplitude: amplitude.clamp(0.0, 1.0),
            seed,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl<S: SupportScorer> SupportScorer for NoisyScorer<S> {
    fn max_sequence_length(&self) -> usize {
        self.inner.max_sequence_length()
    }

    fn reserved_special_tokens(&self) -> usize {
        self.inner.reserved_special_tokens()
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.inner.tokenizer()
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }

    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
        let row = self.inner.score_window(input)?;
        let r = &input.window.context_range;
        let key = self.seed
            ^ fnv1a(input.example.example_id.as_bytes())
            ^ (r.start as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (r.end as u64).rotate_left(32);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        Ok(row
            .into_iter()
            .map(|p| (1.0 - self.amplitude) * p + self.amplitude * rng.gen::<f64>())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize_example;
    use crate::types::{ContextRef, Document, RagExample};
    use crate::windowing::{build_windows, project_labels, WindowConfig};

    fn ex(ctx: &str, q: &str, r: &str) -> TokenizedExample {
        let e = RagExample {
            id: "e".into(),
            context: vec![Document::new("d", ctx)],
            question: q.into(),
            response: r.into(),
        };
        tokenize_example(&e, &WordPunctTokenizer).unwrap()
    }

    fn full_window(t: &TokenizedExample) -> Window {
        Window {
            index: 0,
            context_range: 0..t.context_len(),
        }
    }

    #[test]
    fn verbatim_sentence_is_supported() {
        let t = ex("The bridge opened in 1932 after delays.", "When?", "The bridge opened in 1932 after delays.");
        let w = full_window(&t);
        let row = lexical_overlap_oracle().score_window(WindowInput { example: &t, window: &w }).unwrap();
        assert!(row.iter().all(|p| *p == 1.0));
    }

    #[test]
    fn unrelated_sentence_is_unsupported() {
        let t = ex("The bridge opened in 1932.", "When?", "Penguins enjoy cold water.");
        let w = full_window(&t);
        let row = lexical_overlap_oracle().score_window(WindowInput { example: &t, window: &w }).unwrap();
        assert!(row.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn overlap_threshold_arithmetic() {
        // content words: alpha beta gamma delta epsilon
        let r = "alpha beta gamma delta epsilon";
        let three = ex("alpha beta gamma zeta", "q", r);
        let two = ex("alpha beta zeta", "q", r);
        let s = lexical_overlap_oracle();
        let w3 = full_window(&three);
        let w2 = full_window(&two);
        assert_eq!(s.score_window(WindowInput { example: &three, window: &w3 }).unwrap()[0], 1.0);
        assert_eq!(s.score_window(WindowInput { example: &two, window: &w2 }).unwrap()[0], 0.0);
    }

    #[test]
    fn question_is_not_evidence() {
        let t = ex("nothing relevant", "penguins enjoy cold water", "penguins enjoy cold water");
        let w = full_window(&t);
        let row = lexical_overlap_oracle().score_window(WindowInput { example: &t, window: &w }).unwrap();
        assert!(row.iter().all(|p| *p == 0.0));
    }

    fn scattered_evidence() -> (TokenizedExample, Vec<Window>, Vec<SupportAnnotation>) {
        let ctx = "Washington is the capital city. Filler words appear right here. Other filler words sit here. \
                   More unrelated filler sits here. Founded during year 1791 there. Final unrelated sentence sits here.";
        let t = ex(ctx, "What?", "Washington capital city. Founded 1791.");
        // Q=2, R=7 -> l=12: two context sentences (6 tokens each) per window
        let w = build_windows(&t, &WindowConfig::new(21)).unwrap();
        let anns = vec![
            SupportAnnotation::supported(0, [ContextRef::new(0, 0)]),
            SupportAnnotation::supported(1, [ContextRef::new(0, 4)]),
        ];
        (t, w, anns)
    }

    #[test]
    fn shape_and_batch_invariance() {
        let (t, w, _) = scattered_evidence();
        assert_eq!(w.len(), 3);
        let s = lexical_overlap_oracle();
        let m1 = score_example(&t, &w, &s, 1).unwrap();
        let m32 = score_example(&t, &w, &s, 32).unwrap();
        assert_eq!(m1.rows.len(), 3);
        assert!(m1.rows.iter().all(|r| r.len() == 7));
        assert_eq!(m1, m32);
        assert!(score_example(&t, &w, &s, 0).is_err());
    }

    #[test]
    fn lexical_oracle_row_pattern() {
        let (t, w, _) = scattered_evidence();
        let m = score_example(&t, &w, &lexical_overlap_oracle(), 2).unwrap();
        let a = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(m.rows, vec![a.to_vec(), vec![0.0; 7], b.to_vec()]);
    }

    #[test]
    fn annotation_oracle_replays_labels() {
        let (t, w, anns) = scattered_evidence();
        let labels = project_labels(&t, &anns, &w).unwrap();
        let m = score_example(&t, &w, &annotation_oracle("e", anns, 21), 1).unwrap();
        for (row, l) in m.rows.iter().zip(&labels) {
            let expect: Vec<f64> = l.token_labels.iter().map(|x| x.as_probability()).collect();
            assert_eq!(row, &expect);
        }
    }

    #[test]
    fn annotation_oracle_general_and_unsupported() {
        let (t, w, _) = scattered_evidence();
        let anns = vec![
            SupportAnnotation::generally_supported(0),
            SupportAnnotation::unsupported(1),
        ];
        let m = score_example(&t, &w, &annotation_oracle("e", anns, 21), 4).unwrap();
        for row in &m.rows {
            assert_eq!(row, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn annotation_oracle_dangling() {
        let (t, w, _) = scattered_evidence();
        let anns = vec![
            SupportAnnotation::supported(0, [ContextRef::new(3, 0)]),
            SupportAnnotation::unsupported(1),
        ];
        let err = score_example(&t, &w, &annotation_oracle("e", anns, 21), 1).unwrap_err();
        assert!(matches!(err, Error::ScorerFailure { window: 0, .. }));
    }

    struct Broken(usize);
    impl SupportScorer for Broken {
        fn max_sequence_length(&self) -> usize {
            512
        }
        fn tokenizer(&self) -> &dyn Tokenizer {
            &WordPunctTokenizer
        }
        fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
            if input.window.index == 2 {
                return Err(ScorerError("boom".into()));
            }
            Ok(vec![0.5; self.0])
        }
    }

    #[test]
    fn failures_carry_window_index() {
        let (t, w, _) = scattered_evidence();
        assert!(matches!(
            score_example(&t, &w, &Broken(7), 2),
            Err(Error::ScorerFailure { window: 2, .. })
        ));
        assert!(matches!(
            score_example(&t, &w, &Broken(3), 2),
            Err(Error::ShapeMismatch { window: 0, expected: 7, got: 3 })
        ));
    }

    #[test]
    fn noise_is_batch_independent_and_bounded() {
        let (t, w, _) = scattered_evidence();
        let s = NoisyScorer::new(lexical_overlap_oracle(), 0.3, 7);
        let a = score_example(&t, &w, &s, 1).unwrap();
        let b = score_example(&t, &w, &s, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
        assert!(a.rows[1].iter().all(|p| *p < 0.3));
    }
}
