//! Window construction over long contexts and window-conditional labels.
//!
//! Every window carries the full question and response plus a contiguous
//! slice of at most `l = L - Q - R - reserved` context tokens. Windows start
//! at `0, stride, 2*stride, ...` while the start is inside the context.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{index_annotations, SupportAnnotation, SupportKind, SupportLabel, TokenRange, TokenizedExample};

pub const MIN_SEQUENCE_LENGTH: usize = 16;

/// Advance between consecutive windows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stride {
    /// The window context capacity `l`: disjoint windows.
    #[default]
    Capacity,
    Tokens(usize),
    /// `floor(l * fraction)`, at least 1.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub max_sequence_length: usize,
    pub stride: Stride,
    pub reserved_special_tokens: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            max_sequence_length: 512,
            stride: Stride::Capacity,
            reserved_special_tokens: 0,
        }
    }
}

impl WindowConfig {
    pub fn new(max_sequence_length: usize) -> Self {
        Self {
            max_sequence_length,
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = Stride::Tokens(stride);
        self
    }

    pub fn with_stride_fraction(mut self, fraction: f64) -> Self {
        self.stride = Stride::Fraction(fraction);
        self
    }

    pub fn with_reserved(mut self, reserved: usize) -> Self {
        self.reserved_special_tokens = reserved;
        self
    }

    /// Context capacity `l` of one window for the given question and
    /// response lengths.
    pub fn context_capacity(&self, question_len: usize, response_len: usize) -> Result<usize> {
        if self.max_sequence_length < MIN_SEQUENCE_LENGTH {
            return Err(Error::InvalidConfig(format!(
                "max_sequence_length {} is below {MIN_SEQUENCE_LENGTH}",
                self.max_sequence_length
            )));
        }
        let fixed = question_len + response_len + self.reserved_special_tokens;
        if fixed >= self.max_sequence_length {
            return Err(Error::QuestionResponseTooLong {
                question: question_len,
                response: response_len,
                reserved: self.reserved_special_tokens,
                max_len: self.max_sequence_length,
            });
        }
        Ok(self.max_sequence_length - fixed)
    }

    pub fn resolve_stride(&self, capacity: usize) -> Result<usize> {
        let stride = match self.stride {
            Stride::Capacity => capacity,
            Stride::Tokens(s) => s,
            Stride::Fraction(f) if f > 0.0 && f <= 1.0 => ((capacity as f64 * f) as usize).max(1),
            Stride::Fraction(f) => {
                return Err(Error::InvalidConfig(format!("stride fraction {f} outside (0, 1]")))
            }
        };
        if stride == 0 || stride > capacity {
            return Err(Error::InvalidConfig(format!(
                "stride {stride} outside [1, {capacity}]"
            )));
        }
        Ok(stride)
    }
}

/// One scorer input: a context slice plus the full question and response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub context_range: TokenRange,
}

impl Window {
    pub fn context_len(&self) -> usize {
        self.context_range.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLabels {
    pub window_index: usize,
    pub token_labels: Vec<SupportLabel>,
}

/// Splits the context of `example` into windows.
///
/// Fails with `QuestionResponseTooLong` unless `Q + R + reserved < L`.
pub fn build_windows(example: &TokenizedExample, config: &WindowConfig) -> Result<Vec<Window>> {
    let capacity = config.context_capacity(example.question_len(), example.response_len())?;
    let stride = config.resolve_stride(capacity)?;
    Ok(window_ranges(example.context_len(), capacity, stride)
        .enumerate()
        .map(|(index, context_range)| Window {
            index,
            context_range,
        })
        .collect())
}

/// `ceil(C / stride)` ranges of length at most `capacity`; the last may be
/// short. A zero-length context still yields one empty window.
pub fn window_ranges(
    context_len: usize,
    capacity: usize,
    stride: usize,
) -> impl Iterator<Item = TokenRange> {
    let count = context_len.div_ceil(stride).max(1);
    (0..count).map(move |k| {
        let start = k * stride;
        start..(start + capacity).min(context_len)
    })
}

/// Projects sentence-level annotations onto each window.
///
/// A response token is supported in a window iff its sentence is generally
/// supported, or at least one cited context sentence shares a token with the
/// window's context range.
pub fn project_labels(
    example: &TokenizedExample,
    annotations: &[SupportAnnotation],
    windows: &[Window],
) -> Result<Vec<WindowLabels>> {
    let evidence = resolve_evidence(example, annotations)?;
    Ok(windows
        .iter()
        .map(|w| WindowLabels {
            window_index: w.index,
            token_labels: window_token_labels(example, &evidence, &w.context_range),
        })
        .collect())
}

/// Per-sentence evidence after reference resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Evidence {
    Everywhere,
    Ranges(Vec<TokenRange>),
    Nowhere,
}

impl Evidence {
    fn present_in(&self, range: &TokenRange) -> bool {
        match self {
            Evidence::Everywhere => true,
            Evidence::Nowhere => false,
            Evidence::Ranges(rs) => rs
                .iter()
                .any(|r| r.start < range.end && range.start < r.end),
        }
    }
}

pub(crate) fn resolve_evidence(
    example: &TokenizedExample,
    annotations: &[SupportAnnotation],
) -> Result<Vec<Evidence>> {
    let kinds = index_annotations(annotations, example.response_sentences.len())?;
    kinds
        .into_iter()
        .enumerate()
        .map(|(sentence, kind)| match kind {
            SupportKind::GenerallySupported => Ok(Evidence::Everywhere),
            SupportKind::Unsupported => Ok(Evidence::Nowhere),
            SupportKind::Supported(refs) => refs
                .iter()
                .map(|r| {
                    example
                        .context_sentence_range(r.doc, r.sentence)
                        .cloned()
                        .ok_or(Error::DanglingReference {
                            sentence,
                            doc: r.doc,
                            context_sentence: r.sentence,
                        })
                })
                .collect::<Result<Vec<_>>>()
                .map(Evidence::Ranges),
        })
        .collect()
}

pub(crate) fn window_token_labels(
    example: &TokenizedExample,
    evidence: &[Evidence],
    range: &TokenRange,
) -> Vec<SupportLabel> {
    let per_sentence: Vec<SupportLabel> = evidence
        .iter()
        .map(|e| SupportLabel::from_bool(e.present_in(range)))
        .collect();
    example
        .response_tokens
        .iter()
        .map(|t| per_sentence[t.sentence_index])
        .collect()
}

/// Token-wise OR across windows: a token is example-supported iff it is
/// supported in at least one window.
pub fn required_example_label(labels: &[WindowLabels]) -> Vec<SupportLabel> {
    let Some(first) = labels.first() else {
        return Vec::new();
    };
    let mut out = first.token_labels.clone();
    for wl in &labels[1..] {
        for (o, l) in out.iter_mut().zip(&wl.token_labels) {
            if *l == SupportLabel::Supported {
                *o = SupportLabel::Supported;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokenize_example, WhitespaceTokenizer};
    use crate::types::{ContextRef, Document, RagExample};

    fn words(n: usize, prefix: &str) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn tokenized(c: usize, q: usize, r: usize) -> TokenizedExample {
        let ex = RagExample {
            id: "t".into(),
            context: vec![Document::new("d", words(c, "c"))],
            question: words(q, "q"),
            response: words(r, "r"),
        };
        tokenize_example(&ex, &WhitespaceTokenizer).unwrap()
    }

    #[test]
    fn three_windows_with_short_tail() {
        let ex = tokenized(12, 3, 4);
        let w = build_windows(&ex, &WindowConfig::new(12)).unwrap_err();
        // L=12 is below the minimum sequence length
        assert!(matches!(w, Error::InvalidConfig(_)));

        // same arithmetic with reserved tokens lifting L past the minimum
        let cfg = WindowConfig::new(16).with_reserved(4);
        let ranges: Vec<_> = build_windows(&ex, &cfg)
            .unwrap()
            .into_iter()
            .map(|w| w.context_range)
            .collect();
        assert_eq!(ranges, vec![0..5, 5..10, 10..12]);
    }

    #[test]
    fn range_arithmetic_matches_example() {
        // L=12, Q=3, R=4 -> l=5 over C=12
        let r: Vec<_> = window_ranges(12, 5, 5).collect();
        assert_eq!(r, vec![0..5, 5..10, 10..12]);
        let r: Vec<_> = window_ranges(5, 5, 5).collect();
        assert_eq!(r, vec![0..5]);
    }

    #[test]
    fn overlapping_stride_enumeration() {
        // brute force: starts at multiples of the stride while inside C
        let (c, l, s) = (1000, 300, 150);
        let mut expected = Vec::new();
        let mut start = 0;
        while start < c {
            expected.push(start..(start + l).min(c));
            start += s;
        }
        let got: Vec<_> = window_ranges(c, l, s).collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 7);
        for t in 0..c {
            let n = got.iter().filter(|r| r.contains(&t)).count();
            assert!((1..=2).contains(&n), "token {t} in {n} windows");
        }
    }

    #[test]
    fn too_long_question_response() {
        let ex = tokenized(10, 8, 8);
        assert!(matches!(
            build_windows(&ex, &WindowConfig::new(16)),
            Err(Error::QuestionResponseTooLong { .. })
        ));
    }

    #[test]
    fn bad_stride() {
        let ex = tokenized(10, 2, 2);
        assert!(build_windows(&ex, &WindowConfig::new(16).with_stride(0)).is_err());
        assert!(build_windows(&ex, &WindowConfig::new(16).with_stride(13)).is_err());
        assert!(build_windows(&ex, &WindowConfig::new(16).with_stride(12)).is_ok());
    }

    /// Six context sentences of four tokens each; window capacity 8 puts two
    /// sentences in each of three windows.
    fn scattered() -> (TokenizedExample, Vec<Window>) {
        let ctx = "Washington is the capital. Filler text goes here. More filler text here. \
                   Yet more filler here. It was founded 1791. Final filler sentence here.";
        let ex = RagExample {
            id: "scattered".into(),
            context: vec![Document::new("d", ctx)],
            question: "What is Washington?".into(),
            response: "The capital city. Founded in 1791.".into(),
        };
        let t = tokenize_example(&ex, &WhitespaceTokenizer).unwrap();
        // Q=3, R=6 -> l=8
        let w = build_windows(&t, &WindowConfig::new(17)).unwrap();
        (t, w)
    }

    #[test]
    fn scattered_evidence_projection() {
        let (t, w) = scattered();
        assert_eq!(w.len(), 3);
        let anns = vec![
            SupportAnnotation::supported(0, [ContextRef::new(0, 0)]),
            SupportAnnotation::supported(1, [ContextRef::new(0, 4)]),
        ];
        let labels = project_labels(&t, &anns, &w).unwrap();
        use SupportLabel::*;
        assert_eq!(labels[0].token_labels, [Supported, Supported, Supported, Unsupported, Unsupported, Unsupported]);
        assert_eq!(labels[1].token_labels, [Unsupported; 6]);
        assert_eq!(labels[2].token_labels, [Unsupported, Unsupported, Unsupported, Supported, Supported, Supported]);
        assert_eq!(required_example_label(&labels), [Supported; 6]);
    }

    #[test]
    fn generally_supported_everywhere() {
        let (t, w) = scattered();
        let anns = vec![
            SupportAnnotation::generally_supported(0),
            SupportAnnotation::unsupported(1),
        ];
        let labels = project_labels(&t, &anns, &w).unwrap();
        for l in &labels {
            assert_eq!(&l.token_labels[..3], [SupportLabel::Supported; 3]);
            assert_eq!(&l.token_labels[3..], [SupportLabel::Unsupported; 3]);
        }
    }

    #[test]
    fn straddling_evidence_touches_both_windows() {
        // one 10-token sentence over windows of capacity 6
        let ex = RagExample {
            id: "s".into(),
            context: vec![Document::new("d", "a b c d e f g h i j.")],
            question: "q".into(),
            response: "a j.".into(),
        };
        let t = tokenize_example(&ex, &WhitespaceTokenizer).unwrap();
        let w = build_windows(&t, &WindowConfig::new(16).with_reserved(7)).unwrap();
        assert_eq!(w.iter().map(|w| w.context_range.clone()).collect::<Vec<_>>(), vec![0..6, 6..10]);
        let anns = vec![SupportAnnotation::supported(0, [ContextRef::new(0, 0)])];
        let labels = project_labels(&t, &anns, &w).unwrap();
        assert!(labels
            .iter()
            .all(|l| l.token_labels.iter().all(|x| *x == SupportLabel::Supported)));
    }

    #[test]
    fn dangling_reference() {
        let (t, w) = scattered();
        let anns = vec![
            SupportAnnotation::supported(0, [ContextRef::new(0, 99)]),
            SupportAnnotation::unsupported(1),
        ];
        assert!(matches!(
            project_labels(&t, &anns, &w),
            Err(Error::DanglingReference { sentence: 0, doc: 0, context_sentence: 99 })
        ));
    }

    #[test]
    fn or_over_windows() {
        use SupportLabel::*;
        let single = vec![WindowLabels {
            window_index: 0,
            token_labels: vec![Supported, Unsupported],
        }];
        assert_eq!(required_example_label(&single), [Supported, Unsupported]);
        let none = vec![
            WindowLabels { window_index: 0, token_labels: vec![Unsupported] },
            WindowLabels { window_index: 1, token_labels: vec![Unsupported] },
        ];
        assert_eq!(required_example_label(&none), [Unsupported]);
    }
}
