//! Domain types shared by every stage of the detector.
//!
//! All character spans are half-open byte offsets into the string they were
//! cut from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open byte range `[start, end)`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// One retrieval-augmented QA instance: the unit of detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagExample {
    pub id: String,
    pub context: Vec<Document>,
    pub question: String,
    pub response: String,
}

impl RagExample {
    pub fn validate(&self) -> Result<()> {
        if self.context.is_empty() {
            return Err(Error::InvalidExample(format!(
                "{}: at least one context document is required",
                self.id
            )));
        }
        if let Some(doc) = self.context.iter().find(|d| d.text.trim().is_empty()) {
            return Err(Error::InvalidExample(format!(
                "{}: document {:?} is empty",
                self.id, doc.id
            )));
        }
        if self.question.trim().is_empty() {
            return Err(Error::InvalidExample(format!("{}: empty question", self.id)));
        }
        if self.response.trim().is_empty() {
            return Err(Error::InvalidExample(format!("{}: empty response", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextToken {
    pub text: String,
    pub doc_index: usize,
    pub span: Span,
    /// Sentence index within `doc_index`.
    pub sentence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseToken {
    pub text: String,
    pub span: Span,
    pub sentence_index: usize,
}

/// Token range `[start, end)` into `TokenizedExample::context_tokens`.
pub type TokenRange = std::ops::Range<usize>;

/// A `RagExample` after segmentation and tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedExample {
    pub example_id: String,
    pub context_tokens: Vec<ContextToken>,
    pub question_tokens: Vec<String>,
    pub response_tokens: Vec<ResponseToken>,
    /// `[doc][sentence]` -> range of context tokens belonging to that sentence.
    pub context_sentence_tokens: Vec<Vec<TokenRange>>,
    pub response_sentences: Vec<SentenceSpan>,
}

impl TokenizedExample {
    /// Context token count `C`.
    pub fn context_len(&self) -> usize {
        self.context_tokens.len()
    }

    /// Question token count `Q`.
    pub fn question_len(&self) -> usize {
        self.question_tokens.len()
    }

    /// Response token count `R`.
    pub fn response_len(&self) -> usize {
        self.response_tokens.len()
    }

    pub fn context_sentence_range(&self, doc: usize, sentence: usize) -> Option<&TokenRange> {
        self.context_sentence_tokens.get(doc)?.get(sentence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "doc_index")]
pub enum SentenceSource {
    Context(usize),
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub index: usize,
    pub span: Span,
    pub source: SentenceSource,
}

/// `(doc_index, sentence_index)` of a context sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct ContextRef {
    pub doc: usize,
    pub sentence: usize,
}

impl ContextRef {
    pub fn new(doc: usize, sentence: usize) -> Self {
        Self { doc, sentence }
    }
}

impl From<[usize; 2]> for ContextRef {
    fn from([doc, sentence]: [usize; 2]) -> Self {
        Self { doc, sentence }
    }
}

impl From<ContextRef> for [usize; 2] {
    fn from(r: ContextRef) -> Self {
        [r.doc, r.sentence]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupportKind {
    Supported(Vec<ContextRef>),
    GenerallySupported,
    Unsupported,
}

impl SupportKind {
    /// True for anything other than `Unsupported`.
    pub fn is_supported(&self) -> bool {
        !matches!(self, SupportKind::Unsupported)
    }
}

/// Support judgement for one response sentence.
///
/// Serialized flat as `{"sentence": 0, "kind": "supported", "refs": [[0, 2]]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotation", into = "RawAnnotation")]
pub struct SupportAnnotation {
    pub response_sentence_index: usize,
    pub kind: SupportKind,
}

impl SupportAnnotation {
    pub fn supported(sentence: usize, refs: impl IntoIterator<Item = ContextRef>) -> Self {
        Self {
            response_sentence_index: sentence,
            kind: SupportKind::Supported(refs.into_iter().collect()),
        }
    }

    pub fn generally_supported(sentence: usize) -> Self {
        Self {
            response_sentence_index: sentence,
            kind: SupportKind::GenerallySupported,
        }
    }

    pub fn unsupported(sentence: usize) -> Self {
        Self {
            response_sentence_index: sentence,
            kind: SupportKind::Unsupported,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    Supported,
    GenerallySupported,
    Unsupported,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    sentence: usize,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    refs: Vec<ContextRef>,
}

impl TryFrom<RawAnnotation> for SupportAnnotation {
    type Error = String;

    fn try_from(raw: RawAnnotation) -> std::result::Result<Self, String> {
        let kind = match raw.kind {
            RawKind::Supported if raw.refs.is_empty() => {
                return Err(format!(
                    "sentence {}: supported annotation needs at least one ref",
                    raw.sentence
                ))
            }
            RawKind::Supported => SupportKind::Supported(raw.refs),
            RawKind::GenerallySupported => SupportKind::GenerallySupported,
            RawKind::Unsupported => SupportKind::Unsupported,
        };
        Ok(Self {
            response_sentence_index: raw.sentence,
            kind,
        })
    }
}

impl From<SupportAnnotation> for RawAnnotation {
    fn from(a: SupportAnnotation) -> Self {
        let (kind, refs) = match a.kind {
            SupportKind::Supported(refs) => (RawKind::Supported, refs),
            SupportKind::GenerallySupported => (RawKind::GenerallySupported, Vec::new()),
            SupportKind::Unsupported => (RawKind::Unsupported, Vec::new()),
        };
        Self {
            sentence: a.response_sentence_index,
            kind,
            refs,
        }
    }
}

/// Binary token label used for window-conditional training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportLabel {
    Supported,
    Unsupported,
}

impl SupportLabel {
    pub fn from_bool(supported: bool) -> Self {
        if supported {
            SupportLabel::Supported
        } else {
            SupportLabel::Unsupported
        }
    }

    pub fn as_probability(self) -> f64 {
        match self {
            SupportLabel::Supported => 1.0,
            SupportLabel::Unsupported => 0.0,
        }
    }
}

/// Checks that `annotations` hold exactly one entry per response sentence and
/// returns them indexed by sentence.
pub fn index_annotations(
    annotations: &[SupportAnnotation],
    sentence_count: usize,
) -> Result<Vec<&SupportKind>> {
    let mut by_sentence: Vec<Option<&SupportKind>> = vec![None; sentence_count];
    for a in annotations {
        let slot = by_sentence
            .get_mut(a.response_sentence_index)
            .ok_or_else(|| {
                Error::InvalidExample(format!(
                    "annotation for sentence {} but response has {sentence_count} sentences",
                    a.response_sentence_index
                ))
            })?;
        if slot.is_some() {
            return Err(Error::InvalidExample(format!(
                "duplicate annotation for sentence {}",
                a.response_sentence_index
            )));
        }
        if let SupportKind::Supported(refs) = &a.kind {
            if refs.is_empty() {
                return Err(Error::InvalidExample(format!(
                    "supported annotation for sentence {} has no refs",
                    a.response_sentence_index
                )));
            }
        }
        *slot = Some(&a.kind);
    }
    by_sentence
        .into_iter()
        .enumerate()
        .map(|(i, k)| k.ok_or(Error::MissingAnnotation(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_json_shape() {
        let a = SupportAnnotation::supported(1, [ContextRef::new(0, 2), ContextRef::new(1, 0)]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"sentence":1,"kind":"supported","refs":[[0,2],[1,0]]}"#);
        let back: SupportAnnotation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);

        let g = serde_json::to_string(&SupportAnnotation::generally_supported(0)).unwrap();
        assert_eq!(g, r#"{"sentence":0,"kind":"generally_supported"}"#);
    }

    #[test]
    fn supported_without_refs_is_rejected() {
        let err = serde_json::from_str::<SupportAnnotation>(r#"{"sentence":0,"kind":"supported"}"#);
        assert!(err.is_err());
    }

    #[test]
    fn index_annotations_requires_full_coverage() {
        let anns = vec![SupportAnnotation::unsupported(0)];
        assert!(matches!(
            index_annotations(&anns, 2),
            Err(Error::MissingAnnotation(1))
        ));
        let dup = vec![
            SupportAnnotation::unsupported(0),
            SupportAnnotation::generally_supported(0),
        ];
        assert!(index_annotations(&dup, 1).is_err());
    }

    #[test]
    fn example_validation() {
        let mut ex = RagExample {
            id: "x".into(),
            context: vec![Document::new("d", "text")],
            question: "q?".into(),
            response: "r.".into(),
        };
        assert!(ex.validate().is_ok());
        ex.context[0].text = "  \n".into();
        assert!(ex.validate().is_err());
        ex.context.clear();
        assert!(ex.validate().is_err());
    }
}
