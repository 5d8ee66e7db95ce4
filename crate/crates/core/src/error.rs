use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid example: {0}")]
    InvalidExample(String),

    #[error("{part} tokenized to zero tokens")]
    EmptyAfterTokenization { part: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "question ({question}) + response ({response}) + reserved ({reserved}) tokens do not fit \
         max sequence length {max_len}"
    )]
    QuestionResponseTooLong {
        question: usize,
        response: usize,
        reserved: usize,
        max_len: usize,
    },

    #[error("response sentence {sentence} cites missing context sentence (doc {doc}, sentence {context_sentence})")]
    DanglingReference {
        sentence: usize,
        doc: usize,
        context_sentence: usize,
    },

    #[error("no annotation for response sentence {0}")]
    MissingAnnotation(usize),

    #[error("record {0} has no annotations")]
    MissingAnnotations(String),

    #[error("scorer failed on window {window}: {message}")]
    ScorerFailure { window: usize, message: String },

    #[error("scorer returned {got} probabilities for window {window}, expected {expected}")]
    ShapeMismatch {
        window: usize,
        expected: usize,
        got: usize,
    },

    #[error("model runtime: {0}")]
    ModelRuntime(String),

    #[error("support matrix has no rows")]
    EmptyMatrix,

    #[error("annotator failed: {0}")]
    AnnotatorFailure(String),

    #[error("labels contain only one class")]
    DegenerateLabels,

    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
