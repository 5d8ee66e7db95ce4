//! Annotation with consistency checks between response-level and
//! sentence-level judgements, re-annotating on conflict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::RagRecord;
use crate::error::{Error, Result};
use crate::text::segment_sentences;
use crate::types::{index_annotations, SupportAnnotation, SupportKind};

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;

/// What the annotator sees: the question plus pre-split sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotationRequest<'a> {
    pub record_id: &'a str,
    pub question: &'a str,
    /// `[doc][sentence]`
    pub context_sentences: Vec<Vec<&'a str>>,
    pub response_sentences: Vec<&'a str>,
}

impl<'a> AnnotationRequest<'a> {
    pub fn for_record(record: &'a RagRecord) -> Self {
        let slice = |text: &'a str| -> Vec<&'a str> {
            segment_sentences(text)
                .into_iter()
                .map(|s| &text[s.start..s.end])
                .collect()
        };
        Self {
            record_id: &record.example.id,
            question: &record.example.question,
            context_sentences: record.example.context.iter().map(|d| slice(&d.text)).collect(),
            response_sentences: slice(&record.example.response),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationOutcome {
    pub response_level_supported: bool,
    pub annotations: Vec<SupportAnnotation>,
    /// Sentences the annotator judged only partially supported.
    #[serde(default)]
    pub partially_supported: Vec<usize>,
}

#[derive(Debug, Clone, Error)]
pub enum AnnotatorError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed annotation: {0}")]
    Malformed(String),
}

pub trait AnnotatorClient: Send + Sync {
    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<AnnotationOutcome, AnnotatorError>;

    /// Upper bound on concurrent `annotate` calls.
    fn max_concurrency(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictReason {
    /// Response judged supported, but this sentence has no support.
    UnsupportedSentenceInSupportedResponse,
    /// Response judged unsupported, yet every sentence is supported.
    SupportedSentencesInUnsupportedResponse,
    /// Sentence flagged partially supported but labeled supported.
    PartialSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub sentence_index: Option<usize>,
    pub reason: ConflictReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconciliationStatus {
    Clean,
    ResolvedPartial,
    Conflicting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconciliationReport {
    pub record_id: String,
    pub attempts: usize,
    pub status: ReconciliationStatus,
    /// Conflicts left after the final attempt, before resolution.
    pub conflicts: Vec<Conflict>,
}

/// Compares the response-level judgement with the sentence annotations.
pub fn detect_conflicts(record: &RagRecord) -> Result<Vec<Conflict>> {
    let missing = || Error::MissingAnnotations(record.example.id.clone());
    let anns = record.annotations.as_ref().ok_or_else(missing)?;
    let response_supported = record.response_level_supported.ok_or_else(missing)?;
    let kinds = index_annotations(anns, record.response_sentence_count())?;

    let mut out = Vec::new();
    if response_supported {
        for (i, k) in kinds.iter().enumerate() {
            if !k.is_supported() {
                out.push(Conflict {
                    sentence_index: Some(i),
                    reason: ConflictReason::UnsupportedSentenceInSupportedResponse,
                });
            }
        }
    } else if kinds.iter().all(|k| k.is_supported()) {
        out.push(Conflict {
            sentence_index: None,
            reason: ConflictReason::SupportedSentencesInUnsupportedResponse,
        });
    }
    for &i in &record.partially_supported {
        if kinds.get(i).is_some_and(|k| k.is_supported()) {
            out.push(Conflict {
                sentence_index: Some(i),
                reason: ConflictReason::PartialSupport,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconcileOptions {
    pub max_attempts: usize,
    /// Extra tries per attempt when the client fails at the transport level
    /// or returns malformed output.
    pub transport_retries: usize,
}

impl Default for ReconcileOptions {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            transport_retries: 2,
        }
    }
}

fn check_outcome(outcome: &AnnotationOutcome, sentences: usize) -> Result<(), AnnotatorError> {
    index_annotations(&outcome.annotations, sentences)
        .map(|_| ())
        .map_err(|e| AnnotatorError::Malformed(e.to_string()))
}

fn annotate_once(
    record: &RagRecord,
    client: &dyn AnnotatorClient,
    retries: usize,
) -> Result<AnnotationOutcome> {
    let request = AnnotationRequest::for_record(record);
    let sentences = request.response_sentences.len();
    let mut last = None;
    for _ in 0..=retries {
        match client
            .annotate(&request)
            .and_then(|o| check_outcome(&o, sentences).map(|_| o))
        {
            Ok(o) => return Ok(o),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::AnnotatorFailure(format!(
        "{}: {}",
        record.example.id,
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Annotates `record` until the judgements agree or `max_attempts` is spent.
/// Remaining conflicts are resolved towards "unsupported" on both the
/// sentence and the response level.
pub fn reconcile(
    record: &RagRecord,
    client: &dyn AnnotatorClient,
    options: &ReconcileOptions,
) -> Result<(RagRecord, ReconciliationReport)> {
    if options.max_attempts == 0 {
        return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
    }
    let mut current = record.clone();
    let mut conflicts = Vec::new();
    for attempt in 1..=options.max_attempts {
        let outcome = annotate_once(record, client, options.transport_retries)?;
        current.response_level_supported = Some(outcome.response_level_supported);
        current.annotations = Some(outcome.annotations);
        current.partially_supported = outcome.partially_supported;
        conflicts = detect_conflicts(&current)?;
        if conflicts.is_empty() {
            return Ok((
                current,
                ReconciliationReport {
                    record_id: record.example.id.clone(),
                    attempts: attempt,
                    status: ReconciliationStatus::Clean,
                    conflicts,
                },
            ));
        }
    }

    resolve(&mut current, &conflicts);
    Ok((
        current,
        ReconciliationReport {
            record_id: record.example.id.clone(),
            attempts: options.max_attempts,
            status: ReconciliationStatus::ResolvedPartial,
            conflicts,
        },
    ))
}

/// Forces conflicting sentences to unsupported. When the response as a whole
/// is judged unsupported without pointing at a sentence, every sentence with
/// specific evidence is demoted; if there is none, every sentence is.
fn resolve(record: &mut RagRecord, conflicts: &[Conflict]) {
    let Some(anns) = record.annotations.as_mut() else {
        return;
    };
    let mut demote = vec![false; anns.len()];
    let position = |anns: &[SupportAnnotation], s: usize| {
        anns.iter().position(|a| a.response_sentence_index == s)
    };
    for c in conflicts {
        match c.sentence_index {
            Some(s) => {
                if let Some(p) = position(anns, s) {
                    demote[p] = true;
                }
            }
            None => {
                let specific: Vec<usize> = anns
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| matches!(a.kind, SupportKind::Supported(_)))
                    .map(|(p, _)| p)
                    .collect();
                if specific.is_empty() {
                    demote.iter_mut().for_each(|d| *d = true);
                } else {
                    specific.into_iter().for_each(|p| demote[p] = true);
                }
            }
        }
    }
    for (a, d) in anns.iter_mut().zip(demote) {
        if d {
            a.kind = SupportKind::Unsupported;
        }
    }
    record.response_level_supported = Some(anns.iter().all(|a| a.kind.is_supported()));
}

/// Reconciles many records with at most `client.max_concurrency()` calls in
/// flight. Output order matches input order.
pub fn reconcile_all(
    records: &[RagRecord],
    client: &dyn AnnotatorClient,
    options: &ReconcileOptions,
) -> Result<Vec<Result<(RagRecord, ReconciliationReport)>>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(client.max_concurrency().max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| {
        records
            .par_iter()
            .map(|r| reconcile(r, client, options))
            .collect()
    }))
}
