//! RAG QA records: storage, annotation reconciliation and augmentation.

pub mod chat;
pub mod prompts;
pub mod reconcile;
pub mod synthetic;
pub mod record;
pub mod transform;

pub use chat::{ChatAnnotator, ChatAnnotatorConfig};
pub use prompts::PromptTemplates;
pub use reconcile::{
    detect_conflicts, reconcile, reconcile_all, AnnotationOutcome, AnnotationRequest,
    AnnotatorClient, AnnotatorError, Conflict, ConflictReason, ReconcileOptions,
    ReconciliationReport, ReconciliationStatus,
};
pub use synthetic::{generate as generate_synthetic, length_bucketed, SyntheticConfig};
pub use record::{load, read_jsonl, save, write_jsonl, RagRecord, Split, KNOWN_DOMAINS};
pub use transform::{transform_drop_insert, transform_shuffle_qr, DropInsertConfig};
