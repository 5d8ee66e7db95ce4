//! Training-time augmentations with label adjustment.
//!
//! None of these can turn an unsupported sentence into a supported one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::RagRecord;
use crate::text::segment_sentences;
use crate::types::{Document, SupportAnnotation, SupportKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropInsertConfig {
    pub drop_probability: f64,
    pub insert_probability: f64,
}

impl Default for DropInsertConfig {
    fn default() -> Self {
        Self {
            drop_probability: 0.5,
            insert_probability: 0.5,
        }
    }
}

fn refresh_response_level(record: &mut RagRecord) {
    if let (Some(prev), Some(anns)) = (record.response_level_supported, &record.annotations) {
        record.response_level_supported = Some(prev && anns.iter().all(|a| a.kind.is_supported()));
    }
}

/// Removes context document `doc`. References into it disappear, later
/// documents shift down, and sentences left without evidence become
/// unsupported.
pub fn drop_document(record: &RagRecord, doc: usize) -> RagRecord {
    let mut out = record.clone();
    if doc >= out.example.context.len() || out.example.context.len() < 2 {
        return out;
    }
    out.example.context.remove(doc);
    if let Some(anns) = out.annotations.as_mut() {
        for a in anns.iter_mut() {
            if let SupportKind::Supported(refs) = &mut a.kind {
                refs.retain(|r| r.doc != doc);
                for r in refs.iter_mut() {
                    if r.doc > doc {
                        r.doc -= 1;
                    }
                }
                if refs.is_empty() {
                    a.kind = SupportKind::Unsupported;
                }
            }
        }
    }
    refresh_response_level(&mut out);
    out
}

/// Appends a foreign document. Labels are untouched.
pub fn insert_document(record: &RagRecord, mut doc: Document) -> RagRecord {
    let mut out = record.clone();
    if out.example.context.iter().any(|d| d.id == doc.id) {
        doc.id = format!("{}#inserted", doc.id);
    }
    out.example.context.push(doc);
    out
}

/// Randomly drops one of a record's documents and/or appends a document
/// borrowed from another record of the batch. Deterministic in `seed`.
pub fn transform_drop_insert(records: &[RagRecord], seed: u64, config: &DropInsertConfig) -> Vec<RagRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = records.len();
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut out = rec.clone();
            if out.example.context.len() > 1 && rng.gen_bool(config.drop_probability) {
                let d = rng.gen_range(0..out.example.context.len());
                out = drop_document(&out, d);
            }
            if n >= 2 && rng.gen_bool(config.insert_probability) {
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                if let Some(doc) = records[j].example.context.choose(&mut rng) {
                    out = insert_document(&out, doc.clone());
                }
            }
            out
        })
        .collect()
}

/// A random cyclic permutation (Sattolo), which has no fixed points.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Moves every (question, response) pair to a different record's context.
/// The moved response is no longer grounded, so all its sentences become
/// unsupported. Batches smaller than two are returned unchanged.
pub fn transform_shuffle_qr(records: &[RagRecord], seed: u64) -> Vec<RagRecord> {
    if records.len() < 2 {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = derangement(records.len(), &mut rng);
    records
        .iter()
        .zip(&perm)
        .map(|(rec, &src)| {
            let donor = &records[src];
            let mut out = rec.clone();
            out.example.id = format!("{}~qr~{}", rec.example.id, donor.example.id);
            out.example.question = donor.example.question.clone();
            out.example.response = donor.example.response.clone();
            let n = segment_sentences(&out.example.response).len();
            out.annotations = Some((0..n).map(SupportAnnotation::unsupported).collect());
            out.response_level_supported = Some(false);
            out.partially_supported.clear();
            out
        })
        .collect()
}
