//! Seeded generator of annotated RAG records with scattered evidence.
//!
//! Contexts are filler sentences built from one pool of pseudo-words with a
//! few evidence sentences from a disjoint pool placed at random positions.
//! Supported response sentences restate evidence; a hallucinated response
//! swaps one of them for a sentence whose words never occur in the context,
//! so clean and hallucinated responses have the same length.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{RagRecord, Split, KNOWN_DOMAINS};
use crate::types::{ContextRef, Document, RagExample, SupportAnnotation};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "te", "zo", "ba", "ne", "vi", "du", "sa", "po", "gu", "fe", "ri", "ho",
];
const FILLER_WORDS: usize = 1024;
const TOTAL_WORDS: usize = 4096;

/// Sentence made only of stopwords, annotated as generally supported.
pub const GENERAL_SENTENCE: &str = "That is what it is.";

/// Deterministic pseudo-word for `index < 4096`; distinct indices give
/// distinct words.
pub fn pseudo_word(index: usize) -> String {
    let mut i = index % TOTAL_WORDS;
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        w.push_str(SYLLABLES[i % 16]);
        i /= 16;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub records: usize,
    /// Target context length in word-punctuation tokens.
    pub context_tokens: Range<usize>,
    /// Sample context lengths log-uniformly instead of uniformly.
    pub log_uniform_length: bool,
    pub documents: Range<usize>,
    /// Evidence sentences restated by the response.
    pub evidence_sentences: Range<usize>,
    pub hallucination_rate: f64,
    /// Probability of adding a generally supported sentence.
    pub general_sentence_rate: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            records: 100,
            context_tokens: 200..2000,
            log_uniform_length: false,
            documents: 1..4,
            evidence_sentences: 1..4,
            hallucination_rate: 0.5,
            general_sentence_rate: 0.3,
            seed: 0,
            id_prefix: "syn".into(),
        }
    }
}

/// Filler sentence of `n` content words; `n + 3` tokens.
fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    let words: Vec<String> = (0..n).map(|_| pseudo_word(rng.gen_range(0..FILLER_WORDS))).collect();
    format!("The {} and {}.", words[..n / 2].join(" "), words[n / 2..].join(" "))
}

/// Sentence over five given evidence words; 9 tokens.
fn fact(words: &[String]) -> String {
    format!(
        "The {} {} of {} {} was {}.",
        words[0], words[1], words[2], words[3], words[4]
    )
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

pub fn generate_record(rng: &mut ChaCha8Rng, config: &SyntheticConfig, index: usize) -> RagRecord {
    let target = if config.log_uniform_length {
        let (lo, hi) = (config.context_tokens.start.max(1) as f64, config.context_tokens.end as f64);
        (lo * (hi / lo).powf(rng.gen::<f64>())) as usize
    } else {
        rng.gen_range(config.context_tokens.clone())
    };
    let n_docs = rng.gen_range(config.documents.clone()).max(1);
    let n_evidence = rng.gen_range(config.evidence_sentences.clone()).max(1);
    let hallucinated = rng.gen_bool(config.hallucination_rate);

    let mut evidence_pool: Vec<usize> = (FILLER_WORDS..TOTAL_WORDS).collect();
    evidence_pool.shuffle(rng);
    let mut fresh = evidence_pool.into_iter().map(pseudo_word);
    let facts: Vec<Vec<String>> = (0..n_evidence)
        .map(|_| fresh.by_ref().take(5).collect())
        .collect();

    // filler sentences up to the target length, then evidence dropped in
    let mut sentences: Vec<(String, Option<usize>)> = Vec::new();
    let mut tokens = n_evidence * 9;
    while tokens < target {
        let n = rng.gen_range(4..12);
        sentences.push((filler(rng, n), None));
        tokens += n + 3;
    }
    for (f, words) in facts.iter().enumerate() {
        let at = rng.gen_range(0..=sentences.len());
        sentences.insert(at, (fact(words), Some(f)));
    }

    // split into documents of near-equal sentence counts
    let n_docs = n_docs.min(sentences.len());
    let per_doc = sentences.len().div_ceil(n_docs);
    let mut documents = Vec::new();
    let mut fact_refs = vec![ContextRef::new(0, 0); n_evidence];
    for (d, chunk) in sentences.chunks(per_doc).enumerate() {
        let text: Vec<&str> = chunk.iter().map(|(s, _)| s.as_str()).collect();
        for (s, (_, f)) in chunk.iter().enumerate() {
            if let Some(f) = f {
                fact_refs[*f] = ContextRef::new(d, s);
            }
        }
        documents.push(Document::new(format!("doc{d}"), text.join(" ")));
    }

    let mut response: Vec<(String, SupportAnnotationKind)> = facts
        .iter()
        .enumerate()
        .map(|(f, words)| (fact(words), SupportAnnotationKind::Cites(fact_refs[f])))
        .collect();
    if rng.gen_bool(config.general_sentence_rate) {
        response.insert(0, (GENERAL_SENTENCE.to_string(), SupportAnnotationKind::General));
    }
    if hallucinated {
        let words: Vec<String> = fresh.by_ref().take(5).collect();
        let candidates: Vec<usize> = response
            .iter()
            .enumerate()
            .filter(|(_, (_, k))| matches!(k, SupportAnnotationKind::Cites(_)))
            .map(|(i, _)| i)
            .collect();
        let at = *candidates.choose(rng).expect("at least one evidence sentence");
        response[at] = (fact(&words), SupportAnnotationKind::None);
    }
    let annotations = response
        .iter()
        .enumerate()
        .map(|(i, (_, k))| match k {
            SupportAnnotationKind::Cites(r) => SupportAnnotation::supported(i, [*r]),
            SupportAnnotationKind::General => SupportAnnotation::generally_supported(i),
            SupportAnnotationKind::None => SupportAnnotation::unsupported(i),
        })
        .collect();

    let question = format!("What was the {} {}?", facts[0][0], facts[0][1]);
    let text: Vec<String> = response.into_iter().map(|(s, _)| s).collect();
    let domain = KNOWN_DOMAINS[index % KNOWN_DOMAINS.len()];
    let mut rec = RagRecord::new(
        RagExample {
            id: format!("{}-{index:05}", config.id_prefix),
            context: documents,
            question: capitalize(&question),
            response: text.join(" "),
        },
        domain,
        Split::Test,
    )
    .with_annotations(annotations);
    rec.generator = Some("synthetic".into());
    rec
}

enum SupportAnnotationKind {
    Cites(ContextRef),
    General,
    None,
}

pub fn generate(config: &SyntheticConfig) -> Vec<RagRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.records)
        .map(|i| generate_record(&mut rng, config, i))
        .collect()
}

/// Equal numbers of records with short (under 5k), medium (5k to 16k) and
/// long (over 16k) contexts. Short lengths are log-uniform so that many of
/// them fit a single 512-token window.
pub fn length_bucketed(per_bucket: usize, seed: u64) -> Vec<RagRecord> {
    [(100..4800, true), (5400..15500, false), (16500..24000, false)]
        .into_iter()
        .enumerate()
        .flat_map(|(b, (context_tokens, log_uniform_length))| {
            generate(&SyntheticConfig {
                records: per_bucket,
                context_tokens,
                log_uniform_length,
                evidence_sentences: 2..4,
                seed: seed.wrapping_add(b as u64),
                id_prefix: format!("len{b}"),
                ..SyntheticConfig::default()
            })
        })
        .collect()
}
