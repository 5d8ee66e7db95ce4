use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::segment_sentences;
use crate::types::{index_annotations, RagExample, SupportAnnotation, SupportKind};

/// Industry verticals of the reference QA corpus. Free-form domains are
/// accepted too.
pub const KNOWN_DOMAINS: &[&str] = &[
    "customer support",
    "finance",
    "biomedical research",
    "legal",
    "general knowledge",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagRecord {
    #[serde(flatten)]
    pub example: RagExample,
    pub domain: String,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_level_supported: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<SupportAnnotation>>,
    /// Response sentences the annotator flagged as only partially supported.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partially_supported: Vec<usize>,
}

impl RagRecord {
    pub fn new(example: RagExample, domain: impl Into<String>, split: Split) -> Self {
        Self {
            example,
            domain: domain.into(),
            split,
            generator: None,
            response_level_supported: None,
            annotations: None,
            partially_supported: Vec::new(),
        }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn id(&self) -> &str {
        &self.example.id
    }

    pub fn with_annotations(mut self, annotations: Vec<SupportAnnotation>) -> Self {
        self.response_level_supported = Some(annotations.iter().all(|a| a.kind.is_supported()));
        self.annotations = Some(annotations);
        self
    }

    pub fn response_sentence_count(&self) -> usize {
        segment_sentences(&self.example.response).len()
    }

    /// Ground-truth example label: hallucinated iff any response sentence is
    /// unsupported.
    pub fn is_hallucinated(&self) -> Result<bool> {
        let anns = self
            .annotations
            .as_ref()
            .ok_or_else(|| Error::MissingAnnotations(self.example.id.clone()))?;
        Ok(anns.iter().any(|a| a.kind == SupportKind::Unsupported))
    }

    /// Checks the example and, when present, that annotations cover every
    /// response sentence and cite existing context sentences.
    pub fn validate(&self) -> Result<()> {
        self.example.validate()?;
        let Some(anns) = &self.annotations else {
            return Ok(());
        };
        let kinds = index_annotations(anns, self.response_sentence_count())?;
        let doc_sentences: Vec<usize> = self
            .example
            .context
            .iter()
            .map(|d| segment_sentences(&d.text).len())
            .collect();
        for (sentence, kind) in kinds.iter().enumerate() {
            if let SupportKind::Supported(refs) = kind {
                for r in refs {
                    if doc_sentences.get(r.doc).is_none_or(|n| r.sentence >= *n) {
                        return Err(Error::DanglingReference {
                            sentence,
                            doc: r.doc,
                            context_sentence: r.sentence,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<RagRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RagRecord =
            serde_json::from_str(&line).map_err(|source| Error::Record { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(writer: W, records: &[RagRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<RagRecord>> {
    read_jsonl(File::open(path)?)
}

pub fn save(path: impl AsRef<Path>, records: &[RagRecord]) -> Result<()> {
    write_jsonl(File::create(path)?, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ContextRef, Document};

    fn record() -> RagRecord {
        RagRecord::new(
            RagExample {
                id: "r1".into(),
                context: vec![Document::new("d0", "The sky is blue. Grass is green.")],
                question: "What color is the sky?".into(),
                response: "The sky is blue. It rains.".into(),
            },
            "general knowledge",
            Split::Test,
        )
    }

    #[test]
    fn jsonl_shape() {
        let rec = record().with_annotations(vec![
            SupportAnnotation::supported(0, [ContextRef::new(0, 0)]),
            SupportAnnotation::unsupported(1),
        ]);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["id"], "r1");
        assert_eq!(v["split"], "test");
        assert_eq!(v["domain"], "general knowledge");
        assert_eq!(v["context"][0]["id"], "d0");
        assert_eq!(v["response_level_supported"], false);
        assert_eq!(v["annotations"][0]["refs"][0], serde_json::json!([0, 0]));
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let data = "\n{\"id\": 3}\n";
        match read_jsonl(data.as_bytes()) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation() {
        let ok = record().with_annotations(vec![
            SupportAnnotation::generally_supported(0),
            SupportAnnotation::unsupported(1),
        ]);
        assert!(ok.validate().is_ok());
        assert!(ok.is_hallucinated().unwrap());

        let dangling = record().with_annotations(vec![
            SupportAnnotation::supported(0, [ContextRef::new(0, 5)]),
            SupportAnnotation::unsupported(1),
        ]);
        assert!(matches!(dangling.validate(), Err(Error::DanglingReference { .. })));

        let short = record().with_annotations(vec![SupportAnnotation::unsupported(0)]);
        assert!(matches!(short.validate(), Err(Error::MissingAnnotation(1))));
        assert!(matches!(record().is_hallucinated(), Err(Error::MissingAnnotations(_))));
    }
}
