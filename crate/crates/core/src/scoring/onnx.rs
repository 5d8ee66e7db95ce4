//! Scorer backed by an exported token-classification graph in ONNX format.
//!
//! Each window is laid out as `[CLS] context [SEP] question [SEP] response
//! [SEP]`, so four positions of `L` are reserved. The graph must take `int64`
//! ids (and optionally an attention mask and segment ids) shaped
//! `[batch, seq]` and return per-position scores shaped `[batch, seq]` or
//! `[batch, seq, classes]`.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{Concurrency, ScorerError, SupportScorer, WindowInput};
use crate::error::{Error, Result};
use crate::text::{Tokenizer, WordPieceTokenizer};

const RESERVED: usize = 4;

/// Post-processing applied to raw graph outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    /// Outputs are already probabilities.
    #[default]
    Identity,
    Sigmoid,
    /// Softmax over the class axis of a 3-D output.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnnxScorerConfig {
    pub model_path: PathBuf,
    /// One vocabulary piece per line; line number is the id.
    pub vocab_path: PathBuf,
    pub max_sequence_length: usize,
    pub lowercase: bool,
    pub input_ids_name: String,
    pub attention_mask_name: Option<String>,
    pub token_type_ids_name: Option<String>,
    /// Defaults to the graph's first output.
    pub output_name: Option<String>,
    pub output_transform: OutputTransform,
    /// Class column read from a 3-D output.
    pub support_class: usize,
    pub cls_token: String,
    pub sep_token: String,
    pub pad_token: String,
    pub unk_token: String,
}

impl Default for OnnxScorerConfig {
    fn default() -> Self {
        Self {
            model_path: PathBuf::new(),
            vocab_path: PathBuf::new(),
            max_sequence_length: 512,
            lowercase: true,
            input_ids_name: "input_ids".into(),
            attention_mask_name: Some("attention_mask".into()),
            token_type_ids_name: None,
            output_name: None,
            output_transform: OutputTransform::Identity,
            support_class: 1,
            cls_token: "[CLS]".into(),
            sep_token: "[SEP]".into(),
            pad_token: "[PAD]".into(),
            unk_token: "[UNK]".into(),
        }
    }
}

pub struct OnnxScorer {
    config: OnnxScorerConfig,
    tokenizer: WordPieceTokenizer,
    plan: Arc<TypedSimplePlan>,
    cls: i64,
    sep: i64,
    pad: i64,
}

fn runtime(e: impl std::fmt::Display) -> Error {
    Error::ModelRuntime(e.to_string())
}

/// One encoded window.
struct Encoded {
    ids: Vec<i64>,
    segments: Vec<i64>,
    response_offset: usize,
    response_len: usize,
}

impl OnnxScorer {
    pub fn load(config: OnnxScorerConfig) -> Result<Self> {
        if config.max_sequence_length <= RESERVED {
            return Err(Error::InvalidConfig(format!(
                "max_sequence_length must exceed {RESERVED}"
            )));
        }
        let tokenizer =
            WordPieceTokenizer::from_file(&config.vocab_path, &config.unk_token, config.lowercase)?;
        let special = |name: &str| {
            tokenizer
                .id(name)
                .map(|i| i as i64)
                .ok_or_else(|| Error::InvalidConfig(format!("vocabulary lacks {name:?}")))
        };
        let (cls, sep, pad) = (
            special(&config.cls_token)?,
            special(&config.sep_token)?,
            special(&config.pad_token)?,
        );

        let mut model = tract_onnx::onnx()
            .model_for_path(&config.model_path)
            .map_err(runtime)?;
        let inputs: Vec<&str> = std::iter::once(config.input_ids_name.as_str())
            .chain(config.attention_mask_name.as_deref())
            .chain(config.token_type_ids_name.as_deref())
            .collect();
        model.set_input_names(&inputs).map_err(runtime)?;
        if let Some(out) = &config.output_name {
            model.select_outputs_by_name([out]).map_err(runtime)?;
        }
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(runtime)?;
        Ok(Self {
            config,
            tokenizer,
            plan,
            cls,
            sep,
            pad,
        })
    }

    pub fn config(&self) -> &OnnxScorerConfig {
        &self.config
    }

    fn id(&self, piece: &str) -> i64 {
        self.tokenizer.id(piece).unwrap_or_else(|| self.tokenizer.unk_id()) as i64
    }

    fn encode(&self, input: &WindowInput<'_>) -> Encoded {
        let ex = input.example;
        let ctx = &ex.context_tokens[input.window.context_range.clone()];
        let len = ctx.len() + ex.question_tokens.len() + ex.response_tokens.len() + RESERVED;
        let mut ids = Vec::with_capacity(len);
        ids.push(self.cls);
        ids.extend(ctx.iter().map(|t| self.id(&t.text)));
        ids.push(self.sep);
        let first_segment = ids.len();
        ids.extend(ex.question_tokens.iter().map(|t| self.id(t)));
        ids.push(self.sep);
        let response_offset = ids.len();
        ids.extend(ex.response_tokens.iter().map(|t| self.id(&t.text)));
        ids.push(self.sep);
        let segments = (0..ids.len()).map(|i| i64::from(i >= first_segment)).collect();
        Encoded {
            ids,
            segments,
            response_offset,
            response_len: ex.response_len(),
        }
    }

    fn run(&self, batch: &[Encoded]) -> Result<Vec<Vec<f64>>, ScorerError> {
        let err = |e: TractError| ScorerError(e.to_string());
        let seq = batch.iter().map(|e| e.ids.len()).max().unwrap_or(0);
        if seq > self.config.max_sequence_length {
            return Err(ScorerError(format!(
                "window needs {seq} positions, limit is {}",
                self.config.max_sequence_length
            )));
        }
        let n = batch.len();
        let mut ids = vec![self.pad; n * seq];
        let mut mask = vec![0i64; n * seq];
        let mut segments = vec![0i64; n * seq];
        for (b, e) in batch.iter().enumerate() {
            let row = b * seq;
            ids[row..row + e.ids.len()].copy_from_slice(&e.ids);
            mask[row..row + e.ids.len()].fill(1);
            segments[row..row + e.ids.len()].copy_from_slice(&e.segments);
        }
        let tensor = |v: Vec<i64>| -> Result<TValue, ScorerError> {
            Ok(Tensor::from_shape(&[n, seq], &v).map_err(err)?.into())
        };
        let mut inputs: TVec<TValue> = tvec![tensor(ids)?];
        if self.config.attention_mask_name.is_some() {
            inputs.push(tensor(mask)?);
        }
        if self.config.token_type_ids_name.is_some() {
            inputs.push(tensor(segments)?);
        }
        let outputs = self.plan.run(inputs).map_err(err)?;
        let out = outputs[0].cast_to::<f32>().map_err(err)?;
        let view = out.to_plain_array_view::<f32>().map_err(err)?;
        let shape = view.shape().to_vec();
        if shape.len() < 2 || shape[0] != n || shape[1] != seq {
            return Err(ScorerError(format!(
                "output shape {shape:?}, expected [{n}, {seq}, ..]"
            )));
        }
        let classes = if shape.len() == 3 { shape[2] } else { 1 };
        if shape.len() > 3 || (classes > 1 && self.config.support_class >= classes) {
            return Err(ScorerError(format!(
                "output shape {shape:?} has no support class {}",
                self.config.support_class
            )));
        }
        let flat: Vec<f32> = view.iter().copied().collect();
        Ok(batch
            .iter()
            .enumerate()
            .map(|(b, e)| {
                (e.response_offset..e.response_offset + e.response_len)
                    .map(|pos| {
                        let base = (b * seq + pos) * classes;
                        let logits = &flat[base..base + classes];
                        transform(logits, self.config.support_class, self.config.output_transform)
                    })
                    .collect()
            })
            .collect())
    }
}

/// Reads the support probability for one position.
pub fn transform(values: &[f32], support_class: usize, how: OutputTransform) -> f64 {
    let pick = if values.len() == 1 { 0 } else { support_class };
    let x = f64::from(values[pick]);
    match how {
        OutputTransform::Identity => x,
        OutputTransform::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        OutputTransform::Softmax => {
            let max = values.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
            let z: f64 = values.iter().map(|v| f64::from(v - max).exp()).sum();
            f64::from(values[pick] - max).exp() / z
        }
    }
}

impl SupportScorer for OnnxScorer {
    fn max_sequence_length(&self) -> usize {
        self.config.max_sequence_length
    }

    fn reserved_special_tokens(&self) -> usize {
        RESERVED
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
        let mut rows = self.run(&[self.encode(&input)])?;
        Ok(rows.remove(0))
    }

    fn score_batch(&self, inputs: &[WindowInput<'_>]) -> Vec<Result<Vec<f64>, ScorerError>> {
        let encoded: Vec<Encoded> = inputs.iter().map(|i| self.encode(i)).collect();
        match self.run(&encoded) {
            Ok(rows) => rows.into_iter().map(Ok).collect(),
            Err(e) => inputs.iter().map(|_| Err(e.clone())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms() {
        assert_eq!(transform(&[0.25], 1, OutputTransform::Identity), 0.25);
        assert_eq!(transform(&[0.0], 1, OutputTransform::Sigmoid), 0.5);
        assert_eq!(transform(&[0.1, 0.7], 1, OutputTransform::Identity), f64::from(0.7f32));
        let p = transform(&[0.0, 2.0f32.ln()], 1, OutputTransform::Softmax);
        assert!((p - 2.0 / 3.0).abs() < 1e-6);
    }
}
