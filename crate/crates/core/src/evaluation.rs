//! Metrics: AUROC, F1-optimal threshold tuning, and context-length buckets.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::RagRecord;
use crate::error::{Error, Result};
use crate::pipeline::{detect, DetectorConfig};
use crate::scoring::SupportScorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleLabel {
    Hallucinated,
    Clean,
}

impl ExampleLabel {
    pub fn is_positive(self) -> bool {
        self == ExampleLabel::Hallucinated
    }
}

/// A predicted hallucination probability with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub example_id: String,
    pub score: f64,
    pub label: ExampleLabel,
    pub context_token_length: usize,
    pub task_tag: String,
}

impl LabeledScore {
    pub fn new(score: f64, label: ExampleLabel) -> Self {
        Self {
            example_id: String::new(),
            score,
            label,
            context_token_length: 0,
            task_tag: String::new(),
        }
    }
}

fn class_counts(scores: &[LabeledScore]) -> Result<(usize, usize)> {
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "non-finite score {} for {:?}",
            s.score, s.example_id
        )));
    }
    let pos = scores.iter().filter(|s| s.label.is_positive()).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Probability that a random hallucinated example outscores a random clean
/// one, ties counting one half. Computed from mid-ranks.
pub fn auroc(scores: &[LabeledScore]) -> Result<f64> {
    let (pos, neg) = class_counts(scores)?;
    let mut order: Vec<&LabeledScore> = scores.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));

    // twice the positive rank sum keeps mid-ranks integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && order[j + 1].score == order[i].score {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1, mid-rank times two = i + j + 2
        let mid_x2 = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|s| s.label.is_positive()).count() as u128;
        rank_sum_x2 += mid_x2 * tied_pos;
        i = j + 1;
    }
    let pos128 = pos as u128;
    // 2U = 2 * rank_sum - pos * (pos + 1)
    let u_x2 = rank_sum_x2 - pos128 * (pos128 + 1);
    Ok(u_x2 as f64 / 2.0 / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        harmonic_mean(self.precision(), self.recall())
    }

    /// Counts when predicting hallucinated iff `score >= threshold`.
    pub fn at(scores: &[LabeledScore], threshold: f64) -> Self {
        let mut c = ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
        };
        for s in scores {
            match (s.score >= threshold, s.label.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the tag holds a single class.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub best_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub per_tag: BTreeMap<String, TagMetrics>,
    pub curve: Vec<CurvePoint>,
}

/// Candidate thresholds: the lowest value of `scores ∪ {0, 1}` followed by
/// the midpoints between consecutive distinct values.
pub fn candidate_thresholds(scores: &[LabeledScore]) -> Vec<f64> {
    let mut values: Vec<f64> = scores.iter().map(|s| s.score).chain([0.0, 1.0]).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    std::iter::once(values[0])
        .chain(values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0))
        .collect()
}

/// Sweeps every candidate threshold and keeps the one with the best F1,
/// preferring the lower threshold on ties.
pub fn tune_threshold(scores: &[LabeledScore]) -> Result<ThresholdReport> {
    let (pos, _) = class_counts(scores)?;
    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|s| (s.score, s.label.is_positive())).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // positives with score at index >= k
    let mut pos_from = vec![0usize; sorted.len() + 1];
    for k in (0..sorted.len()).rev() {
        pos_from[k] = pos_from[k + 1] + usize::from(sorted[k].1);
    }

    let mut curve = Vec::new();
    let mut best: Option<(f64, ConfusionCounts, f64)> = None;
    for t in candidate_thresholds(scores) {
        let k = sorted.partition_point(|(s, _)| *s < t);
        let predicted = sorted.len() - k;
        let tp = pos_from[k];
        let counts = ConfusionCounts {
            tp,
            fp: predicted - tp,
            fn_: pos - tp,
            tn: k - (pos - tp),
        };
        let f1 = counts.f1();
        curve.push(CurvePoint {
            threshold: t,
            precision: counts.precision(),
            recall: counts.recall(),
            f1,
        });
        if best.is_none_or(|(_, _, b)| f1 > b) {
            best = Some((t, counts, f1));
        }
    }
    let (best_threshold, counts, f1) = best.expect("at least one candidate");

    let mut groups: BTreeMap<String, Vec<LabeledScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.task_tag.clone()).or_default().push(s.clone());
    }
    let per_tag = groups
        .into_iter()
        .map(|(tag, group)| {
            let c = ConfusionCounts::at(&group, best_threshold);
            let m = TagMetrics {
                count: group.len(),
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                auroc: auroc(&group).ok(),
            };
            (tag, m)
        })
        .collect();

    Ok(ThresholdReport {
        best_threshold,
        precision: counts.precision(),
        recall: counts.recall(),
        f1,
        counts,
        per_tag,
        curve,
    })
}

pub const DEFAULT_BUCKET_EDGES: [usize; 2] = [5000, 16000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: usize,
    /// Exclusive; `None` is unbounded.
    pub upper: Option<usize>,
    pub count: usize,
    pub positives: usize,
    /// `None` when the bucket holds fewer than two classes.
    pub value: Option<f64>,
    /// `(value - reference) / reference`, relative to the first bucket.
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub metric: String,
    /// Unit of the bucket edges.
    pub length_unit: String,
    pub buckets: Vec<Bucket>,
}

/// Per-bucket AUROC over context lengths split at `edges`, with relative
/// change against the first bucket.
pub fn bucket_analysis(scores: &[LabeledScore], edges: &[usize]) -> BucketReport {
    let mut bounds: Vec<(usize, Option<usize>)> = Vec::with_capacity(edges.len() + 1);
    let mut lower = 0;
    for &e in edges {
        bounds.push((lower, Some(e)));
        lower = e;
    }
    bounds.push((lower, None));

    let mut buckets: Vec<Bucket> = bounds
        .into_iter()
        .map(|(lower, upper)| {
            let members: Vec<LabeledScore> = scores
                .iter()
                .filter(|s| s.context_token_length >= lower && upper.is_none_or(|u| s.context_token_length < u))
                .cloned()
                .collect();
            Bucket {
                lower,
                upper,
                count: members.len(),
                positives: members.iter().filter(|s| s.label.is_positive()).count(),
                value: auroc(&members).ok(),
                relative_change: None,
            }
        })
        .collect();

    if let Some(reference) = buckets[0].value.filter(|v| *v != 0.0) {
        for (i, b) in buckets.iter_mut().enumerate() {
            b.relative_change = if i == 0 {
                Some(0.0)
            } else {
                b.value.map(|v| (v - reference) / reference)
            };
        }
    }

    BucketReport {
        metric: "auroc".into(),
        length_unit: "tokens".into(),
        buckets,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub detector: DetectorConfig,
    pub bucket_edges: Vec<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auroc: f64,
    pub threshold: ThresholdReport,
    pub buckets: BucketReport,
    pub scores: Vec<LabeledScore>,
}

/// Runs detection over annotated records and scores the results. Records
/// are processed in parallel; output order follows input order.
pub fn evaluate_pipeline(
    records: &[RagRecord],
    scorer: &dyn SupportScorer,
    config: &EvaluationConfig,
) -> Result<EvaluationReport> {
    let scores = score_records(records, scorer, &config.detector)?;
    Ok(EvaluationReport {
        auroc: auroc(&scores)?,
        threshold: tune_threshold(&scores)?,
        buckets: bucket_analysis(&scores, &config.bucket_edges),
        scores,
    })
}

/// Hallucination probability and ground truth for every record.
pub fn score_records(
    records: &[RagRecord],
    scorer: &dyn SupportScorer,
    config: &DetectorConfig,
) -> Result<Vec<LabeledScore>> {
    records
        .par_iter()
        .map(|rec| {
            let label = if rec.is_hallucinated()? {
                ExampleLabel::Hallucinated
            } else {
                ExampleLabel::Clean
            };
            let d = detect(&rec.example, scorer, config)?;
            Ok(LabeledScore {
                example_id: rec.example.id.clone(),
                score: d.result.hallucination_probability,
                label,
                context_token_length: d.context_tokens,
                task_tag: rec.domain.clone(),
            })
        })
        .collect()
}

/// CSV dump of a threshold curve.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,precision,recall,f1\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.threshold, p.precision, p.recall, p.f1));
    }
    out
}
