//! Monthly deployment cost of self-hosted versus API-based detectors.

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_MONTH: u64 = 2_592_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    /// USD per million input tokens.
    pub input_price_per_1m: f64,
    /// USD per million output tokens.
    pub output_price_per_1m: f64,
    /// USD per GPU instance per month.
    pub gpu_monthly: f64,
    /// Queries per second one instance sustains.
    pub gpu_qps_capacity: f64,
    pub seconds_per_month: u64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            input_price_per_1m: 0.5,
            output_price_per_1m: 1.5,
            gpu_monthly: 700.0,
            gpu_qps_capacity: 4.0,
            seconds_per_month: SECONDS_PER_MONTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub qps: f64,
    pub avg_input_tokens: u64,
    pub avg_output_tokens: u64,
    pub calls_per_query: u32,
    /// Output length of one call as a multiple of `avg_output_tokens`.
    pub output_multiplier: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            qps: 10.0,
            avg_input_tokens: 4000,
            avg_output_tokens: 200,
            calls_per_query: 1,
            output_multiplier: 1.0,
        }
    }
}

/// Fractional instances: `gpu_monthly * qps / capacity`.
pub fn gpu_monthly_cost(pricing: &PricingConfig, workload: &WorkloadConfig) -> f64 {
    pricing.gpu_monthly * workload.qps / pricing.gpu_qps_capacity
}

/// Cost of one API call at full precision.
pub fn api_call_cost(pricing: &PricingConfig, workload: &WorkloadConfig) -> f64 {
    (workload.avg_input_tokens as f64 * pricing.input_price_per_1m
        + workload.avg_output_tokens as f64 * workload.output_multiplier * pricing.output_price_per_1m)
        / 1e6
}

pub fn api_query_cost(pricing: &PricingConfig, workload: &WorkloadConfig) -> f64 {
    f64::from(workload.calls_per_query) * api_call_cost(pricing, workload)
}

pub fn queries_per_month(pricing: &PricingConfig, workload: &WorkloadConfig) -> f64 {
    workload.qps * pricing.seconds_per_month as f64
}

pub fn api_monthly_cost(pricing: &PricingConfig, workload: &WorkloadConfig) -> f64 {
    queries_per_month(pricing, workload) * api_query_cost(pricing, workload)
}

/// Rounds to `decimals` places, half away from zero.
pub fn round_to(value: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (value * f).round() / f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PresetModel {
    /// Self-hosted GPU instances.
    SelfHosted,
    /// Token-priced API calls.
    Api {
        calls_per_query: u32,
        output_tokens: u64,
        output_multiplier: f64,
        /// Round the per-call cost to four decimals before scaling up.
        round_per_query: bool,
    },
    /// Fixed per-call prices, in USD per million queries.
    FixedPerCall { per_1m_queries: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPreset {
    pub name: String,
    pub description: String,
    pub model: PresetModel,
    /// Externally published monthly figure at 10 qps, when it differs from
    /// what the formula gives.
    pub published_monthly_at_10qps: Option<f64>,
}

/// Built-in presets.
pub fn default_presets() -> Vec<CostPreset> {
    vec![
        CostPreset {
            name: "self-hosted".into(),
            description: "fine-tuned encoder on GPU instances".into(),
            model: PresetModel::SelfHosted,
            published_monthly_at_10qps: None,
        },
        CostPreset {
            name: "single-prompt".into(),
            description: "one LLM judge call per query".into(),
            model: PresetModel::Api {
                calls_per_query: 1,
                output_tokens: 200,
                output_multiplier: 1.0,
                round_per_query: true,
            },
            published_monthly_at_10qps: None,
        },
        CostPreset {
            name: "ensemble-3".into(),
            description: "one call returning three sampled judgements".into(),
            model: PresetModel::Api {
                calls_per_query: 1,
                output_tokens: 200,
                output_multiplier: 3.0,
                round_per_query: true,
            },
            published_monthly_at_10qps: None,
        },
        CostPreset {
            name: "two-call-extractor".into(),
            description: "claim extraction call followed by a faithfulness call".into(),
            model: PresetModel::FixedPerCall {
                per_1m_queries: vec![380.0, 2730.0],
            },
            published_monthly_at_10qps: Some(79_937.0),
        },
        CostPreset {
            name: "per-sentence-3".into(),
            description: "one call per response sentence, three sentences".into(),
            model: PresetModel::Api {
                calls_per_query: 3,
                output_tokens: 75,
                output_multiplier: 2.0,
                round_per_query: false,
            },
            published_monthly_at_10qps: None,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub preset: String,
    pub qps: f64,
    /// `None` for self-hosted presets.
    pub per_call_usd: Option<f64>,
    pub per_query_usd: Option<f64>,
    pub monthly_usd: f64,
    pub note: Option<String>,
}

pub fn preset_cost(preset: &CostPreset, pricing: &PricingConfig, qps: f64) -> CostRow {
    let base = WorkloadConfig {
        qps,
        ..WorkloadConfig::default()
    };
    let monthly_queries = queries_per_month(pricing, &base);
    let (per_call, per_query, monthly) = match &preset.model {
        PresetModel::SelfHosted => (None, None, gpu_monthly_cost(pricing, &base)),
        PresetModel::Api {
            calls_per_query,
            output_tokens,
            output_multiplier,
            round_per_query,
        } => {
            let w = WorkloadConfig {
                avg_output_tokens: *output_tokens,
                output_multiplier: *output_multiplier,
                calls_per_query: *calls_per_query,
                ..base
            };
            let mut call = api_call_cost(pricing, &w);
            if *round_per_query {
                call = round_to(call, 4);
            }
            let query = f64::from(*calls_per_query) * call;
            (Some(call), Some(query), monthly_queries * query)
        }
        PresetModel::FixedPerCall { per_1m_queries } => {
            let query = per_1m_queries.iter().sum::<f64>() / 1e6;
            (None, Some(query), monthly_queries * query)
        }
    };
    let note = preset.published_monthly_at_10qps.and_then(|published| {
        let at10 = monthly / qps * 10.0;
        (qps > 0.0 && round_to(at10, 2) != round_to(published, 2)).then(|| {
            format!(
                "published figure at 10 qps is ${published:.2}; recomputed from the same prices it is ${at10:.2}"
            )
        })
    });
    CostRow {
        preset: preset.name.clone(),
        qps,
        per_call_usd: per_call,
        per_query_usd: per_query,
        monthly_usd: monthly,
        note,
    }
}

/// One row per preset.
pub fn framework_cost_table(presets: &[CostPreset], pricing: &PricingConfig, qps: f64) -> Vec<CostRow> {
    presets.iter().map(|p| preset_cost(p, pricing, qps)).collect()
}

/// Whole cents, for exact comparison and display.
pub fn cents(usd: f64) -> i64 {
    (usd * 100.0).round() as i64
}

pub fn format_usd(usd: f64) -> String {
    let c = cents(usd);
    let (whole, frac) = (c.abs() / 100, c.abs() % 100);
    let digits = whole.to_string();
    let mut grouped = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{}${grouped}.{frac:02}", if c < 0 { "-" } else { "" })
}
