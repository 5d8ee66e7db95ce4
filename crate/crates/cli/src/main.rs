use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spanguard_core::costmodel::{default_presets, format_usd, framework_cost_table, CostRow, PresetModel, PricingConfig};
use spanguard_core::datasets::chat::{ChatAnnotator, ChatAnnotatorConfig};
use spanguard_core::datasets::{
    generate_synthetic, length_bucketed, load, reconcile_all, save, ReconcileOptions, ReconciliationStatus,
    SyntheticConfig,
};
use spanguard_core::evaluation::{curve_csv, evaluate_pipeline, EvaluationConfig};
use spanguard_core::scoring::onnx::{OnnxScorer, OnnxScorerConfig};
use spanguard_core::{
    detect, AggregationConfig, AggregationMode, AnnotationScorer, DetectorConfig, LexicalOverlapScorer, NoisyScorer,
    Stride, SupportScorer,
};
use spanguard_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "spanguard", version, about = "Span-level hallucination detection for long-context RAG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deployment cost estimates.
    Cost {
        #[command(subcommand)]
        command: CostCommand,
    },
    /// Offline evaluation over an annotated dataset.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Dataset tooling.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Run the HTTP service.
    Serve {
        /// TOML or JSON service configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score one example and print the result as JSON.
    Detect {
        /// JSON file holding {id?, context, question, response}.
        #[arg(long)]
        file: PathBuf,
        /// Service configuration supplying the scorer and thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CostCommand {
    /// Monthly cost per preset at a given query rate.
    Report {
        #[arg(long, default_value_t = 10.0)]
        qps: f64,
        /// `all` or a comma-separated list of preset names.
        #[arg(long, default_value = "all")]
        preset: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum EvalCommand {
    Run(EvalArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `lexical`, `annotation`, or `model:<path.onnx>`.
    #[arg(long, default_value = "lexical")]
    scorer: String,
    /// Vocabulary for `model:` scorers; defaults to vocab.txt beside the model.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Token)]
    mode: Mode,
    #[arg(long, default_value_t = 512)]
    max_sequence_length: usize,
    /// Window stride in tokens; defaults to the full window capacity.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    span_threshold: f64,
    /// Mix uniform noise of this amplitude into every score.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Context-length bucket edges, in tokens.
    #[arg(long, value_delimiter = ',', default_values_t = [5000, 16000])]
    bucket_edges: Vec<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the threshold sweep as CSV.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Token,
    Example,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Label response sentences with a chat-completion model, re-asking on
    /// inconsistent output. Reads the API key and base URL from the
    /// environment.
    Annotate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_attempts: usize,
        /// Per-record reconciliation reports as JSONL.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a seeded synthetic annotated dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        records: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instead of `--records`, emit this many records in each of the
        /// short, medium and long context buckets.
        #[arg(long)]
        per_bucket: Option<usize>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cost {
            command: CostCommand::Report { qps, preset, format },
        } => cost_report(qps, &preset, format),
        Command::Eval {
            command: EvalCommand::Run(args),
        } => eval_run(&args),
        Command::Dataset { command } => match command {
            DatasetCommand::Annotate {
                input,
                out,
                max_attempts,
                report,
            } => annotate(&input, &out, max_attempts, report.as_deref()),
            DatasetCommand::Synth {
                out,
                records,
                seed,
                per_bucket,
            } => {
                let data = match per_bucket {
                    Some(n) => length_bucketed(n, seed),
                    None => generate_synthetic(&SyntheticConfig {
                        records,
                        seed,
                        ..Default::default()
                    }),
                };
                save(&out, &data)?;
                eprintln!("wrote {} records to {}", data.len(), out.display());
                Ok(())
            }
        },
        Command::Serve { config } => {
            let config = ServiceConfig::load(config.as_deref())?;
            tokio::runtime::Runtime::new()?.block_on(spanguard_service::serve(config))?;
            Ok(())
        }
        Command::Detect { file, config } => detect_one(&file, config.as_deref()),
    }
}

fn rounding_flag(model: &PresetModel) -> &'static str {
    match model {
        PresetModel::SelfHosted => "fractional instances",
        PresetModel::Api {
            round_per_query: true, ..
        } => "per-call cost rounded to $0.0001",
        PresetModel::Api { .. } => "unrounded",
        PresetModel::FixedPerCall { .. } => "published per-call prices",
    }
}

/// At least four decimals, more only when they are non-zero.
fn unit_price(v: f64) -> String {
    let s = format!("{v:.6}");
    let trimmed = s.trim_end_matches('0');
    let decimals = trimmed.len() - trimmed.find('.').map_or(trimmed.len(), |i| i + 1);
    format!("${v:.*}", decimals.max(4))
}

#[derive(Serialize)]
struct CostReportRow {
    #[serde(flatten)]
    row: CostRow,
    monthly_cents: i64,
    rounding: &'static str,
}

fn cost_report(qps: f64, preset: &str, format: Format) -> Result<()> {
    if !(qps.is_finite() && qps >= 0.0) {
        bail!("--qps must be a non-negative number");
    }
    let mut presets = default_presets();
    if preset != "all" {
        let wanted: Vec<&str> = preset.split(',').map(str::trim).collect();
        if let Some(missing) = wanted.iter().find(|w| !presets.iter().any(|p| p.name == **w)) {
            let known: Vec<_> = presets.iter().map(|p| p.name.as_str()).collect();
            bail!("unknown preset {missing:?}; known: {}", known.join(", "));
        }
        presets.retain(|p| wanted.contains(&p.name.as_str()));
    }
    let rows = framework_cost_table(&presets, &PricingConfig::default(), qps);
    let report: Vec<CostReportRow> = rows
        .into_iter()
        .zip(&presets)
        .map(|(row, p)| CostReportRow {
            monthly_cents: spanguard_core::costmodel::cents(row.monthly_usd),
            rounding: rounding_flag(&p.model),
            row,
        })
        .collect();
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Table => {
            println!(
                "{:<20} {:>10} {:>10} {:>14}  rounding",
                "preset", "per call", "per query", "monthly"
            );
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), unit_price);
            for r in &report {
                println!(
                    "{:<20} {:>10} {:>10} {:>14}  {}",
                    r.row.preset,
                    opt(r.row.per_call_usd),
                    opt(r.row.per_query_usd),
                    format_usd(r.row.monthly_usd),
                    r.rounding
                );
            }
            for r in report.iter().filter(|r| r.row.note.is_some()) {
                println!("note ({}): {}", r.row.preset, r.row.note.as_deref().unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn build_eval_scorer(args: &EvalArgs, records: &[spanguard_core::datasets::RagRecord]) -> Result<Arc<dyn SupportScorer>> {
    let base: Arc<dyn SupportScorer> = match args.scorer.as_str() {
        "lexical" => Arc::new(LexicalOverlapScorer::new(args.max_sequence_length)),
        "annotation" => {
            let mut s = AnnotationScorer::new(args.max_sequence_length);
            for r in records {
                let anns = r
                    .annotations
                    .clone()
                    .with_context(|| format!("record {} has no annotations", r.id()))?;
                s.insert(r.id(), anns);
            }
            Arc::new(s)
        }
        other => {
            let Some(model) = other.strip_prefix("model:") else {
                bail!("unknown scorer {other:?}; use lexical, annotation or model:<path>");
            };
            let model = PathBuf::from(model);
            let vocab = args
                .vocab
                .clone()
                .unwrap_or_else(|| model.with_file_name("vocab.txt"));
            Arc::new(OnnxScorer::load(OnnxScorerConfig {
                model_path: model,
                vocab_path: vocab,
                max_sequence_length: args.max_sequence_length,
                ..Default::default()
            })?)
        }
    };
    Ok(match args.noise {
        Some(a) => Arc::new(NoisyScorer::new(base, a, args.noise_seed)),
        None => base,
    })
}

fn eval_run(args: &EvalArgs) -> Result<()> {
    let records = load(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let scorer = build_eval_scorer(args, &records)?;
    let config = EvaluationConfig {
        detector: DetectorConfig {
            stride: args.stride.map_or(Stride::Capacity, Stride::Tokens),
            batch_size: args.batch_size,
            mode: match args.mode {
                Mode::Token => AggregationMode::Token,
                Mode::Example => AggregationMode::Example,
            },
            aggregation: AggregationConfig::with_threshold(args.span_threshold),
        },
        bucket_edges: args.bucket_edges.clone(),
    };
    let report = evaluate_pipeline(&records, &*scorer, &config)?;

    println!("records    {}", report.scores.len());
    println!("auroc      {:.4}", report.auroc);
    let t = &report.threshold;
    println!(
        "threshold  {:.4} (precision {:.4}, recall {:.4}, f1 {:.4})",
        t.best_threshold, t.precision, t.recall, t.f1
    );
    for b in &report.buckets.buckets {
        let upper = b.upper.map_or_else(|| "inf".into(), |u| u.to_string());
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
        println!(
            "bucket     [{}, {upper}) n={} {} {} change {}",
            b.lower,
            b.count,
            report.buckets.metric,
            fmt(b.value),
            fmt(b.relative_change)
        );
    }
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(path) = &args.curve_csv {
        fs::write(path, curve_csv(&report.threshold.curve))?;
    }
    Ok(())
}

fn annotate(input: &Path, out: &Path, max_attempts: usize, report: Option<&Path>) -> Result<()> {
    if max_attempts == 0 {
        bail!("--max-attempts must be at least 1");
    }
    let records = load(input)?;
    let client = ChatAnnotator::new(ChatAnnotatorConfig::from_env())?;
    let options = ReconcileOptions {
        max_attempts,
        ..Default::default()
    };
    let results = reconcile_all(&records, &client, &options)?;
    let mut annotated = Vec::with_capacity(results.len());
    let mut reports = String::new();
    let (mut failed, mut partial) = (0, 0);
    for (orig, res) in records.iter().zip(results) {
        match res {
            Ok((rec, rep)) => {
                partial += usize::from(rep.status == ReconciliationStatus::ResolvedPartial);
                reports.push_str(&serde_json::to_string(&rep)?);
                reports.push('\n');
                annotated.push(rec);
            }
            Err(e) => {
                failed += 1;
                eprintln!("record {}: {e}", orig.id());
            }
        }
    }
    save(out, &annotated)?;
    if let Some(path) = report {
        fs::write(path, reports)?;
    }
    eprintln!(
        "annotated {} of {} records ({partial} resolved by marking conflicts unsupported, {failed} failed)",
        annotated.len(),
        records.len()
    );
    if failed > 0 {
        bail!("{failed} records could not be annotated");
    }
    Ok(())
}

fn detect_one(file: &Path, config: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let request: spanguard_service::DetectRequest = serde_json::from_str(&text).context("parsing example")?;
    let config = ServiceConfig::load(config)?;
    let scorer = config.build_scorer()?;
    let example = request.into_example("example");
    example.validate()?;
    let d = detect(&example, &*scorer, &config.detector_config())?;
    let out = serde_json::json!({
        "result": d.result,
        "hallucinated": d.result.hallucination_probability >= config.example_threshold,
        "window_count": d.window_count,
        "timings": d.timings,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
