//! `vkc`: command-line driver for benchmark builds, review and evaluation.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vkc_core::pipeline::{
    build_with_auto_review, validate_benchmark, Pipeline, StageName, StageOptions, StageReport,
};
use vkc_core::reviewd::{serve, AutoAnnotator, Stage};
use vkc_core::{PipelineConfig, Strategy};

#[derive(Parser, Debug)]
#[command(name = "vkc", version, about = "Build and evaluate vision-knowledge conflict benchmarks")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// Use offline mocks for every model service.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Copy an annotated corpus into the workspace.
    Ingest { corpus: PathBuf },
    /// Harvest Subject/Action/Place components and queue concreteness review.
    Extract,
    /// Score context pairs from the reviewed components.
    ScoreContexts,
    /// Select counter-commonsense targets for accepted contexts.
    ScoreTargets,
    /// Generate images for accepted triplets.
    GenImages,
    /// Generate the three question levels for accepted images.
    GenQa,
    /// Serve the review API.
    ReviewServe {
        /// Queue whose progress is logged at startup.
        #[arg(long)]
        stage: Option<Stage>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Label every open task of a queue with the rule-based annotator.
    ReviewAuto {
        #[arg(long)]
        stage: Stage,
        /// Share of images rejected for quality.
        #[arg(long, default_value_t = 0.0)]
        image_reject_rate: f64,
    },
    /// Query a model on every QA item with and without its image.
    Evaluate {
        #[arg(long)]
        model: String,
        #[arg(long, value_delimiter = ',', default_value = "plain")]
        strategy: Vec<Strategy>,
        /// Replay script (JSON array or JSONL of entries).
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Text-only common-sense probe over the benchmark's triplets.
    Sanity {
        #[arg(long)]
        model: String,
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Sampled-answer entropy per question type.
    Entropy {
        #[arg(long)]
        model: String,
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Recompute report.json from stored responses and review grades.
    Report,
    /// Check the workspace; exits 1 when violations are found.
    Validate,
    /// Run every build stage with the rule-based annotator at each gate.
    Build {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        image_reject_rate: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn annotator(image_reject_rate: f64) -> Result<AutoAnnotator> {
    if !(0.0..=1.0).contains(&image_reject_rate) {
        bail!("--image-reject-rate must be within [0, 1]");
    }
    Ok(AutoAnnotator {
        image_reject_rate,
        ..AutoAnnotator::default()
    })
}

fn run_stage(cli: &Cli, config: PipelineConfig, stage: StageName, options: StageOptions) -> Result<StageReport> {
    let mut pipeline = Pipeline::open(&cli.workspace, config, cli.offline)?;
    Ok(pipeline.run(stage, &options)?)
}

fn review_serve(cli: &Cli, config: PipelineConfig, stage: Option<Stage>, host: &str, port: u16) -> Result<()> {
    // Holding the pipeline lock keeps stages from running mid-review.
    let pipeline = Pipeline::open(&cli.workspace, config, cli.offline)?;
    let store = Arc::new(pipeline.review_store()?);
    if let Some(stage) = stage {
        let s = store.queue_summary(stage);
        tracing::info!("{stage}: {} tasks, {} remaining", s.total, s.remaining);
    }
    let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid --host/--port")?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(store, addr))?;
    drop(pipeline);
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = load_config(cli.config.as_deref())?;
    let simple = |stage| run_stage(&cli, config.clone(), stage, StageOptions::default());
    let report = match &cli.command {
        Command::Ingest { corpus } => run_stage(
            &cli,
            config.clone(),
            StageName::Ingest,
            StageOptions {
                corpus: Some(corpus.clone()),
                ..Default::default()
            },
        )?,
        Command::Extract => simple(StageName::Extract)?,
        Command::ScoreContexts => simple(StageName::ScoreContexts)?,
        Command::ScoreTargets => simple(StageName::ScoreTargets)?,
        Command::GenImages => simple(StageName::GenImages)?,
        Command::GenQa => simple(StageName::GenQa)?,
        Command::Report => simple(StageName::Report)?,
        Command::Evaluate { model, strategy, script } => run_stage(
            &cli,
            config.clone(),
            StageName::Evaluate,
            StageOptions {
                model: Some(model.clone()),
                strategies: strategy.clone(),
                script: script.clone(),
                offline: cli.offline,
                ..Default::default()
            },
        )?,
        Command::Sanity { model, script } | Command::Entropy { model, script } => {
            let stage = if matches!(cli.command, Command::Sanity { .. }) {
                StageName::Sanity
            } else {
                StageName::Entropy
            };
            run_stage(
                &cli,
                config.clone(),
                stage,
                StageOptions {
                    model: Some(model.clone()),
                    script: script.clone(),
                    ..Default::default()
                },
            )?
        }
        Command::ReviewServe { stage, port, host } => {
            return review_serve(&cli, config.clone(), *stage, host, *port);
        }
        Command::ReviewAuto { stage, image_reject_rate } => {
            let auto = annotator(*image_reject_rate)?;
            let pipeline = Pipeline::open(&cli.workspace, config.clone(), cli.offline)?;
            let labeled = pipeline.review_auto(*stage, &auto)?;
            return print_json(&serde_json::json!({ "stage": stage, "labeled": labeled }));
        }
        Command::Validate => {
            let report = validate_benchmark(&cli.workspace);
            print_json(&report)?;
            if !report.is_valid() {
                std::process::exit(1);
            }
            return Ok(());
        }
        Command::Build { corpus, image_reject_rate } => {
            let auto = annotator(*image_reject_rate)?;
            let reports = build_with_auto_review(&config, &cli.workspace, corpus, &auto, cli.offline)?;
            return print_json(&reports);
        }
    };
    print_json(&report)
}
