use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use arsentinel::server::{self, AppState};
use arsentinel::ServiceConfig;
use arsentinel_core::eval::{self, PipelineKind, ReportFormat};
use arsentinel_core::imageio;
use arsentinel_core::model::{ImageRef, ScenePair};
use arsentinel_core::obstruction::ObstructionReport;
use arsentinel_core::synth::{self, LabelMix, SynthSpec};
use arsentinel_core::vim::VimReport;
use arsentinel_core::{Engine, ReportStatus};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "arsentinel", version, about = "Detect task-detrimental virtual content in AR scenes")]
struct Cli {
    /// Service/pipeline configuration (JSON). ARSENT_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Seed for synthesis, and for oracle backend noise in detect/eval.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pipeline {
    Obstruction,
    Vim,
}

impl From<Pipeline> for PipelineKind {
    fn from(p: Pipeline) -> Self {
        match p {
            Pipeline::Obstruction => PipelineKind::Obstruction,
            Pipeline::Vim => PipelineKind::Vim,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Label proportions, e.g. none:0.4,obstruction:0.3,vim:0.3
        #[arg(long, default_value = "none:0.4,obstruction:0.3,vim:0.3")]
        mix: String,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
    },
    /// Analyze one scene pair. Exit status 1 means an attack was detected.
    Detect {
        #[arg(value_enum)]
        pipeline: Pipeline,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        ar: PathBuf,
        #[arg(long)]
        content_mask: PathBuf,
        /// Scene id used in the report (and for oracle lookups).
        #[arg(long)]
        id: Option<String>,
    },
    /// Score a pipeline over a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        pipeline: Pipeline,
    },
    /// Run the HTTP analysis service.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ServiceConfig> {
    let mut config = ServiceConfig::load(cli.config.as_deref()).context("loading configuration")?;
    if let Some(seed) = cli.seed {
        config.pipeline.endpoints = config.pipeline.endpoints.with_oracle_seed(seed)?;
    }
    Ok(config)
}

fn scene_from_files(id: Option<&str>, raw: &Path, ar: &Path, mask: &Path) -> Result<ScenePair> {
    let id = id.unwrap_or("cli").to_string();
    let raw = ImageRef::from_file(format!("{id}/raw"), raw).with_context(|| format!("reading {}", raw.display()))?;
    let ar = ImageRef::from_file(format!("{id}/ar"), ar).with_context(|| format!("reading {}", ar.display()))?;
    let content_mask = imageio::read_mask_png(mask).with_context(|| format!("reading {}", mask.display()))?;
    Ok(ScenePair {
        id,
        raw,
        ar,
        content_mask,
        truth: None,
    })
}

fn print_detection(format: Format, status: ReportStatus, attacked: bool, json: String, summary: String) -> ExitCode {
    match format {
        Format::Json => println!("{json}"),
        Format::Text => println!("{summary}"),
    }
    match (status, attacked) {
        (ReportStatus::Determined, true) => ExitCode::from(1),
        (ReportStatus::Determined, false) => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    }
}

fn obstruction_summary(r: &ObstructionReport) -> String {
    let mut lines = vec![format!(
        "{}: {} ({:?})",
        r.scene_id,
        if r.verdict.attacked { "OBSTRUCTED" } else { "clear" },
        r.status
    )];
    for o in &r.per_object {
        match o.measure.measured() {
            Some(m) => lines.push(format!(
                "  {}: {:.1}% covered{}",
                o.name,
                m.ratio * 100.0,
                if m.flagged { " (flagged)" } else { "" }
            )),
            None => lines.push(format!("  {}: not measurable", o.name)),
        }
    }
    for name in &r.unlocalized {
        lines.push(format!("  {name}: not localized"));
    }
    lines.push(format!("  {}", r.verdict.rationale));
    lines.join("\n")
}

fn vim_summary(r: &VimReport) -> String {
    let mut lines = vec![format!(
        "{}: {} ({:?})",
        r.scene_id,
        if r.verdict.attacked { "MANIPULATED" } else { "clear" },
        r.status
    )];
    if let Some(t) = &r.taxonomy {
        lines.push(format!("  format {}, purpose {}", t.format, t.purpose));
    }
    for m in &r.diff.modifications {
        lines.push(format!("  {:?} -> {:?}", m.before.text, m.after.text));
    }
    for t in &r.diff.additions {
        lines.push(format!("  + {:?}", t.text));
    }
    for t in &r.diff.removals {
        lines.push(format!("  - {:?}", t.text));
    }
    lines.push(format!("  {}", r.verdict.rationale));
    lines.join("\n")
}

async fn detect(cli: &Cli, pipeline: Pipeline, pair: ScenePair) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let engine = Engine::new(config.pipeline.clone())?;
    let policy = config.fail_policy;
    let code = match pipeline {
        Pipeline::Obstruction => {
            let report = match engine.detect_obstruction(&pair).await {
                Ok(r) => r,
                Err(f) if matches!(f.error, arsentinel_core::PipelineError::Backend { .. }) => {
                    ObstructionReport::from_failure(&f, policy)
                }
                Err(f) => return Err(f.into()),
            };
            print_detection(
                cli.format,
                report.status,
                report.verdict.attacked,
                serde_json::to_string_pretty(&report)?,
                obstruction_summary(&report),
            )
        }
        Pipeline::Vim => {
            let report = match engine.detect_vim(&pair).await {
                Ok(r) => r,
                Err(f) if matches!(f.error, arsentinel_core::PipelineError::Backend { .. }) => {
                    VimReport::from_failure(&f, policy)
                }
                Err(f) => return Err(f.into()),
            };
            print_detection(
                cli.format,
                report.status,
                report.verdict.attacked,
                serde_json::to_string_pretty(&report)?,
                vim_summary(&report),
            )
        }
    };
    Ok(code)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();

    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutdown signal received, draining requests");
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth {
            out,
            count,
            mix,
            width,
            height,
        } => {
            let mix: LabelMix = mix.parse()?;
            let spec = SynthSpec {
                seed: cli.seed.unwrap_or(0),
                count: *count,
                mix,
                width: *width,
                height: *height,
                ..SynthSpec::default()
            };
            let manifest = synth::synthesize(&spec, out)?;
            println!("{}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Detect {
            pipeline,
            raw,
            ar,
            content_mask,
            id,
        } => {
            let pair = scene_from_files(id.as_deref(), raw, ar, content_mask)?;
            detect(&cli, *pipeline, pair).await
        }
        Command::Eval { manifest, pipeline } => {
            let config = load_config(&cli)?;
            let pairs = eval::load_manifest(manifest)?;
            if pairs.is_empty() {
                bail!("manifest {} has no scenes", manifest.display());
            }
            let engine = Engine::new(config.pipeline)?;
            let report = eval::evaluate(&pairs, (*pipeline).into(), &engine).await;
            let format = match cli.format {
                Format::Json => ReportFormat::Json,
                Format::Text => ReportFormat::Text,
            };
            print!("{}", eval::emit_report(&report, format));
            if format == ReportFormat::Json {
                println!();
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { listen } => {
            let mut config = load_config(&cli)?;
            if let Some(l) = listen {
                config.listen = l.clone();
                config.validate()?;
            }
            let listener = tokio::net::TcpListener::bind(&config.listen)
                .await
                .with_context(|| format!("binding {}", config.listen))?;
            tracing::info!(addr = %listener.local_addr()?, "listening");
            let state = Arc::new(AppState::new(config)?);
            server::serve(listener, state, shutdown_signal()).await?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
