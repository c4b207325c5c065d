use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use delve_core::config::BackendKind;
use delve_core::runtime::{replay_file, run_query, ReplayError};
use delve_core::trace::TraceSink;
use delve_core::trajectory::{Attachment, UserQuery};
use delve_core::{load_config, Config, FinalReport};

const EXIT_OTHER: u8 = 1;
const EXIT_REPLAY_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "delve", version, about = "Run and replay deep-research agent sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one query.
    Run {
        #[arg(long)]
        query: String,
        /// Attached file; repeatable.
        #[arg(long = "file")]
        files: Vec<PathBuf>,
        /// TOML configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `backend.kind` from the configuration.
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        /// Scripted fixture (JSONL); overrides `backend.fixture`.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Where to write the JSONL trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Re-execute a recorded trace and check that it reproduces exactly.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn print_report(report: &FinalReport, format: Format) -> anyhow::Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(report)?),
        Format::Text => {
            println!("status: {}", serde_json::to_value(report.status)?.as_str().unwrap_or("?"));
            println!(
                "rounds: {}  tool calls: {}  resets: {}  anomalies: {}  elapsed: {} ms{}",
                report.stats.rounds,
                report.stats.tool_calls,
                report.stats.resets,
                report.stats.anomalies,
                report.stats.elapsed_ms,
                if report.stats.best_effort { "  (best effort)" } else { "" }
            );
            if let Some(d) = &report.diagnostic {
                println!("diagnostic: {d}");
            }
            println!("trace: {}", report.trace_ref);
            println!("\n{}", report.answer);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    query: String,
    files: Vec<PathBuf>,
    config: Option<PathBuf>,
    backend: Option<BackendArg>,
    fixture: Option<PathBuf>,
    trace: Option<PathBuf>,
    format: Format,
) -> anyhow::Result<u8> {
    let mut cfg = match &config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(b) = backend {
        cfg.backend.kind = match b {
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Http => BackendKind::Http,
        };
    }
    if let Some(f) = fixture {
        cfg.backend.fixture = Some(std::path::absolute(&f)?);
    }
    if let Some(missing) = files.iter().find(|f| !f.exists()) {
        anyhow::bail!("attachment not found: {}", missing.display());
    }
    let attachments = files.into_iter().map(Attachment::from_path).collect();
    let query = UserQuery::new(query, attachments)?;
    let (sink, trace_ref) = match &trace {
        Some(p) => (
            TraceSink::file(p).with_context(|| format!("cannot create trace {}", p.display()))?,
            p.display().to_string(),
        ),
        None => (TraceSink::null(), "none".to_string()),
    };
    let outcome = run_query(cfg, query, sink, &trace_ref)?;
    print_report(&outcome.report, format)?;
    Ok(outcome.report.status.exit_code() as u8)
}

fn replay(trace: PathBuf) -> u8 {
    match replay_file(&trace) {
        Ok(r) => match r.divergence {
            None => {
                println!("replay identical: {} records", r.recorded.len());
                0
            }
            Some((i, why)) => {
                eprintln!("replay diverged at record {}: {why}", i + 1);
                EXIT_REPLAY_DIVERGED
            }
        },
        Err(ReplayError::Trace(e)) => {
            eprintln!("unusable trace: {e}");
            EXIT_REPLAY_DIVERGED
        }
        Err(e) => {
            eprintln!("replay setup failed: {e}");
            EXIT_OTHER
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { query, files, config, backend, fixture, trace, format } => {
            run(query, files, config, backend, fixture, trace, format).unwrap_or_else(|e| {
                eprintln!("error: {e:#}");
                EXIT_OTHER
            })
        }
        Command::Replay { trace } => replay(trace),
    };
    ExitCode::from(code)
}
