//! `manidecomp`: group categories into domains, label sentences, compare
//! parties per domain, and evaluate the result.
//!
//! Errors are printed to stderr as one JSON object
//! `{"error": <kind>, "message": <text>}`. Exit codes: 0 success, 1 internal
//! failure, 2 bad input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{LabelMode, LabelSource};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "manidecomp", version, about = "Policy-domain party distances from embedded manifesto sentences")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for labeller initialisation and Mantel permutations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster category codes into policy domains.
    Group,
    /// Train, apply or score the domain labeller.
    Label {
        #[arg(value_enum)]
        mode: LabelMode,
    },
    /// Per-domain and aggregate party distance matrices.
    Similarity {
        #[arg(long, value_enum, default_value = "annotated")]
        labels: LabelSource,
    },
    /// Scaling, ground-truth correlations and setup comparison.
    Evaluate,
}

/// A failed run: exit code plus the JSON error body.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn internal(message: String) -> Self {
        Failure {
            code: 1,
            kind: "internal".into(),
            message,
        }
    }

    fn user(kind: &str, message: String) -> Self {
        Failure {
            code: 2,
            kind: kind.into(),
            message,
        }
    }
}

impl From<manidecomp::Error> for Failure {
    fn from(e: manidecomp::Error) -> Self {
        let code = match e {
            manidecomp::Error::Serde(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::user("argument", "--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::internal(e.to_string()))?;
    }
    let path = cli
        .config
        .ok_or_else(|| Failure::user("argument", "--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.labeller.seed = Some(seed);
    }
    match cli.command {
        Command::Group => commands::group(&cfg),
        Command::Label { mode } => commands::label(&cfg, mode),
        Command::Similarity { labels } => commands::similarity(&cfg, labels),
        Command::Evaluate => commands::evaluate(&cfg, cli.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&Failure::user("argument", e.to_string().trim().to_owned()));
            return ExitCode::from(2);
        }
    };
    // the panic is reported as JSON below
    std::panic::set_hook(Box::new(|_| {}));
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            report(&f);
            ExitCode::from(f.code)
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            report(&Failure::internal(message));
            ExitCode::from(1)
        }
    }
}

fn report(f: &Failure) {
    let body = serde_json::json!({ "error": f.kind, "message": f.message });
    eprintln!("{body}");
}
