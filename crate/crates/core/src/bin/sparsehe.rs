//! Command-line entry point. Exit status: 0 ok, 1 runtime failure,
//! 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sparsehe::manifest::{AccountingConfig, Experiment, Manifest, SCHEMA, SCHEMA_VERSION};
use sparsehe::runner::{self, RunOptions};
use sparsehe::{Error, Result};

#[derive(Parser)]
#[command(name = "sparsehe", version, about = "Sparse encrypted federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output root (overrides SPARSEHE_OUT and the manifest).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides SPARSEHE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated seeds replacing the manifest's list.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run any manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run a sparsity_sweep manifest.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Communication and privacy accounting; reference setting without a manifest.
    Account {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run a membership-inference manifest.
    Attack {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run a convergence manifest.
    Converge {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Paired t-test on per-seed final accuracy of two run summaries.
    Ttest { summary_a: PathBuf, summary_b: PathBuf },
    /// Print the manifest JSON schema.
    Schema,
}

fn load(path: &PathBuf) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Manifest::from_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn require(m: Manifest, kind: &str) -> Result<Manifest> {
    if m.experiment.kind() != kind {
        return Err(Error::Config(format!("this subcommand expects kind `{kind}`, manifest has `{}`", m.experiment.kind())));
    }
    Ok(m)
}

fn execute(cli: Cli) -> Result<i32> {
    let manifest = match &cli.command {
        Command::Schema => {
            print!("{SCHEMA}");
            return Ok(0);
        }
        Command::Ttest { summary_a, summary_b } => {
            let r = runner::ttest_summaries(&runner::read_json(summary_a)?, &runner::read_json(summary_b)?)?;
            println!("{}", runner::describe_ttest(&r));
            println!("{}", serde_json::to_string(&r)?);
            return Ok(0);
        }
        Command::Run { manifest } => load(manifest)?,
        Command::Sweep { manifest } => require(load(manifest)?, "sparsity_sweep")?,
        Command::Attack { manifest } => require(load(manifest)?, "mia")?,
        Command::Converge { manifest } => require(load(manifest)?, "convergence")?,
        Command::Account { manifest: Some(p) } => require(load(p)?, "accounting")?,
        Command::Account { manifest: None } => Manifest {
            schema_version: SCHEMA_VERSION,
            seeds: Vec::new(),
            output_dir: None,
            experiment: Experiment::Accounting(AccountingConfig::default()),
        },
    };
    let manifest = match cli.seed_override {
        Some(seeds) => runner::override_seeds(&manifest, seeds)?,
        None => manifest,
    };
    let opts = RunOptions::resolve(cli.out, cli.threads, &manifest)?;
    let outcome = runner::run_manifest(&manifest, &opts)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    if !outcome.kept.is_empty() {
        println!("{} existing file(s) left unchanged", outcome.kept.len());
    }
    if !outcome.failed_seeds.is_empty() {
        let err = json!({
            "error": "quorum_failure",
            "message": "every round failed to reach quorum",
            "seeds": outcome.failed_seeds,
        });
        eprintln!("{err}");
        return Ok(1);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
