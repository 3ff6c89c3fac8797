use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use mourrekit::scenario::{self, Scenario};
use mourrekit::suite::{self, Outcome};
use mourrekit::Error;

#[derive(Parser)]
#[command(name = "mourrekit", version, about = "Conjugate-operator estimates for relativistic two-particle fibers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or the name of a bundled scenario).
    Run {
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List bundled scenarios.
    List,
}

enum Failure {
    Config(String),
    Invariant(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", scenario::list_scenarios());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, threads, seed } => match run(&config, &out, threads, seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(Failure::Config(msg)) => {
                eprintln!("config error: {msg}");
                ExitCode::from(2)
            }
            Err(Failure::Invariant(msg)) => {
                eprintln!("invariant failed: {msg}");
                ExitCode::from(1)
            }
            Err(Failure::Other(e)) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn load(config: &str) -> Result<(String, String), Failure> {
    let path = Path::new(config);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{config}: {e}")))?;
        return Ok((config.to_string(), text));
    }
    match scenario::bundled(config) {
        Some(b) => Ok((format!("bundled:{}", b.name), b.text.to_string())),
        None => Err(Failure::Config(format!("{config}: no such file or bundled scenario"))),
    }
}

fn run(config: &str, out: &Path, threads: Option<usize>, seed: Option<u64>) -> Result<(), Failure> {
    let (origin, text) = load(config)?;
    let mut sc = Scenario::parse(&text).map_err(|e| Failure::Config(format!("{origin}: {e}")))?;
    if let Ok(v) = std::env::var("MOURREKIT_BUDGET") {
        sc.grid.budget = v
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("MOURREKIT_BUDGET: cannot parse `{v}`")))?;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }

    let outcome = suite::run(&sc).map_err(|e| match e {
        Error::Parse(_)
        | Error::InvalidParameter(_)
        | Error::InvalidGrid(_)
        | Error::BudgetExceeded { .. }
        | Error::ActiveBoundary(_) => Failure::Config(e.to_string()),
        Error::Consistency(msg) => Failure::Invariant(msg),
        other => Failure::Other(other.into()),
    })?;
    for (label, secs) in &outcome.timings {
        eprintln!("timing {label} {secs:.3}s");
    }
    write_outputs(&outcome, out)?;
    for c in &outcome.report.checks {
        println!(
            "{} {:4} {:<40} value {:.6e} tolerance {:.6e}",
            if c.passed { "PASS" } else { "FAIL" },
            if c.hard { "hard" } else { "soft" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    let failed = outcome.report.failed_hard();
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = failed.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        Err(Failure::Invariant(names.join("; ")))
    }
}

fn write_outputs(outcome: &Outcome, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut json = serde_json::to_string_pretty(&outcome.report).context("serializing the report")?;
    json.push('\n');
    files.push(("report.json".into(), json.into_bytes()));
    for c in &outcome.curves {
        files.push((c.file.clone(), c.contents.clone().into_bytes()));
    }
    files.sort();
    let mut manifest = String::new();
    for (name, bytes) in &files {
        fs::write(out.join(name), bytes).with_context(|| format!("writing {name}"))?;
        manifest.push_str(&format!("{}  {name}\n", hex::encode(Sha256::digest(bytes))));
    }
    fs::write(out.join("manifest.txt"), manifest).context("writing manifest.txt")?;
    Ok(())
}
