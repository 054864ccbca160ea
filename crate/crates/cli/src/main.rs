use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use swarmledger_cli::report::{render_text, summarize};
use swarmledger_cli::{exit_code, load_config, run, RunMetrics};
use swarmledger_core::ledger::dump::validate_dumps;

#[derive(Parser)]
#[command(name = "swarmledger", version, about = "Deterministic swarm-robotics ledger simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and write its artifacts.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; falls back to $SWARMLEDGER_OUT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics.json files per scenario.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Validate chain dumps; dumps of sibling chains should be passed together.
    ValidateChain {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<u8> {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let root = out
                .or_else(|| std::env::var_os("SWARMLEDGER_OUT").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            let dir = root.join(format!("{stem}-seed{}", cfg.seed));
            let m = run(&cfg, &dir)?;
            println!("{}: {}", dir.display(), m.status);
            if let Some(r) = &m.reason {
                println!("reason: {r}");
            }
            Ok(exit_code(&m) as u8)
        }
        Cmd::Report { files, json } => {
            let mut loaded = Vec::new();
            for f in &files {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                let m: RunMetrics =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
                loaded.push((f.display().to_string(), m));
            }
            let groups = summarize(&loaded);
            if json {
                println!("{}", serde_json::to_string_pretty(&groups)?);
            } else {
                print!("{}", render_text(&groups));
            }
            Ok(0)
        }
        Cmd::ValidateChain { dumps } => {
            let mut bytes = Vec::new();
            for d in &dumps {
                bytes.push(std::fs::read(d).with_context(|| format!("reading {}", d.display()))?);
            }
            let mut failed = false;
            for (path, res) in dumps.iter().zip(validate_dumps(&bytes)) {
                match res {
                    Ok(p) => println!("ok   {} (chain {})", path.display(), p.chain_id),
                    Err(f) => {
                        failed = true;
                        println!("FAIL {}: {f}", path.display());
                    }
                }
            }
            Ok(failed as u8)
        }
    }
}
