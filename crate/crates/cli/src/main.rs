// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::Parser;
use serde_json::json;
use sha2::{Digest, Sha256};

mod commands;
mod config;

use commands::{pretty, Failure, Outputs};
use config::{CommandKind, RunConfig, RunFlags};

/// Simulation and analysis of open stochastic chemical reaction networks.
#[derive(Debug, Parser)]
#[command(name = "opencrn", version)]
struct Cli {
    #[command(subcommand)]
    command: CommandKind,
    #[command(flatten)]
    flags: RunFlags,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = RunConfig::resolve(cli.command, cli.flags).map_err(Failure::Validation)?;
    let text = std::fs::read_to_string(&cfg.model_path)
        .with_context(|| format!("reading {}", cfg.model_path.display()))
        .map_err(Failure::Validation)?;
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating {}", cfg.out.display()))
        .map_err(Failure::Runtime)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cfg.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().context("starting worker threads").map_err(Failure::Runtime)?;

    let mut out = Outputs::new(&cfg.out);
    let result = pool.install(|| commands::run(&cfg, &text, &mut out));
    let artifacts: serde_json::Map<String, serde_json::Value> = out
        .written
        .iter()
        .map(|(name, bytes)| (name.clone(), json!(sha256_hex(bytes))))
        .collect();
    let manifest = json!({
        "tool": "opencrn",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.name(),
        "model_path": cfg.model_path.display().to_string(),
        "input_sha256": sha256_hex(text.as_bytes()),
        "seed": cfg.seed,
        "config": cfg,
        "rng": "ChaCha8, stream per replicate or compartment",
        "artifacts": artifacts,
        "status": match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => e.to_string(),
        },
        "summary": result.as_ref().ok(),
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    std::fs::write(cfg.out.join("manifest.json"), pretty(&manifest))
        .context("writing manifest.json")
        .map_err(Failure::Runtime)?;
    result.map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("opencrn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
