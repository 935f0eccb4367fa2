//! Run configuration: flags merged over an optional TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// Parse and check a model or network document.
    Validate,
    /// Count-level stochastic simulation (or ensemble with --replicates).
    Simulate,
    /// Energy-resolved particle simulation.
    ParticleSimulate,
    /// Integrate the mean-field ODE.
    Meanfield,
    /// Free energy and entropy along the mean-field flow.
    Thermo,
    /// Solve for a fixed point and classify its stability.
    Fixpoint,
    /// Recurrence class of a two-species open unary model.
    Classify,
    /// Simulate a compartment network and its delay equations.
    Network,
    /// Fixed points of a network across transport scales.
    Sweep,
    /// Ensemble mean against the mean-field solution.
    Compare,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Validate => "validate",
            CommandKind::Simulate => "simulate",
            CommandKind::ParticleSimulate => "particle-simulate",
            CommandKind::Meanfield => "meanfield",
            CommandKind::Thermo => "thermo",
            CommandKind::Fixpoint => "fixpoint",
            CommandKind::Classify => "classify",
            CommandKind::Network => "network",
            CommandKind::Sweep => "sweep",
            CommandKind::Compare => "compare",
        }
    }
}

/// Flags shared by every command. Unset flags fall back to the config file
/// and then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// TOML file with any of the options below (flags win).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model or network JSON document.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    /// Integrator step for mean-field commands.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Number of sample times on [0, t_end], endpoints included.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Worker threads for replicates; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace rate constants by their energy-gated effective values.
    #[arg(long, global = true)]
    pub effective_rates: bool,
    /// Use the energy-resolved engine in `simulate`.
    #[arg(long, global = true)]
    pub energy: bool,
    #[arg(long, global = true)]
    pub event_budget: Option<u64>,
    /// Comma-separated transport scales for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Comma-separated starting point for `fixpoint` and `sweep`.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    model: Option<PathBuf>,
    t_end: Option<f64>,
    dt: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    replicates: Option<usize>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    effective_rates: Option<bool>,
    energy: Option<bool>,
    event_budget: Option<u64>,
    scales: Option<Vec<f64>>,
    guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model_path: PathBuf,
    pub t_end: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    pub replicates: usize,
    /// Not part of the result; recorded for reference only.
    #[serde(skip)]
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub effective_rates: bool,
    pub energy: bool,
    pub event_budget: u64,
    pub scales: Vec<f64>,
    pub guess: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn resolve(command: CommandKind, flags: RunFlags) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let model_path = flags
            .model
            .or(file.model)
            .context("no model given (use --model or `model` in the config file)")?;
        let cfg = RunConfig {
            command,
            model_path,
            t_end: flags.t_end.or(file.t_end).unwrap_or(10.0),
            dt: flags.dt.or(file.dt).unwrap_or(1e-3),
            samples: flags.samples.or(file.samples).unwrap_or(101),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            replicates: flags.replicates.or(file.replicates).unwrap_or(1),
            jobs: flags.jobs.or(file.jobs),
            out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            effective_rates: flags.effective_rates || file.effective_rates.unwrap_or(false),
            energy: flags.energy || file.energy.unwrap_or(false),
            event_budget: flags.event_budget.or(file.event_budget).unwrap_or(200_000_000),
            scales: flags
                .scales
                .or(file.scales)
                .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            guess: flags.guess.or(file.guess),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> anyhow::Result<()> {
        if !self.model_path.exists() {
            bail!("model file {} does not exist", self.model_path.display());
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            bail!("--t-end must be positive");
        }
        if !(self.dt > 0.0) {
            bail!("--dt must be positive");
        }
        if self.samples < 2 {
            bail!("--samples must be at least 2");
        }
        if self.replicates == 0 {
            bail!("--replicates must be at least 1");
        }
        if self.jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        if self.event_budget == 0 {
            bail!("--event-budget must be positive");
        }
        if self.scales.iter().any(|s| !(*s >= 0.0)) {
            bail!("--scales must be nonnegative");
        }
        Ok(())
    }
}

fn load_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
