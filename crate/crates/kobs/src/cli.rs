//! Command-line surface. Flags override the configuration file, which
//! overrides the built-in defaults.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{check_out_dir, BackendName, RunConfig, SystemName};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kobs", version, about = "Koopman models with outputs: training, observable decomposition and state sensitivity ranking")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub system: Option<SystemName>,
    /// Number of initial conditions (multiple of 3).
    #[arg(long, global = true, value_name = "N")]
    pub n_ic: Option<usize>,
    /// Seed of the initial-condition draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model parameter override, repeatable.
    #[arg(long = "set", global = true, value_name = "NAME=VALUE")]
    pub set: Vec<String>,
    /// Existing directory that receives the output files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured system and write trajectories.
    Simulate,
    /// Grid-search a Koopman model with an output equation.
    Train(TrainArgs),
    /// Decompose trained models per output and rank the states.
    Rank(RankArgs),
    /// Fit delay-embedded models from outputs and reconstruct the state.
    Delay(DelayArgs),
    /// Check the pipeline against the closed-form Koopman system.
    Verify(VerifyArgs),
    /// Summarize the tables in a run directory as markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `simulate`; the configured system is simulated otherwise.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendName>,
    /// Base seed of network initialization.
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Replaces the epoch list of the grid.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Model files from `train`; several are averaged.
    #[arg(long, required = true, num_args = 1.., value_name = "FILE")]
    pub model: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Rank only this output (1-based).
    #[arg(long, value_name = "J")]
    pub output_index: Option<usize>,
    /// Output r² the reduced model must reach.
    #[arg(long, default_value_t = 0.99)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct DelayArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output subset such as `1,2,3`, repeatable. The first subset selects the
    /// delay count; the others reuse it.
    #[arg(long = "outputs", value_name = "LIST")]
    pub outputs: Vec<String>,
    /// Delay counts to try, e.g. `1,2,3`.
    #[arg(long, value_name = "LIST")]
    pub delays: Option<String>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training epochs of the state reconstruction networks.
    #[arg(long)]
    pub diffeo_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Use a = sqrt(0.5), b = 0.5, gamma = 0.7, where a^2 = b.
    #[arg(long, conflicts_with_all = ["a", "b", "gamma"])]
    pub degenerate: bool,
    /// Noise level of the noisy-recovery check.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Tolerance override such as `k_recovery=1e-8`, repeatable.
    #[arg(long, value_name = "NAME=VALUE")]
    pub tolerance: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory; defaults to the output directory.
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
}

pub(crate) fn parse_assignment(s: &str) -> Result<(String, f64), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected NAME=VALUE, got `{s}`")))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("`{v}` is not a number in `{s}`")))?;
    if !v.is_finite() {
        return Err(CliError::Usage(format!("`{s}` is not finite")));
    }
    Ok((k.trim().to_string(), v))
}

pub(crate) fn parse_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("`{p}` in `{s}` is not a non-negative integer")))
        })
        .collect()
}

impl Cli {
    /// Configuration file plus flag overrides, validated.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.system {
            cfg.system = s;
        }
        if let Some(n) = self.n_ic {
            cfg.n_ic = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        for a in &self.set {
            let (k, v) = parse_assignment(a)?;
            cfg.params.insert(k, v);
        }
        match &self.command {
            Command::Train(t) => {
                if let Some(b) = t.backend {
                    cfg.backend = b;
                }
                if let Some(s) = t.train_seed {
                    cfg.train_seed = s;
                }
                if let Some(e) = t.epochs {
                    cfg.grid.epochs = vec![e];
                }
            }
            Command::Delay(d) => {
                if let Some(s) = d.train_seed {
                    cfg.train_seed = s;
                }
                if let Some(e) = d.epochs {
                    cfg.grid.epochs = vec![e];
                }
                if let Some(e) = d.diffeo_epochs {
                    cfg.diffeo.epochs = e;
                }
                if let Some(l) = &d.delays {
                    cfg.delay.delays = parse_list(l)?;
                }
                if !d.outputs.is_empty() {
                    cfg.delay.subsets = d.outputs.iter().map(|s| parse_list(s)).collect::<Result<_, _>>()?;
                }
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<(), CliError> {
        let cfg = self.resolve()?;
        commands::threads()?;
        if let Command::Report(r) = &self.command {
            return commands::report(r.dir.as_deref().unwrap_or(&cfg.out_dir));
        }
        if let Command::Verify(v) = &self.command {
            if self.out.is_some() {
                check_out_dir(&cfg.out_dir)?;
            }
            return commands::verify(&cfg, v, self.out.as_deref());
        }
        check_out_dir(&cfg.out_dir)?;
        match &self.command {
            Command::Simulate => commands::simulate(&cfg),
            Command::Train(t) => commands::train(&cfg, t.data.as_deref()),
            Command::Rank(r) => commands::rank(&cfg, r),
            Command::Delay(d) => commands::delay(&cfg, d.data.as_deref()),
            Command::Verify(_) | Command::Report(_) => unreachable!(),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    cli.execute()
}
