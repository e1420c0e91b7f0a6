//! Run configuration, read from TOML and patched by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kobs_core::delayembed::DiffeoConfig;
use kobs_core::observables::{Activation, DictionaryKind};
use kobs_core::ocdmd::{Grid, StandardizeMode, TrainingMode};
use kobs_core::simulator::{builtin_analytical, builtin_example1, builtin_example2, GeneNetworkSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SystemName {
    #[default]
    Example1,
    Example2,
    Analytical,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendName {
    #[default]
    Network,
    Dictionary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub hidden: Vec<Vec<usize>>,
    pub nonlinear_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub output_weight: f64,
    pub mode: TrainingMode,
    /// Polynomial degrees tried by the dictionary backend.
    pub polynomial_degrees: Vec<u32>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = Grid::default();
        Self {
            hidden: g.hidden,
            nonlinear_dims: g.nonlinear_dims,
            activations: g.activations,
            learning_rates: g.learning_rates,
            epochs: g.epochs,
            output_weight: g.output_weight,
            mode: g.mode,
            polynomial_degrees: vec![2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    pub delays: Vec<usize>,
    /// Output subsets, 1-based; an empty list means all outputs.
    pub subsets: Vec<Vec<usize>>,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            delays: (1..=6).collect(),
            subsets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemName,
    /// Seed of the initial-condition draw.
    pub seed: u64,
    pub n_ic: usize,
    /// Base seed of the grid search; each combination derives its own.
    pub train_seed: u64,
    pub backend: BackendName,
    pub standardize: StandardizeMode,
    pub out_dir: PathBuf,
    /// Model parameter overrides by name, e.g. `alpha3` or `gamma`.
    pub params: BTreeMap<String, f64>,
    pub grid: GridConfig,
    pub delay: DelayConfig,
    pub diffeo: DiffeoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemName::Example1,
            seed: 7,
            n_ic: 30,
            train_seed: 0,
            backend: BackendName::Network,
            standardize: StandardizeMode::ZScore,
            out_dir: PathBuf::from("out"),
            params: BTreeMap::new(),
            grid: GridConfig::default(),
            delay: DelayConfig::default(),
            diffeo: DiffeoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Builtin system with the parameter overrides applied.
    pub fn spec(&self) -> Result<GeneNetworkSpec, CliError> {
        let mut spec = match self.system {
            SystemName::Example1 => builtin_example1(),
            SystemName::Example2 => builtin_example2(),
            SystemName::Analytical => builtin_analytical(0.9, 0.5, 1.0),
        };
        for (name, value) in &self.params {
            spec.set_param(name, *value).map_err(|e| {
                CliError::Usage(format!(
                    "{e}; {} parameters are: {}",
                    spec.name,
                    spec.system.param_names().join(", ")
                ))
            })?;
        }
        Ok(spec)
    }

    pub fn core_grid(&self) -> Grid {
        let g = &self.grid;
        let (hidden, dictionaries) = match self.backend {
            BackendName::Network => (g.hidden.clone(), Vec::new()),
            BackendName::Dictionary => (
                Vec::new(),
                g.polynomial_degrees
                    .iter()
                    .map(|&degree| DictionaryKind::Polynomial { degree })
                    .collect(),
            ),
        };
        Grid {
            hidden,
            nonlinear_dims: g.nonlinear_dims.clone(),
            activations: g.activations.clone(),
            learning_rates: g.learning_rates.clone(),
            epochs: g.epochs.clone(),
            output_weight: g.output_weight,
            mode: g.mode,
            dictionaries,
        }
    }

    /// Output subsets as 0-based indices; all outputs when none are listed.
    pub fn subsets(&self, output_dim: usize) -> Result<Vec<Vec<usize>>, CliError> {
        if self.delay.subsets.is_empty() {
            return Ok(vec![(0..output_dim).collect()]);
        }
        self.delay
            .subsets
            .iter()
            .map(|s| {
                if s.is_empty() {
                    return Err(CliError::Usage("empty output subset".into()));
                }
                s.iter()
                    .map(|&o| {
                        if o == 0 || o > output_dim {
                            Err(CliError::Usage(format!("output {o} out of range 1..={output_dim}")))
                        } else {
                            Ok(o - 1)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.spec()?;
        if self.n_ic < 3 || self.n_ic % 3 != 0 {
            return Err(CliError::Usage(format!(
                "n_ic must be a positive multiple of 3, got {}",
                self.n_ic
            )));
        }
        let g = &self.grid;
        let networks = g.hidden.len() * g.nonlinear_dims.len() * g.activations.len() * g.learning_rates.len() * g.epochs.len();
        let empty = match self.backend {
            BackendName::Network => networks == 0,
            BackendName::Dictionary => g.polynomial_degrees.is_empty(),
        };
        if empty {
            return Err(CliError::Usage("hyperparameter grid is empty".into()));
        }
        if self.delay.delays.is_empty() || self.delay.delays.contains(&0) {
            return Err(CliError::Usage("delay counts must be a non-empty list of positive integers".into()));
        }
        Ok(())
    }
}

/// Fails unless `dir` is an existing, writable directory.
pub fn check_out_dir(dir: &Path) -> Result<(), CliError> {
    let meta = std::fs::metadata(dir)
        .map_err(|_| CliError::Usage(format!("output directory {} does not exist", dir.display())))?;
    if !meta.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    if meta.permissions().readonly() {
        return Err(CliError::Usage(format!("output directory {} is read-only", dir.display())));
    }
    Ok(())
}
