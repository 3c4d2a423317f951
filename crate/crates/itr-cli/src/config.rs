//! TOML run configuration and error-to-exit-code mapping.

use serde::Deserialize;
use std::path::Path;

use itr::learners::KernelConfig;
use itr::sim::{ScenarioConfig, ScenarioKind};
use itr::tuning::TuningGrid;

/// Exit codes: 1 usage/config, 2 data, 3 numerical failure.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<itr::Error> for CliError {
    fn from(e: itr::Error) -> Self {
        match &e {
            itr::Error::Numerical(_) | itr::Error::DegenerateInput(_) => Self::numerical(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// "linear" or "nonlinear".
    pub kind: String,
    /// rho (linear) or tau (nonlinear).
    pub similarity: f64,
    pub n1: usize,
    pub n2: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

fn default_reps() -> usize {
    200
}

fn default_test_size() -> usize {
    100_000
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub lambdas: Option<Vec<f64>>,
    pub kappa_multipliers: Option<Vec<f64>>,
    pub folds: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// "linear" or "rbf".
    pub kind: Option<String>,
    /// "median" or a fixed positive sigma.
    pub bandwidth: Option<toml::Value>,
    pub standardize: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn scenario(&self) -> CliResult<ScenarioConfig> {
        let s = self
            .scenario
            .as_ref()
            .ok_or_else(|| CliError::usage("config is missing the [scenario] section"))?;
        let kind = match s.kind.as_str() {
            "linear" => ScenarioKind::LinearInteraction,
            "nonlinear" => ScenarioKind::NonlinearInteraction,
            other => {
                return Err(CliError::usage(format!(
                    "scenario kind must be \"linear\" or \"nonlinear\", got \"{other}\""
                )))
            }
        };
        let config = ScenarioConfig {
            kind,
            similarity: s.similarity,
            n1: s.n1,
            n2: s.n2,
            replications: s.replications,
            base_seed: s.base_seed,
            test_size: s.test_size,
        };
        config.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(config)
    }

    pub fn grid(&self, fold_seed: u64) -> TuningGrid {
        let mut grid = TuningGrid { fold_seed, ..TuningGrid::default() };
        if let Some(l) = &self.tuning.lambdas {
            grid.lambdas = l.clone();
        }
        if let Some(k) = &self.tuning.kappa_multipliers {
            grid.kappa_multipliers = k.clone();
        }
        if let Some(f) = self.tuning.folds {
            grid.folds = f;
        }
        grid
    }

    pub fn kernel(&self, cli_kernel: Option<&str>) -> CliResult<KernelConfig> {
        let kind = cli_kernel
            .map(str::to_string)
            .or_else(|| self.kernel.kind.clone())
            .unwrap_or_else(|| "linear".into());
        match kind.as_str() {
            "linear" => Ok(KernelConfig::Linear),
            "rbf" => match &self.kernel.bandwidth {
                None => Ok(KernelConfig::RbfMedian),
                Some(toml::Value::String(s)) if s == "median" => Ok(KernelConfig::RbfMedian),
                Some(toml::Value::Float(v)) if *v > 0.0 => Ok(KernelConfig::RbfFixed(*v)),
                Some(toml::Value::Integer(v)) if *v > 0 => Ok(KernelConfig::RbfFixed(*v as f64)),
                Some(other) => Err(CliError::usage(format!(
                    "kernel bandwidth must be \"median\" or a positive number, got {other}"
                ))),
            },
            other => Err(CliError::usage(format!(
                "kernel must be \"linear\" or \"rbf\", got \"{other}\""
            ))),
        }
    }
}
