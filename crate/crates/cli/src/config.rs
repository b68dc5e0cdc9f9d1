use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanModeArg {
    EqualFidelity,
    EqualTransmissivity,
}

/// Parameters shared by every subcommand. Each may also come from the
/// `--config` JSON file (kebab-case keys); flags win.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Params {
    /// Resource squeezing strength
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Beam-splitter transmissivities, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Minimum per-round fidelity
    #[arg(long, global = true)]
    pub f_min: Option<f64>,
    /// Probe variances per round (same for both observers), comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub omega_sq: Option<Vec<f64>>,
    /// Common per-round ζ for the equal-ζ chain
    #[arg(long, global = true)]
    pub zeta_target: Option<f64>,
    /// Sample counts, comma separated (per readout quadrature for ζ)
    #[arg(long, global = true, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Grid resolution `NxM` (first axis x second axis)
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Output file (stdout when absent)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Planner for `teleport-plan`
    #[arg(long, global = true, value_enum)]
    pub mode: Option<PlanModeArg>,
    /// Round to simulate in `teleport-sim` (default: last)
    #[arg(long, global = true)]
    pub round: Option<usize>,
    /// Coherent input amplitude, x quadrature
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub x: Option<f64>,
    /// Coherent input amplitude, p quadrature
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub p: Option<f64>,
}

macro_rules! prefer {
    ($flags:ident, $file:ident; $($field:ident),*) => {
        Params { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Params {
    pub fn merge(self, file: Params) -> Params {
        let flags = self;
        prefer!(flags, file; r, tau, f_min, omega_sq, zeta_target, samples, trials, seed, grid, out, format, mode, round, x, p)
    }

    pub fn load(path: &Path) -> Result<Params, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
    }

    pub fn grid_or(&self, default: (usize, usize)) -> Result<(usize, usize), CliError> {
        match &self.grid {
            None => Ok(default),
            Some(g) => parse_grid(g),
        }
    }
}

pub fn parse_grid(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Validation(format!("grid `{text}` is not of the form NxM with N, M >= 2"));
    let (a, b) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let n: usize = a.trim().parse().map_err(|_| bad())?;
    let m: usize = b.trim().parse().map_err(|_| bad())?;
    if n < 2 || m < 2 {
        return Err(bad());
    }
    Ok((n, m))
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
