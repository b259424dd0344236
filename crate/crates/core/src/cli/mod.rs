//! The `lenmap` command-line front end.
//!
//! `--sw` and `--sb` are standard deviations, not variances: weights have
//! variance `sw²/N` and biases variance `sb²`.
//!
//! Exit codes: 0 success (a diverged length map is a result, not an error),
//! 1 I/O or numerical failure, 2 invalid flags, 3 the length map diverges
//! where a finite reference is required.

mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::activations::Activation;
use crate::lengthmap::LengthMapError;
use crate::quadrature::QuadratureError;
use crate::simulator::SimError;
use crate::stats::StatsError;

/// Environment variable bounding the number of trial worker threads.
pub const WORKERS_ENV: &str = "LENMAP_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "lenmap",
    version,
    about = "Length maps and finite-width length processes of random networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the length map q̃_ℓ, tr_ℓ for ℓ = 0..=depth.
    Lengthmap(LengthmapArgs),
    /// Fraction of random networks whose length process stays within ε of the map.
    Converge(ConvergeArgs),
    /// Histogram and Cauchy/Gaussian fits of captured pre-activations.
    Cauchy(CauchyArgs),
    /// Cross-moment gap E[h₁²h₂²] − E[h₁²]E[h₂²] of two captured units.
    Independence(IndependenceArgs),
    /// Numerical evidence for or against permissibility of an activation.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Directory for CSV/JSON artifacts and `manifest.json`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print JSON to stdout instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LengthmapArgs {
    #[arg(long)]
    pub act: Activation,
    /// Weight standard deviation.
    #[arg(long, value_parser = nonneg)]
    pub sw: f64,
    /// Bias standard deviation.
    #[arg(long, value_parser = nonneg, default_value_t = 0.0)]
    pub sb: f64,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergeArgs {
    #[arg(long)]
    pub act: Activation,
    #[arg(long, value_parser = nonneg)]
    pub sw: f64,
    #[arg(long, value_parser = nonneg, default_value_t = 0.0)]
    pub sb: f64,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Network width; repeat for several, in increasing order.
    #[arg(long = "width", default_values_t = [64usize, 256, 1024])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: u64,
    #[arg(long, value_parser = positive, default_value_t = 0.15)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CauchyArgs {
    #[arg(long, default_value = "reciprocal")]
    pub act: Activation,
    #[arg(long, value_parser = nonneg, default_value_t = 1.0)]
    pub sw: f64,
    #[arg(long, value_parser = nonneg, default_value_t = 0.0)]
    pub sb: f64,
    /// Network width; repeat for several.
    #[arg(long = "width", default_values_t = [10usize, 100, 1000])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `layer:all` or `layer:u1,u2,...` (1-based layer, 0-based units).
    #[arg(long, default_value = "2:all")]
    pub capture: CaptureArg,
    /// Raw values kept per width for the fits.
    #[arg(long, default_value_t = 100_000)]
    pub max_samples: usize,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Histogram range `lo:hi`; default `±10·√N` per width.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<RangeArg>,
    /// KS reference: `sqrt-n` for Cauchy(0, √N) or `fit` for the fitted families.
    #[arg(long, default_value = "sqrt-n")]
    pub reference: ReferenceArg,
    /// Also write one histogram per random initialization.
    #[arg(long)]
    pub per_init: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndependenceArgs {
    #[arg(long, default_value = "relu")]
    pub act: Activation,
    #[arg(long, value_parser = nonneg, default_value_t = 1.0)]
    pub sw: f64,
    #[arg(long, value_parser = nonneg, default_value_t = 0.0)]
    pub sb: f64,
    #[arg(long, default_value_t = 10)]
    pub width: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Two units of one layer, `layer:a,b`.
    #[arg(long, default_value = "2:0,1")]
    pub capture: CaptureArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub act: Activation,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parsed `--capture` value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureArg {
    pub layer: usize,
    pub units: Option<Vec<usize>>,
}

impl FromStr for CaptureArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (layer, units) = s
            .split_once(':')
            .ok_or_else(|| format!("expected layer:unit, got `{s}`"))?;
        let layer: usize = layer
            .parse()
            .map_err(|_| format!("bad layer `{layer}`"))?;
        if layer == 0 {
            return Err("capture layer is 1-based".into());
        }
        let units = if units == "all" {
            None
        } else {
            let parsed: Result<Vec<usize>, _> = units.split(',').map(str::parse).collect();
            Some(parsed.map_err(|_| format!("bad unit list `{units}`"))?)
        };
        Ok(CaptureArg { layer, units })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeArg {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for RangeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
        let lo: f64 = lo.parse().map_err(|_| format!("bad bound `{lo}`"))?;
        let hi: f64 = hi.parse().map_err(|_| format!("bad bound `{hi}`"))?;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(format!("need finite lo < hi, got {lo}:{hi}"));
        }
        Ok(RangeArg { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceArg {
    SqrtN,
    Fit,
}

impl FromStr for ReferenceArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sqrt-n" => Ok(ReferenceArg::SqrtN),
            "fit" => Ok(ReferenceArg::Fit),
            _ => Err(format!("expected `sqrt-n` or `fit`, got `{s}`")),
        }
    }
}

fn nonneg(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("not a number: `{s}`"))?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be finite and >= 0, got {x}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let x = nonneg(s)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err("must be > 0".into())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("length map diverges at layer {0}; a finite reference is required")]
    MapDiverged(usize),
    #[error("{0}")]
    Failure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MapDiverged(_) => 3,
            CliError::Failure(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            SimError::Overflow { .. } => CliError::Failure(e.to_string()),
        }
    }
}

impl From<LengthMapError> for CliError {
    fn from(e: LengthMapError) -> Self {
        match e {
            LengthMapError::InvalidArgument(_)
            | LengthMapError::Quadrature(QuadratureError::InvalidArgument(_)) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::MapDiverged { layer } => CliError::MapDiverged(layer),
            StatsError::Simulation(s) => s.into(),
            StatsError::LengthMap(l) => l.into(),
            StatsError::InsufficientSamples { .. }
            | StatsError::DegenerateSample
            | StatsError::UnsupportedActivation(_)
            | StatsError::InvalidArgument(_) => CliError::Usage(e.to_string()),
        }
    }
}

/// Reads `LENMAP_WORKERS`; unset means all available cores.
pub fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Runs the command line in `args` (program name first), writing results to
/// stdout, and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = workers_from_env().and_then(|workers| commands::dispatch(&cli.command, workers));
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("lenmap: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_and_range_parsing() {
        assert_eq!(
            "2:all".parse::<CaptureArg>().unwrap(),
            CaptureArg { layer: 2, units: None }
        );
        assert_eq!(
            "3:0,7".parse::<CaptureArg>().unwrap(),
            CaptureArg { layer: 3, units: Some(vec![0, 7]) }
        );
        assert!("0:1".parse::<CaptureArg>().is_err());
        assert!("2".parse::<CaptureArg>().is_err());
        assert!("2:x".parse::<CaptureArg>().is_err());
        let r: RangeArg = "-5:2.5".parse().unwrap();
        assert_eq!((r.lo, r.hi), (-5.0, 2.5));
        assert!("3:1".parse::<RangeArg>().is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "lenmap", "converge", "--act", "relu", "--sw", "1.4", "--width", "10", "--width", "20",
        ])
        .unwrap();
        match cli.command {
            Command::Converge(a) => {
                assert_eq!(a.widths, vec![10, 20]);
                assert_eq!(a.sb, 0.0);
                assert_eq!(a.eps, 0.15);
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["lenmap", "lengthmap", "--act", "relu", "--sw", "-1"]).is_err());
        assert!(Cli::try_parse_from(["lenmap", "lengthmap", "--act", "softmax", "--sw", "1"]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_from(["lenmap", "bogus"]), 2);
        assert_eq!(run_from(["lenmap", "lengthmap", "--act", "relu"]), 2);
        assert_eq!(CliError::MapDiverged(1).exit_code(), 3);
    }
}
