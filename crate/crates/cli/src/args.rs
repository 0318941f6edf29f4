//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ota4_core::engine::FrequencyGrid;
use ota4_core::units::parse_eng;

#[derive(Debug, Parser)]
#[command(name = "ota4", version, about = "Four-stage single-Miller OTA macromodel analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    /// Aligned plain text.
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Write data here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArg {
    /// JSON model file; the shipped reference model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Loads {
    /// Load capacitance, e.g. `1n` (repeatable). Default 1 nF.
    #[arg(long = "cl", value_parser = parse_load, allow_hyphen_values = true)]
    pub cl: Vec<f64>,
}

impl Loads {
    pub fn or(&self, default: &[f64]) -> Vec<f64> {
        if self.cl.is_empty() {
            default.to_vec()
        } else {
            self.cl.clone()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Criteria {
    /// Damping target of the non-dominant pair.
    #[arg(long, default_value_t = 0.5, value_parser = parse_positive)]
    pub xi: f64,
    /// Phase-margin target in degrees.
    #[arg(long, default_value_t = 45.0, value_parser = parse_pm)]
    pub pm: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Open-loop Bode sweep.
    Ac {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        /// Frequency grid `fmin:fmax:points_per_decade`.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<FrequencyGrid>,
        #[command(flatten)]
        output: Output,
    },
    /// Poles, zeros and pole-zero doublets.
    Poles {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        /// Relative pole-zero distance reported as a doublet.
        #[arg(long, default_value_t = 0.1, value_parser = parse_positive)]
        doublet_tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Closed-form coefficients, damping and phase margin.
    Approx {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        #[command(flatten)]
        output: Output,
    },
    /// Closed forms against the exact network.
    Xvalidate {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        #[command(flatten)]
        output: Output,
    },
    /// Load-capacitance range meeting the damping and phase-margin targets.
    Loadrange {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        criteria: Criteria,
        #[command(flatten)]
        output: Output,
    },
    /// Small-signal unity-gain step response.
    Step {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        /// Step height in volts.
        #[arg(long, default_value = "25m", value_parser = parse_nonzero, allow_hyphen_values = true)]
        amplitude: f64,
        /// Simulated time in seconds.
        #[arg(long, default_value = "60u", value_parser = parse_positive)]
        tend: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Slew-rate prediction and current-clamped step.
    Slew {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        /// Step height in volts; both polarities are simulated.
        #[arg(long, default_value = "300m", value_parser = parse_nonzero, allow_hyphen_values = true)]
        amplitude: f64,
        #[arg(long, default_value = "100u", value_parser = parse_positive)]
        tend: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Monte-Carlo statistics of A0, GBW and phase margin.
    Mc {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of samples.
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        /// Relative standard deviation of every parameter.
        #[arg(long, default_value = "0.02", value_parser = parse_fraction)]
        sigma: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Figures of merit ranked against the comparison table.
    Fom {
        /// Gain-bandwidth product in MHz.
        #[arg(long, value_parser = parse_positive)]
        gbw: f64,
        /// Slew rate in V/us.
        #[arg(long, value_parser = parse_positive)]
        sr: Option<f64>,
        /// Largest stable load in pF.
        #[arg(long, value_parser = parse_positive)]
        clmax: f64,
        /// Quiescent power in uW.
        #[arg(long, value_parser = parse_positive)]
        power: f64,
        #[arg(long, default_value_t = 4)]
        stages: u32,
        /// Supply voltage in volts.
        #[arg(long, default_value_t = 0.6, value_parser = parse_positive)]
        vdd: f64,
        /// Comparison table in JSON; the bundled table when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Summary of small-signal, load-range and slew figures.
    Report {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        #[command(flatten)]
        criteria: Criteria,
        #[command(flatten)]
        output: Output,
    },
    /// Parses a model and evaluates the validity checks.
    Check {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        loads: Loads,
        #[arg(long, default_value_t = 10.0, value_parser = parse_positive)]
        margin: f64,
        #[command(flatten)]
        output: Output,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ac { .. } => "ac",
            Command::Poles { .. } => "poles",
            Command::Approx { .. } => "approx",
            Command::Xvalidate { .. } => "xvalidate",
            Command::Loadrange { .. } => "loadrange",
            Command::Step { .. } => "step",
            Command::Slew { .. } => "slew",
            Command::Mc { .. } => "mc",
            Command::Fom { .. } => "fom",
            Command::Report { .. } => "report",
            Command::Check { .. } => "check",
        }
    }
}

fn eng(s: &str) -> Result<f64, String> {
    parse_eng(s).map_err(|e| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v = eng(s)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {s}"))
    }
}

fn parse_load(s: &str) -> Result<f64, String> {
    parse_positive(s).map_err(|_| format!("load capacitance must be positive, got {s}"))
}

fn parse_nonzero(s: &str) -> Result<f64, String> {
    let v = eng(s)?;
    if v != 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be non-zero, got {s}"))
    }
}

fn parse_pm(s: &str) -> Result<f64, String> {
    let v = eng(s)?;
    if v > 0.0 && v < 90.0 {
        Ok(v)
    } else {
        Err(format!("phase margin must lie in (0, 90) degrees, got {s}"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = eng(s)?;
    if (0.0..0.5).contains(&v) {
        Ok(v)
    } else {
        Err(format!("sigma must lie in [0, 0.5), got {s}"))
    }
}

pub fn parse_grid(s: &str) -> Result<FrequencyGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [fmin, fmax, ppd] = parts[..] else {
        return Err(format!("expected fmin:fmax:ppd, got {s}"));
    };
    let ppd: usize = ppd
        .trim()
        .parse()
        .map_err(|_| format!("points per decade must be a positive integer, got {ppd}"))?;
    FrequencyGrid::new(eng(fmin)?, eng(fmax)?, ppd).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn grammar_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn value_parsers() {
        assert_eq!(parse_load("10.5p").unwrap(), 10.5e-12);
        assert!(parse_load("-5p").is_err());
        assert!(parse_load("0").is_err());
        assert!(parse_pm("90").is_err());
        let g = parse_grid("1:1M:10").unwrap();
        assert_eq!((g.fmin, g.fmax, g.points_per_decade), (1.0, 1e6, 10));
        assert!(parse_grid("1:1M").is_err());
        assert!(parse_grid("1M:1:10").is_err());
        assert!(parse_grid("1:1M:x").is_err());
    }

    #[test]
    fn defaults() {
        let cli = Cli::try_parse_from(["ota4", "loadrange"]).unwrap();
        match cli.command {
            Command::Loadrange { criteria, output, .. } => {
                assert_eq!((criteria.xi, criteria.pm), (0.5, 45.0));
                assert_eq!(output.format, Format::Csv);
            }
            _ => unreachable!(),
        }
        let cli = Cli::try_parse_from(["ota4", "ac", "--cl", "1n", "--cl", "10p"]).unwrap();
        match cli.command {
            Command::Ac { loads, .. } => assert_eq!(loads.cl, vec![1e-9, 10e-12]),
            _ => unreachable!(),
        }
    }
}
