//! `ota4`: command-line analysis of the four-stage OTA macromodel.
//!
//! Exit status: 0 success, 1 analysis error, 2 usage error, 3 parse error.

mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use commands::{load_model, FomArgs, DEFAULT_CL, POLES_CL};
use error::CliError;
use ota4_core::fom::FomInputs;

/// Long flags accepted by the subcommand named in `argv`, or the
/// subcommand names when none is given.
fn valid_flags(argv: &[String]) -> String {
    let root = Cli::command();
    let sub = argv
        .iter()
        .skip(1)
        .find_map(|a| root.get_subcommands().find(|c| c.get_name() == a));
    match sub {
        Some(c) => c
            .get_arguments()
            .filter_map(|a| a.get_long())
            .map(|l| format!("--{l}"))
            .chain(["--help".to_string()])
            .collect::<Vec<_>>()
            .join(", "),
        None => root
            .get_subcommands()
            .map(|c| c.get_name().to_string())
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn parse(argv: &[String]) -> Result<Cli, ExitCode> {
    Cli::try_parse_from(argv).map_err(|e| {
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            ErrorKind::UnknownArgument | ErrorKind::InvalidSubcommand => {
                let _ = e.print();
                eprintln!("valid: {}", valid_flags(argv));
            }
            _ => {
                let _ = e.print();
            }
        }
        ExitCode::from(2)
    })
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let name = cli.command.name();
    let (report, out, ok) = match cli.command {
        Command::Ac { model, loads, grid, output } => {
            let m = load_model(model.model.as_deref())?;
            let r = commands::ac(&m, &loads.or(&DEFAULT_CL), grid.unwrap_or_default())?;
            (r, output, true)
        }
        Command::Poles { model, loads, doublet_tol, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::poles(&m, &loads.or(&POLES_CL), doublet_tol)?, output, true)
        }
        Command::Approx { model, loads, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::approx(&m, &loads.or(&DEFAULT_CL))?, output, true)
        }
        Command::Xvalidate { model, loads, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::xvalidate(&m, &loads.or(&DEFAULT_CL))?, output, true)
        }
        Command::Loadrange { model, criteria, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::loadrange(&m, &criteria)?, output, true)
        }
        Command::Step { model, loads, amplitude, tend, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::step(&m, &loads.or(&DEFAULT_CL), amplitude, tend)?, output, true)
        }
        Command::Slew { model, loads, amplitude, tend, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::slew(&m, &loads.or(&DEFAULT_CL), amplitude, tend)?, output, true)
        }
        Command::Mc { model, loads, seed, n, sigma, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::mc(&m, &loads.or(&DEFAULT_CL), seed, n as usize, sigma)?, output, true)
        }
        Command::Fom { gbw, sr, clmax, power, stages, vdd, dataset, output } => {
            let inputs = FomInputs::new(gbw, sr, clmax, power).map_err(|e| CliError::Usage(e.to_string()))?;
            let a = FomArgs { inputs, stages, vdd, dataset };
            (commands::fom(&a)?, output, true)
        }
        Command::Report { model, loads, criteria, output } => {
            let m = load_model(model.model.as_deref())?;
            (commands::report(&m, &loads.or(&DEFAULT_CL), &criteria)?, output, true)
        }
        Command::Check { model, loads, margin, output } => {
            let m = load_model(model.model.as_deref())?;
            let (r, ok) = commands::check(&m, &loads.or(&DEFAULT_CL), margin)?;
            (r, output, ok)
        }
    };
    report.emit(name, &out)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: model assumptions fail; see the validity report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
