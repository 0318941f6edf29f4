//! Report rendering and emission.

use std::fmt::Write as _;
use std::io::Write as _;

use serde_json::{json, Value};

use crate::args::{Format, Output};
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A command's result in every format it can be written in.
pub struct Report {
    pub inputs: Value,
    pub results: Value,
    pub csv: String,
    /// Falls back to `csv` when absent.
    pub text: Option<String>,
    /// Printed to standard error whatever the format.
    pub warnings: Vec<String>,
}

impl Report {
    pub fn render(&self, command: &str, format: Format) -> String {
        match format {
            Format::Csv => self.csv.clone(),
            Format::Text => self.text.clone().unwrap_or_else(|| self.csv.clone()),
            Format::Json => {
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "command": command,
                    "inputs": self.inputs,
                    "results": self.results,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialise");
                s.push('\n');
                s
            }
        }
    }

    pub fn emit(&self, command: &str, out: &Output) -> Result<(), CliError> {
        for w in &self.warnings {
            eprintln!("warning: {w}");
        }
        let body = self.render(command, out.format);
        match &out.out {
            Some(path) => std::fs::write(path, body).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            }),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(body.as_bytes())
                    .and_then(|_| stdout.flush())
                    .map_err(|source| CliError::Io {
                        path: "<stdout>".into(),
                        source,
                    })
            }
        }
    }
}

/// CSV table built row by row with LF endings.
pub struct Csv(String);

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self(format!("{}\n", header.join(",")))
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.0, "{}", cells.join(","));
    }

    pub fn finish(self) -> String {
        self.0
    }
}

/// Shortest round-trip scientific notation.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "NaN".into()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), num)
}
