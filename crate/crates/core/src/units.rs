//! Engineering-notation values.
//!
//! Grammar: optional sign, a decimal number (an exponent such as `1e-12` is
//! also accepted), then at most one scale suffix from
//! `f p n u µ m k M G`. Suffixes are case-sensitive: `m` is milli and `M`
//! is mega.

use crate::error::{OtaError, Result};

const SUFFIXES: &[(char, i32)] = &[
    ('f', -15),
    ('p', -12),
    ('n', -9),
    ('u', -6),
    ('µ', -6),
    ('μ', -6),
    ('m', -3),
    ('k', 3),
    ('M', 6),
    ('G', 9),
];

/// Parses a value such as `10.5p`, `-5p`, `200k` or `1.2e-12`.
pub fn parse_eng(text: &str) -> Result<f64> {
    let s = text.trim();
    if s.is_empty() {
        return Err(OtaError::Parse("empty value".into()));
    }
    let last = s.chars().next_back().unwrap();
    let (mantissa, exp) = match SUFFIXES.iter().find(|(c, _)| *c == last) {
        Some(&(_, exp)) => (&s[..s.len() - last.len_utf8()], exp),
        None => (s, 0),
    };
    if mantissa.is_empty() || mantissa.chars().any(|c| c.is_alphabetic() && c != 'e' && c != 'E') {
        return Err(OtaError::Parse(format!("malformed value {text:?}")));
    }
    let malformed = || OtaError::Parse(format!("malformed value {text:?}"));
    let out = if mantissa.contains(['e', 'E']) {
        mantissa.parse::<f64>().map_err(|_| malformed())? * 10f64.powi(exp)
    } else {
        // Shift the decimal exponent textually so "10u" parses to exactly 1e-5.
        let value: f64 = mantissa.parse().map_err(|_| malformed())?;
        if !value.is_finite() {
            return Err(malformed());
        }
        format!("{mantissa}e{exp}").parse::<f64>().map_err(|_| malformed())?
    };
    if !out.is_finite() {
        return Err(OtaError::Parse(format!("non-finite value {text:?}")));
    }
    Ok(out)
}

/// Formats `value` with three significant digits and an engineering suffix.
pub fn format_eng(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let table: &[(f64, &str)] = &[
        (1e9, "G"),
        (1e6, "M"),
        (1e3, "k"),
        (1.0, ""),
        (1e-3, "m"),
        (1e-6, "u"),
        (1e-9, "n"),
        (1e-12, "p"),
        (1e-15, "f"),
    ];
    let mag = value.abs();
    let &(scale, suffix) = table
        .iter()
        .find(|(s, _)| mag >= *s * 0.9995)
        .unwrap_or(&(1e-15, "f"));
    let scaled = value / scale;
    let digits = if scaled.abs() >= 99.95 {
        0
    } else if scaled.abs() >= 9.995 {
        1
    } else {
        2
    };
    format!("{scaled:.digits$}{suffix}")
}
