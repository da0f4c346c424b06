use std::io::Write;

use anyhow::Result;
use lfi::{DepthResult, Value};
use serde::Serialize;

/// One row of output. Floating-point fields hold values already rounded to
/// 12 significant digits so CSV and JSON carry the same numbers.
#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub depth: i64,
    pub value: String,
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    pub num_variables: usize,
    pub num_factors: usize,
    pub elapsed_ms: f64,
    pub algorithm: String,
    pub approximate: bool,
    pub monotonicity_ok: bool,
}

impl Record {
    pub fn new(result: &DepthResult, value: &Value, omit_timing: bool) -> Self {
        let (lower, upper) = result.bounds.get(value);
        let elapsed_ms = if omit_timing {
            0.0
        } else {
            result.elapsed.as_secs_f64() * 1000.0
        };
        Record {
            depth: result.depth,
            value: value.to_string(),
            lower: round_sig(lower),
            upper: round_sig(upper),
            gap: round_sig(result.gap),
            num_variables: result.num_variables,
            num_factors: result.num_factors,
            elapsed_ms: round_sig(elapsed_ms),
            algorithm: result.algorithm.to_string(),
            approximate: result.approximate,
            monotonicity_ok: result.monotonicity_ok,
        }
    }
}

/// `x` printed like C's `%.12g`.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= DIGITS {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn round_sig(x: f64) -> f64 {
    format_sig(x).parse().unwrap_or(x)
}

pub fn write_csv(out: impl Write, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "depth",
        "value",
        "lower",
        "upper",
        "gap",
        "num_variables",
        "num_factors",
        "elapsed_ms",
        "algorithm",
        "approximate",
        "monotonicity_ok",
    ])?;
    for r in records {
        w.write_record([
            r.depth.to_string(),
            r.value.clone(),
            format_sig(r.lower),
            format_sig(r.upper),
            format_sig(r.gap),
            r.num_variables.to_string(),
            r.num_factors.to_string(),
            format_sig(r.elapsed_ms),
            r.algorithm.clone(),
            r.approximate.to_string(),
            r.monotonicity_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(mut out: impl Write, records: &[Record]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, records)?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_sig(3.0 / 7.0), "0.428571428571");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1234.5), "1234.5");
        assert_eq!(format_sig(1.5e-7), "1.5e-07");
        assert_eq!(format_sig(2.0e13), "2e+13");
        assert_eq!(format_sig(0.0001), "0.0001");
        assert_eq!(format_sig(0.00001), "1e-05");
    }

    #[test]
    fn rounding_matches_formatting() {
        for x in [3.0 / 7.0, 2.0 / 7.0, 1e-9 / 3.0, 12345.678901234567] {
            assert_eq!(format_sig(round_sig(x)), format_sig(x));
        }
    }
}
