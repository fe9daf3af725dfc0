//! CSV output with a fixed number format, so that files are byte-stable
//! across runs.

use std::io::{self, Write};

use crate::simulator::{PathRecord, SummaryRow};

/// Significant digits written for every floating-point field.
pub const SIG_DIGITS: usize = 12;

/// `v` with [`SIG_DIGITS`] significant digits, trailing zeros removed.
/// Fixed notation for exponents in `[-5, 12)`, scientific otherwise.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}", trim(mantissa.to_string()), exp)
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// One CSV line from numeric fields.
pub fn csv_row(fields: &[f64]) -> String {
    fields.iter().map(|&v| fmt_sig(v)).collect::<Vec<_>>().join(",")
}

pub const PATH_HEADER: &str = "t,X,H,c,pi,b,p";
pub const SUMMARY_HEADER: &str = "t,mean_X,q05_X,q95_X,mean_c,mean_pi,mean_p";

pub fn write_path_csv<W: Write>(mut w: W, records: &[PathRecord]) -> io::Result<()> {
    writeln!(w, "{PATH_HEADER}")?;
    for r in records {
        writeln!(w, "{}", csv_row(&[r.t, r.x, r.h, r.c, r.pi, r.b, r.p]))?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", csv_row(&[r.t, r.mean_x, r.q05_x, r.q95_x, r.mean_c, r.mean_pi, r.mean_p]))?;
    }
    Ok(())
}
