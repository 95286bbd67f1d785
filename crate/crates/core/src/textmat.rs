//! Plain-text complex matrices: one row per line, entries separated by
//! whitespace and written as `a+bi`. Blank lines and `#` comments are
//! ignored.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{CrbError, Result};
use crate::linalg::CMat;

/// Parses `3`, `-1.5e-3`, `2i`, `-i`, `1+2i`, `0.5-1e-2j` and similar forms.
pub fn parse_complex(token: &str) -> Result<Complex64> {
    let t = token.trim();
    let bad = || CrbError::Parse(format!("invalid complex number {token:?}"));
    if t.is_empty() {
        return Err(bad());
    }
    let num = |s: &str| -> Result<f64> {
        match s {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => s.parse::<f64>().map_err(|_| bad()),
        }
    };
    let z = match t.strip_suffix(['i', 'j']) {
        None => Complex64::new(t.parse::<f64>().map_err(|_| bad())?, 0.0),
        Some(body) => {
            // split at the last sign that is not part of an exponent
            let bytes = body.as_bytes();
            let split = (1..bytes.len())
                .rev()
                .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
            match split {
                Some(k) => Complex64::new(
                    body[..k].parse::<f64>().map_err(|_| bad())?,
                    num(&body[k..])?,
                ),
                None => Complex64::new(0.0, num(body)?),
            }
        }
    };
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(CrbError::Parse(format!("non-finite value {token:?}")));
    }
    Ok(z)
}

/// Round-trip safe `a+bi` rendering (17 significant digits).
pub fn format_complex(z: Complex64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{:.16e}{}{:.16e}i", z.re, sign, z.im.abs())
}

pub fn parse_matrix(text: &str) -> Result<CMat> {
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(parse_complex)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| CrbError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CrbError::Parse(format!(
                    "line {}: expected {} entries, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CrbError::Parse("matrix file has no rows".into()));
    }
    let ncols = rows[0].len();
    Ok(CMat::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

pub fn read_matrix(path: &Path) -> Result<CMat> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CrbError::Parse(format!("{}: {e}", path.display())))?;
    parse_matrix(&text).map_err(|e| CrbError::Parse(format!("{}: {e}", path.display())))
}

pub fn format_matrix(m: &CMat) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&z| format_complex(z)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
