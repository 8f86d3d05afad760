//! Parameter grids: `lo:hi:count` for `count` values spaced evenly in log10 between the
//! endpoints `lo` and `hi`, or a comma-separated list of explicit values.

use crate::error::{CliError, CliResult};

pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let fail = |reason: String| CliError::Grid { text: text.to_string(), reason };
    let number = |s: &str| s.trim().parse::<f64>().map_err(|e| fail(format!("'{}': {e}", s.trim())));
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(fail("expected lo:hi:count".into()));
        }
        let (lo, hi) = (number(parts[0])?, number(parts[1])?);
        let count: usize = parts[2].trim().parse().map_err(|e| fail(format!("count: {e}")))?;
        if count == 0 {
            return Err(fail("count must be >= 1".into()));
        }
        if !(lo > 0.0 && hi > 0.0) {
            return Err(fail("log-spaced endpoints must be > 0".into()));
        }
        if count == 1 {
            vec![lo]
        } else {
            let (a, b) = (lo.log10(), hi.log10());
            let step = (b - a) / (count - 1) as f64;
            // Pin the endpoints exactly so `1e-2:1:3` yields 0.01 and 1, not rounding noise.
            (0..count)
                .map(|k| match k {
                    0 => lo,
                    k if k == count - 1 => hi,
                    k => 10f64.powf(a + step * k as f64),
                })
                .collect()
        }
    } else {
        text.split(',').map(number).collect::<CliResult<Vec<f64>>>()?
    };
    if values.is_empty() {
        return Err(fail("grid is empty".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(fail(format!("non-finite value {bad}")));
    }
    Ok(values)
}

/// γ grids must increase strictly so stability intervals are well defined.
pub fn ensure_increasing(values: &[f64], what: &str) -> CliResult<()> {
    match values.windows(2).position(|w| !(w[1] > w[0])) {
        Some(k) => Err(CliError::Usage(format!("{what} grid must be strictly increasing (position {})", k + 1))),
        None => Ok(()),
    }
}
