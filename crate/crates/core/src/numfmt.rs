//! Decimal formatting for CSV artifacts: 17 significant digits, which
//! round-trips every finite f64 bit-exactly.

use crate::error::{Error, Result};

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str, path: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_string(),
        reason: format!("bad float `{s}`: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 0.3, 1.0 / 3.0, -2.5e-9, 6.02214076e23, 0.0] {
            let s = fmt17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s}");
        }
    }
}
