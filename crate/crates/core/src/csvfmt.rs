//! Shared CSV number formatting: 12 significant digits, `.` decimal.

use std::fmt::Write;

pub fn num(x: f64) -> String {
    if x == 0.0 {
        // avoid "-0" so output is independent of the sign of zero
        return "0.00000000000e0".to_string();
    }
    format!("{x:.11e}")
}

/// Joins values into one CSV record terminated by `\n`.
pub fn record<I: IntoIterator<Item = f64>>(values: I) -> String {
    let mut line = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{}", num(v));
    }
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(1.0), "1.00000000000e0");
        assert_eq!(num(-0.0), num(0.0));
        assert_eq!(num(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(record([1.0, 2.5]), "1.00000000000e0,2.50000000000e0\n");
    }
}
