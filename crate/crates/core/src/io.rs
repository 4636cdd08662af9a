//! Lossless text formatting shared by the CSV and JSON writers.

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// One CSV line (with trailing newline) of formatted values.
pub fn csv_row(values: &[f64]) -> String {
    let mut line = values.iter().map(|&v| format_f64(v)).collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(csv_row(&[1.0, -0.5]), "1.0000000000000000e0,-5.0000000000000000e-1\n");
    }
}
