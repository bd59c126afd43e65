//! Lossless decimal formatting for `f64` (17 significant digits).

/// Formats with 17 significant digits; negative zero is written as zero.
pub fn fmt_f64(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

pub fn fmt_list(values: &[f64], sep: &str) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(sep)
}
