//! Number formatting shared by the CSV writers.

/// Formats `x` with 15 significant digits, trailing zeros trimmed.
///
/// Plain decimal notation is used for magnitudes in `[1e-5, 1e15)`, exponent
/// notation otherwise.
pub fn fmt_sig15(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs();
    if !(1e-5..1e15).contains(&mag) {
        return format!("{x:.14e}");
    }
    // round first so the exponent reflects carries such as 9.99..→10
    let rounded: f64 = format!("{x:.14e}").parse().expect("round trip");
    let exponent = rounded.abs().log10().floor() as i32;
    let decimals = (14 - exponent).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
