//! Compact decimal formatting with a fixed number of significant digits.
//!
//! All CSV artifacts are written through [`sig9`] so that identical inputs
//! produce byte-identical files. The format follows C's `%g`: fixed notation
//! for moderate exponents, scientific otherwise, trailing zeros trimmed.
//! Parsing a formatted value and formatting it again reproduces the same
//! string, which is what makes save/load round trips byte-stable.

/// Formats `x` with nine significant digits.
pub fn sig9(x: f64) -> String {
    format_sig(x, 9)
}

/// Formats `x` with `sig` significant digits in `%g` style.
///
/// # Panics
///
/// Panics if `sig` is zero or `x` is not finite; callers validate data
/// before writing it.
pub fn format_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1, "need at least one significant digit");
    assert!(x.is_finite(), "refusing to format non-finite value");
    if x == 0.0 {
        return "0".to_string();
    }
    // Scientific form gives the correctly rounded mantissa and the exponent
    // after rounding (9.9999e-3 becomes 1e-2, shifting the exponent).
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exponent) = sci.split_once('e').expect("scientific form has an exponent");
    let exponent: i32 = exponent.parse().expect("exponent is an integer");
    if exponent >= -4 && exponent < sig as i32 {
        let fraction_digits = (sig as i32 - 1 - exponent).max(0) as usize;
        trim_fraction(format!("{x:.fraction_digits$}"))
    } else {
        format!("{}e{exponent}", trim_fraction(mantissa.to_string()))
    }
}

fn trim_fraction(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
