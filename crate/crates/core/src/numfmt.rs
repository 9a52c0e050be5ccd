//! Byte-stable decimal formatting shared by the text file writers.

/// Fixed `digits` fraction digits, then trailing zeros (and a bare `.`)
/// trimmed. `0.500000000` becomes `0.5`, `1.000000000` becomes `1`.
pub fn trimmed_fixed(x: f64, digits: usize) -> String {
    let mut s = format!("{:.*}", digits, x);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Positional decimal rounded to `sig` significant digits, trimmed like
/// [`trimmed_fixed`].
pub fn significant(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", x);
    }
    let exp = x.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - exp).max(0) as usize;
    trimmed_fixed(x, decimals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trims() {
        assert_eq!(trimmed_fixed(0.5, 9), "0.5");
        assert_eq!(trimmed_fixed(1.0, 9), "1");
        assert_eq!(trimmed_fixed(0.123456789, 9), "0.123456789");
        assert_eq!(trimmed_fixed(4.000000000000001, 6), "4");
    }

    #[test]
    fn sig_digits() {
        assert_eq!(significant(0.5, 12), "0.5");
        assert_eq!(significant(1e-10, 3), "0.0000000001");
        assert_eq!(significant(0.25, 2), "0.25");
        assert_eq!(significant(0.123456789012345, 12), "0.123456789012");
        assert_eq!(significant(0.99999999999999, 12), "1");
        let back: f64 = significant(1.0 / 3.0, 12).parse().unwrap();
        assert!((back - 1.0 / 3.0).abs() < 1e-12);
    }
}
