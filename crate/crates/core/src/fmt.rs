//! Text formatting shared by the CSV and OBJ writers.

/// Formats `x` with `digits` significant digits in plain decimal notation,
/// falling back to exponent notation for very large or small magnitudes.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&mag) {
        return format!("{:.*e}", digits.saturating_sub(1), x);
    }
    let decimals = (digits as i32 - 1 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".to_string() } else { s.to_string() }
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig(1.0, 9), "1");
        assert_eq!(sig(12.3456789012, 9), "12.3456789");
        assert_eq!(sig(-0.000123456789123, 9), "-0.000123456789");
        assert_eq!(sig(0.0, 9), "0");
        let v = 1.23456789012345;
        assert!((sig(v, 9).parse::<f64>().unwrap() - v).abs() < 1e-8);
    }
}
