//! Number formatting shared by the text emitters.

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros
/// removed, exponent form outside `1e-5 <= |x| < 1e17`.
pub fn g17(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let prec = (16 - exp) as usize;
        trim_zeros(&format!("{x:.prec$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::g17;

    #[test]
    fn matches_printf() {
        assert_eq!(g17(1.0), "1");
        assert_eq!(g17(0.0), "0");
        assert_eq!(g17(-0.0), "0");
        assert_eq!(g17(0.5), "0.5");
        assert_eq!(g17(0.1), "0.10000000000000001");
        assert_eq!(g17(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(g17(-2.25), "-2.25");
        assert_eq!(g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(g17(1.5e20), "1.5e+20");
        assert_eq!(g17(123456.0), "123456");
        assert_eq!(g17(0.0001), "0.0001");
    }

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 6.02e23, -7.5e-6] {
            assert_eq!(g17(x).parse::<f64>().unwrap(), x);
        }
    }
}
