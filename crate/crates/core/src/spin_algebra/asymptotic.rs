use super::half::HalfInteger;
use crate::error::{Error, Result};

/// Leading-order large-spin approximation to `<s, m+q | s, m; k, q>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymptoticCg {
    pub value: f64,
    /// `(s - m) / s`, the order of the neglected correction.
    pub relative_error_estimate: f64,
    /// Set when `s - m > s/2`, outside the regime the expansion is meant for.
    pub regime_warning: bool,
}

fn ln_factorial(n: i64) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Keeps only the dominant term of the factorial sum, the one with the
/// lowest power of `1/s`. For `q >= 0` that is
/// `(-1)^q / (q! (2s)^{q/2}) * sqrt((s-m)! (k+q)! / ((s-m-q)! (k-q)!))`;
/// for `q < 0` the `|q|` analogue without the alternating sign.
pub fn cg_asymptotic(
    s: HalfInteger,
    m: HalfInteger,
    k: HalfInteger,
    q: HalfInteger,
) -> Result<AsymptoticCg> {
    if s.twice() < 2 {
        return Err(Error::InvalidArgument(format!(
            "s = {s} must be at least 1"
        )));
    }
    if !s.admits(m) || !k.admits(q) || k.twice() > s.twice() {
        return Err(Error::InvalidArgument(format!(
            "need |m| <= s, |q| <= k <= s; got s={s}, m={m}, k={k}, q={q}"
        )));
    }
    let k_int = k
        .as_int()
        .ok_or_else(|| Error::InvalidArgument(format!("rank k = {k} must be an integer")))?;
    let q_int = q.as_int().expect("q has the parity of k");
    let delta = i64::from((s - m).twice() / 2);
    let two_s = f64::from(s.twice());
    let k = i64::from(k_int);
    let q = i64::from(q_int);
    let a = q.abs();

    let value = if q >= 0 {
        if delta < q {
            0.0
        } else {
            let ln_ratio = ln_factorial(delta) + ln_factorial(k + q)
                - ln_factorial(delta - q)
                - ln_factorial(k - q);
            let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
            sign * (0.5 * ln_ratio - ln_factorial(q) - 0.5 * q as f64 * two_s.ln()).exp()
        }
    } else {
        let ln_ratio = ln_factorial(delta + a) + ln_factorial(k + a)
            - ln_factorial(delta)
            - ln_factorial(k - a);
        (0.5 * ln_ratio - ln_factorial(a) - 0.5 * a as f64 * two_s.ln()).exp()
    };
    let s_val = s.value();
    Ok(AsymptoticCg {
        value,
        relative_error_estimate: delta as f64 / s_val,
        regime_warning: delta as f64 > s_val / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_algebra::{cg_exact, CGKey};

    fn h(v: i32) -> HalfInteger {
        HalfInteger::from_int(v)
    }

    #[test]
    fn stretched_state_leading_order_is_one() {
        let r = cg_asymptotic(h(200), h(200), h(2), h(0)).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.regime_warning);
    }

    #[test]
    fn raising_by_one_quantum() {
        let r = cg_asymptotic(h(200), h(199), h(1), h(1)).unwrap();
        let expected = -(1.0f64).sqrt() * (1.0f64 / 200.0).sqrt();
        assert!((r.value - expected).abs() < 1e-12, "{}", r.value);
        assert!((r.relative_error_estimate - 1.0 / 200.0).abs() < 1e-15);
    }

    #[test]
    fn lowering_by_two_tracks_exact_value() {
        let r = cg_asymptotic(h(50), h(48), h(2), h(-2)).unwrap();
        let exact = cg_exact(&CGKey::new(h(50), h(46), h(50), h(48), h(2), h(-2)))
            .unwrap()
            .to_f64();
        let rel = (r.value / exact - 1.0).abs();
        assert!(rel < 10.0 * 2.0 / 50.0, "rel = {rel}");
    }

    #[test]
    fn regime_flag_and_argument_errors() {
        let r = cg_asymptotic(h(10), h(-2), h(1), h(0)).unwrap();
        assert!(r.regime_warning);
        assert!(cg_asymptotic(h(10), h(11), h(1), h(0)).is_err());
        assert!(cg_asymptotic(
            HalfInteger::from_twice(1),
            HalfInteger::from_twice(1),
            h(0),
            h(0)
        )
        .is_err());
    }
}
