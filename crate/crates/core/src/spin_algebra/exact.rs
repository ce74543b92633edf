use std::cell::RefCell;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// An exact real number of the form `sign * sqrt(rational_square)`.
///
/// Clebsch–Gordan coefficients are always of this form, so equality between two
/// values is plain structural equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExactScalar {
    sign: i8,
    rational_square: BigRational,
}

impl ExactScalar {
    pub fn zero() -> Self {
        ExactScalar {
            sign: 0,
            rational_square: BigRational::zero(),
        }
    }

    pub fn one() -> Self {
        ExactScalar {
            sign: 1,
            rational_square: BigRational::one(),
        }
    }

    /// `sign * sqrt(square)`. A zero `square` forces the sign to zero.
    ///
    /// Panics if `square` is negative.
    pub fn from_signed_square(sign: i8, square: BigRational) -> Self {
        assert!(!square.is_negative(), "negative radicand");
        if square.is_zero() || sign == 0 {
            return ExactScalar::zero();
        }
        ExactScalar {
            sign: sign.signum(),
            rational_square: square,
        }
    }

    /// The exact value `r` (not its square root).
    pub fn from_rational(r: BigRational) -> Self {
        let sign = if r.is_zero() {
            0
        } else if r.is_negative() {
            -1
        } else {
            1
        };
        ExactScalar::from_signed_square(sign, &r * &r)
    }

    pub fn from_i64(v: i64) -> Self {
        ExactScalar::from_rational(BigRational::from_integer(BigInt::from(v)))
    }

    #[inline]
    pub fn sign(&self) -> i8 {
        self.sign
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    /// The square of the value, always non-negative.
    #[inline]
    pub fn square(&self) -> &BigRational {
        &self.rational_square
    }

    /// Square with the sign of the value attached.
    pub fn signed_square(&self) -> BigRational {
        match self.sign {
            0 => BigRational::zero(),
            1 => self.rational_square.clone(),
            _ => -self.rational_square.clone(),
        }
    }

    pub fn neg(&self) -> Self {
        ExactScalar {
            sign: -self.sign,
            rational_square: self.rational_square.clone(),
        }
    }

    pub fn mul(&self, other: &ExactScalar) -> Self {
        ExactScalar::from_signed_square(
            self.sign * other.sign,
            &self.rational_square * &other.rational_square,
        )
    }

    /// Nearest `f64`: the radicand is rounded to the nearest double, then square-rooted.
    pub fn to_f64(&self) -> f64 {
        if self.sign == 0 {
            return 0.0;
        }
        let sq = rational_to_f64(&self.rational_square);
        f64::from(self.sign) * sq.sqrt()
    }
}

/// Round-to-nearest conversion of an exact rational.
pub(crate) fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

impl fmt::Display for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            s => {
                let sign = if s < 0 { "-" } else { "" };
                if self.rational_square.is_one() {
                    write!(f, "{sign}1")
                } else {
                    write!(f, "{sign}sqrt({})", self.rational_square)
                }
            }
        }
    }
}

thread_local! {
    static FACTORIALS: RefCell<Vec<BigInt>> = RefCell::new(vec![BigInt::one()]);
}

/// `n!` as an arbitrary-precision integer, memoised per thread.
pub fn factorial(n: u32) -> BigInt {
    FACTORIALS.with(|cell| {
        let mut table = cell.borrow_mut();
        while table.len() <= n as usize {
            let k = table.len();
            let next = &table[k - 1] * BigInt::from(k);
            table.push(next);
        }
        table[n as usize].clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn zero_square_has_zero_sign() {
        let z = ExactScalar::from_signed_square(-1, rat(0, 1));
        assert_eq!(z, ExactScalar::zero());
        assert_eq!(z.to_f64(), 0.0);
    }

    #[test]
    fn float_conversion_squares_back() {
        for (n, d) in [(1, 2), (2, 3), (7, 11), (123_457, 1_000_003)] {
            let x = ExactScalar::from_signed_square(-1, rat(n, d));
            let f = x.to_f64();
            let back = f * f;
            let target = n as f64 / d as f64;
            assert!(((back - target) / target).abs() < 1e-14);
            assert!(f < 0.0);
        }
    }

    #[test]
    fn product_and_display() {
        let a = ExactScalar::from_signed_square(-1, rat(1, 2));
        let b = ExactScalar::from_signed_square(-1, rat(2, 1));
        assert_eq!(a.mul(&b), ExactScalar::one());
        assert_eq!(a.to_string(), "-sqrt(1/2)");
        assert_eq!(ExactScalar::from_i64(-3).signed_square(), rat(-9, 1));
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial(0), BigInt::from(1));
        assert_eq!(factorial(10), BigInt::from(3_628_800));
    }
}
