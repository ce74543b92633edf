use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-integer angular-momentum quantum number, stored doubled.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct HalfInteger(i32);

impl HalfInteger {
    pub const ZERO: HalfInteger = HalfInteger(0);
    pub const HALF: HalfInteger = HalfInteger(1);

    #[inline]
    pub const fn from_twice(twice_value: i32) -> Self {
        HalfInteger(twice_value)
    }

    #[inline]
    pub const fn from_int(value: i32) -> Self {
        HalfInteger(2 * value)
    }

    #[inline]
    pub const fn twice(self) -> i32 {
        self.0
    }

    #[inline]
    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    #[inline]
    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Integer value, if this is one.
    pub const fn as_int(self) -> Option<i32> {
        if self.is_integer() {
            Some(self.0 / 2)
        } else {
            None
        }
    }

    #[inline]
    pub const fn abs(self) -> Self {
        HalfInteger(self.0.abs())
    }

    /// `s(s+1)` for a spin magnitude.
    #[inline]
    pub fn casimir(self) -> f64 {
        let s = self.value();
        s * (s + 1.0)
    }

    /// Multiplet dimension `2s+1`.
    #[inline]
    pub fn multiplicity(self) -> usize {
        debug_assert!(self.0 >= 0);
        (self.0 + 1) as usize
    }

    /// Checks that `(self, m)` is a valid spin/projection pair: `|m| <= s` and `s - m` integral.
    pub fn admits(self, m: HalfInteger) -> bool {
        self.0 >= 0 && m.0.abs() <= self.0 && (self.0 - m.0) % 2 == 0
    }

    /// Magnetic numbers `-s, -s+1, ..., s` in ascending order.
    pub fn projections(self) -> impl DoubleEndedIterator<Item = HalfInteger> + Clone {
        let s = self.0;
        (0..=s.max(-1))
            .map(move |i| HalfInteger(-s + 2 * i))
            .filter(move |_| s >= 0)
    }
}

impl std::ops::Add for HalfInteger {
    type Output = HalfInteger;
    fn add(self, rhs: Self) -> Self {
        HalfInteger(self.0 + rhs.0)
    }
}

impl std::ops::Sub for HalfInteger {
    type Output = HalfInteger;
    fn sub(self, rhs: Self) -> Self {
        HalfInteger(self.0 - rhs.0)
    }
}

impl std::ops::Neg for HalfInteger {
    type Output = HalfInteger;
    fn neg(self) -> Self {
        HalfInteger(-self.0)
    }
}

impl fmt::Display for HalfInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl FromStr for HalfInteger {
    type Err = Error;

    /// Accepts `"3"`, `"-2"`, `"5/2"`, `"-1/2"`, or a decimal such as `"2.5"`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::InvalidArgument(format!("not a half-integer: {s:?}"));
        if let Some((num, den)) = t.split_once('/') {
            let num: i32 = num.trim().parse().map_err(|_| bad())?;
            match den.trim() {
                "1" => Ok(HalfInteger(2 * num)),
                "2" => Ok(HalfInteger(num)),
                _ => Err(bad()),
            }
        } else if let Ok(v) = t.parse::<i32>() {
            Ok(HalfInteger(2 * v))
        } else {
            let v: f64 = t.parse().map_err(|_| bad())?;
            let twice = (2.0 * v).round();
            if (2.0 * v - twice).abs() > 1e-9 || !twice.is_finite() {
                return Err(bad());
            }
            Ok(HalfInteger(twice as i32))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for (text, twice) in [("5/2", 5), ("-1/2", -1), ("3", 6), ("2.5", 5), ("-4/1", -8)] {
            let h: HalfInteger = text.parse().unwrap();
            assert_eq!(h.twice(), twice, "{text}");
        }
        assert!("1/3".parse::<HalfInteger>().is_err());
        assert!("0.3".parse::<HalfInteger>().is_err());
        assert_eq!(HalfInteger::from_twice(5).to_string(), "5/2");
        assert_eq!(HalfInteger::from_twice(-4).to_string(), "-2");
    }

    #[test]
    fn projections_run_from_minus_s_to_s() {
        let s = HalfInteger::from_twice(3);
        let ms: Vec<i32> = s.projections().map(|m| m.twice()).collect();
        assert_eq!(ms, vec![-3, -1, 1, 3]);
        assert!(s.admits(HalfInteger::from_twice(-1)));
        assert!(!s.admits(HalfInteger::from_twice(0)));
        assert!(!s.admits(HalfInteger::from_twice(5)));
    }
}
