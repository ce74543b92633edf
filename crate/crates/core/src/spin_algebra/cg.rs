use std::cell::RefCell;
use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use super::exact::{factorial, ExactScalar};
use super::half::HalfInteger;
use crate::error::{Error, Result};

/// Arguments of the coupling coefficient `<s, m | s', m'; k, q>`, i.e. the amplitude
/// of total spin `(s, m)` in the product of `(s', m')` and `(k, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CGKey {
    pub s: HalfInteger,
    pub m: HalfInteger,
    pub s_prime: HalfInteger,
    pub m_prime: HalfInteger,
    pub k: HalfInteger,
    pub q: HalfInteger,
}

impl CGKey {
    pub fn new(
        s: HalfInteger,
        m: HalfInteger,
        s_prime: HalfInteger,
        m_prime: HalfInteger,
        k: HalfInteger,
        q: HalfInteger,
    ) -> Self {
        CGKey {
            s,
            m,
            s_prime,
            m_prime,
            k,
            q,
        }
    }

    /// Builds a key from doubled values `(2s, 2m, 2s', 2m', 2k, 2q)`.
    pub fn from_twice(s: i32, m: i32, sp: i32, mp: i32, k: i32, q: i32) -> Self {
        CGKey::new(
            HalfInteger::from_twice(s),
            HalfInteger::from_twice(m),
            HalfInteger::from_twice(sp),
            HalfInteger::from_twice(mp),
            HalfInteger::from_twice(k),
            HalfInteger::from_twice(q),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, j, mj) in [
            ("s", self.s, self.m),
            ("s'", self.s_prime, self.m_prime),
            ("k", self.k, self.q),
        ] {
            if !j.admits(mj) {
                return Err(Error::InvalidArgument(format!(
                    "projection {mj} is not valid for {name} = {j}"
                )));
            }
        }
        Ok(())
    }

    /// `m = m' + q` and the triangle rule on `(s', k, s)`.
    pub fn selection_rules_hold(&self) -> bool {
        self.m.twice() == self.m_prime.twice() + self.q.twice()
            && triangle(self.s_prime, self.k, self.s)
    }
}

/// Triangle rule: `c` is one of `|a-b|, |a-b|+1, ..., a+b`.
pub fn triangle(a: HalfInteger, b: HalfInteger, c: HalfInteger) -> bool {
    let (a, b, c) = (a.twice(), b.twice(), c.twice());
    a >= 0 && b >= 0 && c >= 0 && (a + b + c) % 2 == 0 && c >= (a - b).abs() && c <= a + b
}

fn parity_sign(twice_exponent: i32) -> i8 {
    debug_assert!(twice_exponent % 2 == 0);
    if (twice_exponent / 2).rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

/// Exact Clebsch–Gordan coefficient `<s, m | s', m'; k, q>` (Condon–Shortley phases).
///
/// Arguments with `m < 0` are first mapped to `m > 0` by projection reversal, and
/// `s' < k` by exchanging the two coupled spins; the remaining case is evaluated with
/// the factorial sum directly. Failed selection rules give an exact zero.
pub fn cg_exact(key: &CGKey) -> Result<ExactScalar> {
    key.validate()?;
    if !key.selection_rules_hold() {
        return Ok(ExactScalar::zero());
    }
    let big_j = key.s.twice();
    let mut big_m = key.m.twice();
    let (mut j1, mut m1, mut j2, mut m2) = (
        key.s_prime.twice(),
        key.m_prime.twice(),
        key.k.twice(),
        key.q.twice(),
    );
    let mut phase: i8 = 1;
    let exchange_phase = parity_sign(j1 + j2 - big_j);
    if big_m < 0 {
        phase *= exchange_phase;
        big_m = -big_m;
        m1 = -m1;
        m2 = -m2;
    }
    if j1 < j2 {
        phase *= exchange_phase;
        std::mem::swap(&mut j1, &mut j2);
        std::mem::swap(&mut m1, &mut m2);
    }
    let raw = factorial_sum(big_j, big_m, j1, m1, j2, m2);
    Ok(ExactScalar::from_signed_square(
        raw.sign() * phase,
        raw.square().clone(),
    ))
}

/// The factorial-sum expression for `<J M | j1 m1; j2 m2>` with doubled arguments.
/// Selection rules must already hold.
fn factorial_sum(jj: i32, mm: i32, j1: i32, m1: i32, j2: i32, m2: i32) -> ExactScalar {
    let half = |twice: i32| -> i64 {
        debug_assert!(twice % 2 == 0, "odd doubled argument {twice}");
        i64::from(twice / 2)
    };
    let fact = |n: i64| -> BigInt {
        debug_assert!(n >= 0);
        factorial(n as u32)
    };

    let prefactor_num = BigInt::from(jj + 1)
        * fact(half(jj + j1 - j2))
        * fact(half(jj - j1 + j2))
        * fact(half(j1 + j2 - jj))
        * fact(half(jj + mm))
        * fact(half(jj - mm))
        * fact(half(j1 - m1))
        * fact(half(j1 + m1))
        * fact(half(j2 - m2))
        * fact(half(j2 + m2));
    let prefactor_den = fact(half(j1 + j2 + jj) + 1);
    let prefactor = BigRational::new(prefactor_num, prefactor_den);

    // Every factorial argument in the sum must be non-negative.
    let a1 = half(j1 + j2 - jj);
    let a2 = half(j1 - m1);
    let a3 = half(j2 + m2);
    let b1 = half(jj - j2 + m1);
    let b2 = half(jj - j1 - m2);
    let lo = 0.max(-b1).max(-b2);
    let hi = a1.min(a2).min(a3);
    let mut sum = BigRational::zero();
    for l in lo..=hi {
        let den =
            fact(l) * fact(a1 - l) * fact(a2 - l) * fact(a3 - l) * fact(b1 + l) * fact(b2 + l);
        let term = BigRational::new(BigInt::from(1), den);
        if l % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return ExactScalar::zero();
    }
    let sign = if sum.is_negative() { -1 } else { 1 };
    ExactScalar::from_signed_square(sign, prefactor * &sum * &sum)
}

thread_local! {
    static CG_F64_CACHE: RefCell<HashMap<CGKey, f64>> = RefCell::new(HashMap::new());
}

/// Floating value of [`cg_exact`], memoised per thread. Invalid keys give zero.
pub fn cg_f64(key: &CGKey) -> f64 {
    if key.validate().is_err() || !key.selection_rules_hold() {
        return 0.0;
    }
    if let Some(v) = CG_F64_CACHE.with(|c| c.borrow().get(key).copied()) {
        return v;
    }
    let v = cg_exact(key).map(|x| x.to_f64()).unwrap_or(0.0);
    CG_F64_CACHE.with(|c| {
        c.borrow_mut().insert(*key, v);
    });
    v
}

/// The pair `(<s, m+1 | s, m; k, 1>, <s, -m | s, -m-1; k, 1>)`.
///
/// These are related by `first = (-1)^(k+1) * second`; a violation is reported as an
/// error rather than silently returned.
pub fn cg_symmetry(
    s: HalfInteger,
    m: HalfInteger,
    k: HalfInteger,
) -> Result<(ExactScalar, ExactScalar)> {
    let one = HalfInteger::from_int(1);
    let first = cg_exact(&CGKey::new(s, m + one, s, m, k, one))?;
    let second = cg_exact(&CGKey::new(s, -m, s, -m - one, k, one))?;
    let k_int = k.as_int().ok_or_else(|| {
        Error::InvalidArgument(format!("rank k = {k} must be an integer for q = 1"))
    })?;
    let expected = if (k_int + 1) % 2 == 0 {
        second.clone()
    } else {
        second.neg()
    };
    if first != expected {
        return Err(Error::solver(
            "cg_symmetry",
            format!("relation violated at s={s}, m={m}, k={k}: {first} vs {second}"),
        ));
    }
    Ok((first, second))
}

/// Full matrix element `<a, m | T^(k)_q | a', m'>` from the reduced element.
pub fn wigner_eckart_assemble(reduced: f64, key: &CGKey) -> f64 {
    if reduced == 0.0 {
        return 0.0;
    }
    cg_f64(key) * reduced
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: i32, m: i32, sp: i32, mp: i32, k: i32, q: i32) -> CGKey {
        CGKey::from_twice(s, m, sp, mp, k, q)
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn projection_mismatch_is_exact_zero() {
        // <3,1|3,0;1,0>
        let v = cg_exact(&key(6, 2, 6, 0, 2, 0)).unwrap();
        assert!(v.is_zero());
    }

    #[test]
    fn rank_zero_coupling_is_one() {
        let v = cg_exact(&key(5, 3, 5, 3, 0, 0)).unwrap();
        assert_eq!(v, ExactScalar::one());
    }

    #[test]
    fn spin_one_example() {
        // <1,1|1,0;1,1> = -1/sqrt(2)
        let v = cg_exact(&key(2, 2, 2, 0, 2, 2)).unwrap();
        assert_eq!(v, ExactScalar::from_signed_square(-1, rat(1, 2)));
    }

    #[test]
    fn malformed_projection_is_an_error() {
        assert!(cg_exact(&key(2, 4, 2, 2, 2, 2)).is_err());
        assert!(cg_exact(&key(2, 1, 2, 1, 0, 0)).is_err());
    }

    #[test]
    fn triangle_violation_is_zero() {
        // s = 3 cannot come from 1 x 1.
        let v = cg_exact(&key(6, 0, 2, 0, 2, 0)).unwrap();
        assert!(v.is_zero());
    }

    #[test]
    fn two_spin_half_singlet_and_triplet() {
        // |0,0> = (|+-> - |-+>)/sqrt(2) in the order (s', k)
        let a = cg_exact(&key(0, 0, 1, 1, 1, -1)).unwrap();
        let b = cg_exact(&key(0, 0, 1, -1, 1, 1)).unwrap();
        assert_eq!(a, ExactScalar::from_signed_square(1, rat(1, 2)));
        assert_eq!(b, ExactScalar::from_signed_square(-1, rat(1, 2)));
        let t = cg_exact(&key(2, 0, 1, 1, 1, -1)).unwrap();
        assert_eq!(t, ExactScalar::from_signed_square(1, rat(1, 2)));
    }

    #[test]
    fn symmetry_pairs() {
        let h = HalfInteger::from_twice;
        let (a, b) = cg_symmetry(h(4), h(2), h(2)).unwrap();
        assert_eq!(a, b);
        let (a, b) = cg_symmetry(h(4), h(0), h(4)).unwrap();
        assert_eq!(a, b.neg());
        assert!(!a.is_zero());
        let (a, b) = cg_symmetry(h(5), h(1), h(6)).unwrap();
        assert_eq!(a, cg_exact(&key(5, 3, 5, 1, 6, 2)).unwrap());
        assert_eq!(b, cg_exact(&key(5, -1, 5, -3, 6, 2)).unwrap());
    }

    #[test]
    fn assemble() {
        let k = key(2, 2, 2, 0, 2, 2);
        assert_eq!(wigner_eckart_assemble(0.0, &k), 0.0);
        let v = wigner_eckart_assemble(2.5, &k);
        assert!((v + 2.5 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(wigner_eckart_assemble(1.75, &key(4, 2, 4, 2, 0, 0)), 1.75);
    }

    #[test]
    fn stretched_orthonormality_small() {
        // sum over (m', q) of <s,m|s',m';k,q>^2 = 1 for a few cases, exactly.
        for (s, sp, k) in [(2, 2, 2), (3, 1, 2), (4, 3, 1), (6, 4, 4)] {
            for m in (-s..=s).step_by(2) {
                let mut total = BigRational::zero();
                for mp in (-sp..=sp).step_by(2) {
                    let q = m - mp;
                    if q.abs() > k || (k - q) % 2 != 0 {
                        continue;
                    }
                    total += cg_exact(&key(s, m, sp, mp, k, q)).unwrap().square().clone();
                }
                assert_eq!(total, rat(1, 1), "s={s} s'={sp} k={k} m={m}");
            }
        }
    }
}
