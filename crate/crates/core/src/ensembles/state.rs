//! Initial states expanded in the multiplet basis.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpinModelSpec;
use crate::spectral::SpectrumTable;
use crate::spin_algebra::HalfInteger;

/// Amplitudes `C_{alpha,m}`, flattened over labels then `m = -s..=s`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateCoefficients {
    n_sites: usize,
    table_hash: [u8; 32],
    offsets: Vec<usize>,
    twice_spins: Vec<i32>,
    amplitudes: Vec<Complex64>,
}

impl StateCoefficients {
    pub fn zeros(table: &SpectrumTable) -> Self {
        let mut offsets = Vec::with_capacity(table.len() + 1);
        let mut total = 0;
        for s in table.spins() {
            offsets.push(total);
            total += s.multiplicity();
        }
        offsets.push(total);
        StateCoefficients {
            n_sites: table.n_sites(),
            table_hash: *table.model_spec_hash(),
            offsets,
            twice_spins: table.spins().iter().map(|s| s.twice()).collect(),
            amplitudes: vec![Complex64::new(0.0, 0.0); total],
        }
    }

    /// A single eigenstate `|alpha, m>`.
    pub fn eigenstate(table: &SpectrumTable, label: usize, m: HalfInteger) -> Result<Self> {
        let mut c = StateCoefficients::zeros(table);
        c.set(label, m, Complex64::new(1.0, 0.0))?;
        Ok(c)
    }

    /// Projects a full-space state onto the table's eigenvectors.
    pub fn from_vector(table: &SpectrumTable, psi: &[Complex64]) -> Result<Self> {
        let basis = table.basis();
        if psi.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: psi.len(),
            });
        }
        let mut c = StateCoefficients::zeros(table);
        let n = table.n_sites() as i32;
        for up in 0..=table.n_sites() {
            let part = basis.restrict(up, psi);
            let v = table.sector(up);
            let m = HalfInteger::from_twice(2 * up as i32 - n);
            for (col, label) in table.sector_labels(up).enumerate() {
                let amp: Complex64 = v.column(col).iter().zip(&part).map(|(&x, y)| y * x).sum();
                c.set(label, m, amp)?;
            }
        }
        Ok(c)
    }

    pub fn to_vector(&self, table: &SpectrumTable) -> Result<Vec<Complex64>> {
        self.check_table(table)?;
        let basis = table.basis();
        let n = table.n_sites() as i32;
        let mut out = vec![Complex64::new(0.0, 0.0); basis.dim()];
        for up in 0..=table.n_sites() {
            let v = table.sector(up);
            let m = HalfInteger::from_twice(2 * up as i32 - n);
            let states = basis.sector(up);
            for (col, label) in table.sector_labels(up).enumerate() {
                let amp = self.get(label, m);
                if amp == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (&state, &x) in states.iter().zip(v.column(col).iter()) {
                    out[state as usize] += amp * x;
                }
            }
        }
        Ok(out)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.twice_spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.twice_spins.is_empty()
    }

    fn index(&self, label: usize, m: HalfInteger) -> Option<usize> {
        let t = *self.twice_spins.get(label)?;
        let tm = m.twice();
        if tm.abs() > t || (t - tm) % 2 != 0 {
            return None;
        }
        Some(self.offsets[label] + ((tm + t) / 2) as usize)
    }

    /// `C_{alpha,m}`; zero outside the multiplet.
    pub fn get(&self, label: usize, m: HalfInteger) -> Complex64 {
        self.index(label, m)
            .map(|i| self.amplitudes[i])
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn set(&mut self, label: usize, m: HalfInteger, value: Complex64) -> Result<()> {
        let i = self.index(label, m).ok_or_else(|| {
            Error::InvalidArgument(format!("m={m} is not a projection of multiplet {label}"))
        })?;
        self.amplitudes[i] = value;
        Ok(())
    }

    /// Amplitudes of multiplet `label`, ordered `m = -s..=s`.
    pub fn multiplet(&self, label: usize) -> &[Complex64] {
        &self.amplitudes[self.offsets[label]..self.offsets[label + 1]]
    }

    pub fn spin(&self, label: usize) -> HalfInteger {
        HalfInteger::from_twice(self.twice_spins[label])
    }

    /// `(alpha, m, |C|^2)` over all levels.
    pub fn probabilities(&self) -> impl Iterator<Item = (usize, HalfInteger, f64)> + '_ {
        (0..self.len()).flat_map(move |a| {
            let t = self.twice_spins[a];
            self.multiplet(a)
                .iter()
                .enumerate()
                .map(move |(i, c)| (a, HalfInteger::from_twice(2 * i as i32 - t), c.norm_sqr()))
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-12
    }

    pub(crate) fn check_table(&self, table: &SpectrumTable) -> Result<()> {
        let same = self.n_sites == table.n_sites()
            && &self.table_hash == table.model_spec_hash()
            && self.twice_spins.len() == table.len()
            && self
                .twice_spins
                .iter()
                .zip(table.spins())
                .all(|(&t, s)| t == s.twice());
        if same {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "state was built on a different spectrum table".into(),
            ))
        }
    }
}

/// Supported initial states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateKind {
    /// `sqrt(1/3)|A, s_A> + sqrt(2/3)|A, -s_A/2>` with even `s_A` nearest `c sqrt(N)`.
    AnomalousA {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_fraction")]
        energy_fraction: f64,
    },
    /// `(|A,mb> + |A,mb+1> + |A,-mb> - |A,-mb-1>) / 2` with `s_A` nearest `c sqrt(N)`.
    /// `m_bar` defaults to `s_A - 1`.
    AnomalousB {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_fraction")]
        energy_fraction: f64,
        #[serde(default)]
        m_bar: Option<HalfInteger>,
    },
    /// Singlet eigenstate nearest the target energy.
    Singlet {
        #[serde(default = "default_fraction")]
        energy_fraction: f64,
    },
    /// `|alpha, m>`.
    Eigenstate { label: usize, m: HalfInteger },
    /// Tilted product state with magnetization `M = m_density N`, dressed by two
    /// brickwork layers of spin-rotation-invariant partial swaps.
    Product(ProductStateSpec),
}

fn default_c() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductStateSpec {
    pub m_density: f64,
    /// Target `E / N`; when absent the gate angle `phi` is used as given.
    #[serde(default)]
    pub energy_density: Option<f64>,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_phi() -> f64 {
    1.0
}

/// Energy `E_min + fraction (E_max - E_min)` of the table.
pub fn energy_at_fraction(table: &SpectrumTable, fraction: f64) -> f64 {
    let lo = table
        .energies()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = table
        .energies()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    lo + fraction * (hi - lo)
}

/// Label of the multiplet with spin `s` whose energy is closest to `energy`.
pub fn nearest_multiplet(table: &SpectrumTable, s: HalfInteger, energy: f64) -> Option<usize> {
    table.labels_with_spin(s).min_by(|&a, &b| {
        (table.energy(a) - energy)
            .abs()
            .total_cmp(&(table.energy(b) - energy).abs())
            .then(a.cmp(&b))
    })
}

/// Spin present in the table, satisfying `accept`, closest to `target` (ties go low).
pub fn nearest_spin(
    table: &SpectrumTable,
    target: f64,
    accept: impl Fn(HalfInteger) -> bool,
) -> Option<HalfInteger> {
    table
        .multiplet_counts()
        .keys()
        .copied()
        .filter(|&s| accept(s))
        .min_by(|a, b| {
            (a.value() - target)
                .abs()
                .total_cmp(&(b.value() - target).abs())
        })
}

/// The multiplet used by the anomalous constructions.
pub fn anomalous_multiplet(
    table: &SpectrumTable,
    c: f64,
    energy_fraction: f64,
    accept: impl Fn(HalfInteger) -> bool,
) -> Result<usize> {
    let target = c * (table.n_sites() as f64).sqrt();
    let s = nearest_spin(table, target, accept).ok_or_else(|| {
        Error::NoMultiplet(format!(
            "no admissible spin near {target:.3} at N={}",
            table.n_sites()
        ))
    })?;
    let e = energy_at_fraction(table, energy_fraction);
    nearest_multiplet(table, s, e)
        .ok_or_else(|| Error::NoMultiplet(format!("no multiplet with s={s}")))
}

pub fn build_state(
    kind: &StateKind,
    table: &SpectrumTable,
    model: Option<&SpinModelSpec>,
) -> Result<StateCoefficients> {
    let one = HalfInteger::from_int(1);
    match kind {
        StateKind::AnomalousA { c, energy_fraction } => {
            let a = anomalous_multiplet(table, *c, *energy_fraction, |s| {
                s.is_integer() && s.twice() % 4 == 0 && s.twice() > 0
            })?;
            let s = table.spin(a);
            let mut st = StateCoefficients::zeros(table);
            st.set(a, s, Complex64::new((1.0f64 / 3.0).sqrt(), 0.0))?;
            st.set(
                a,
                HalfInteger::from_twice(-s.twice() / 2),
                Complex64::new((2.0f64 / 3.0).sqrt(), 0.0),
            )?;
            Ok(st)
        }
        StateKind::AnomalousB {
            c,
            energy_fraction,
            m_bar,
        } => {
            let admissible = |s: HalfInteger, mb: HalfInteger| {
                mb.twice() >= 2 && (mb + one).twice() <= s.twice() && s.admits(mb)
            };
            let a = anomalous_multiplet(table, *c, *energy_fraction, |s| match m_bar {
                Some(mb) => admissible(s, *mb),
                None => s.twice() >= 4,
            })?;
            let s = table.spin(a);
            let mb = m_bar.unwrap_or(s - one);
            if !admissible(s, mb) {
                return Err(Error::NoMultiplet(format!("m_bar={mb} invalid for s={s}")));
            }
            let half = Complex64::new(0.5, 0.0);
            let mut st = StateCoefficients::zeros(table);
            st.set(a, mb, half)?;
            st.set(a, mb + one, half)?;
            st.set(a, -mb, half)?;
            st.set(a, -mb - one, -half)?;
            Ok(st)
        }
        StateKind::Singlet { energy_fraction } => {
            let e = energy_at_fraction(table, *energy_fraction);
            let a = nearest_multiplet(table, HalfInteger::ZERO, e).ok_or_else(|| {
                Error::NoMultiplet(format!("no singlet at N={}", table.n_sites()))
            })?;
            StateCoefficients::eigenstate(table, a, HalfInteger::ZERO)
        }
        StateKind::Eigenstate { label, m } => {
            if *label >= table.len() {
                return Err(Error::NoMultiplet(format!(
                    "label {label} outside table of {}",
                    table.len()
                )));
            }
            StateCoefficients::eigenstate(table, *label, *m)
        }
        StateKind::Product(spec) => {
            let model = model.ok_or_else(|| {
                Error::InvalidArgument("product states need the model couplings".into())
            })?;
            let psi = product_state(model, spec)?;
            StateCoefficients::from_vector(table, &psi)
        }
    }
}

/// Full-space product state with the requested magnetization and energy.
pub fn product_state(model: &SpinModelSpec, spec: &ProductStateSpec) -> Result<Vec<Complex64>> {
    let n = model.n_sites;
    model.validate()?;
    let target_m = spec.m_density * n as f64;
    if !(spec.m_density.abs() < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "magnetization density must lie in (-1/2, 1/2), got {}",
            spec.m_density
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let azimuth0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let theta = (2.0 * target_m / n as f64).acos();
    let mut base = vec![Complex64::new(1.0, 0.0)];
    for j in 0..n {
        let phi = azimuth0 + std::f64::consts::TAU * j as f64 / n as f64;
        let up = Complex64::new((0.5 * theta).cos(), 0.0);
        let down = Complex64::from_polar((0.5 * theta).sin(), -phi);
        let mut next = vec![Complex64::new(0.0, 0.0); base.len() * 2];
        for (state, &amp) in base.iter().enumerate() {
            next[state] = amp * down;
            next[state | (1 << j)] = amp * up;
        }
        base = next;
    }
    let bonds = brickwork(n);
    let weights: Vec<f64> = bonds.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let dressed = |phi: f64| {
        let mut psi = base.clone();
        for (&(i, j), &w) in bonds.iter().zip(&weights) {
            partial_swap(&mut psi, i, j, phi * w);
        }
        psi
    };
    let Some(target_density) = spec.energy_density else {
        return Ok(dressed(spec.phi));
    };
    let target_e = target_density * n as f64;
    let energy = |phi: f64| bond_energy(model, &dressed(phi)) - target_e;
    let grid = 96;
    let step = std::f64::consts::TAU / grid as f64;
    let mut prev = (0.0, energy(0.0));
    if prev.1 == 0.0 {
        return Ok(dressed(0.0));
    }
    let mut best = prev;
    for i in 1..=grid {
        let phi = i as f64 * step;
        let f = energy(phi);
        if f.abs() < best.1.abs() {
            best = (phi, f);
        }
        if f == 0.0 {
            return Ok(dressed(phi));
        }
        if f.signum() != prev.1.signum() {
            let (mut lo, mut hi, mut flo) = (prev.0, phi, prev.1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = energy(mid);
                if fm == 0.0 || hi - lo < 1e-15 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            return Ok(dressed(0.5 * (lo + hi)));
        }
        prev = (phi, f);
    }
    Err(Error::Infeasible {
        energy: target_e,
        magnetization: target_m,
        bounds: format!(
            "product family reaches E - E* = {:.6} at best (phi = {:.4})",
            best.1, best.0
        ),
    })
}

fn brickwork(n: usize) -> Vec<(usize, usize)> {
    let mut bonds: Vec<(usize, usize)> = (0..n.saturating_sub(1))
        .step_by(2)
        .map(|i| (i, i + 1))
        .collect();
    bonds.extend((1..n.saturating_sub(1)).step_by(2).map(|i| (i, i + 1)));
    bonds
}

/// Applies `exp(-i phi s_i.s_j)`: triplets pick up `e^{-i phi/4}`, the singlet `e^{3 i phi/4}`.
fn partial_swap(psi: &mut [Complex64], i: usize, j: usize, phi: f64) {
    let t = Complex64::from_polar(1.0, -0.25 * phi);
    let s = Complex64::from_polar(1.0, 0.75 * phi);
    let (bi, bj) = (1usize << i, 1usize << j);
    for state in 0..psi.len() {
        let ui = state & bi != 0;
        let uj = state & bj != 0;
        if ui == uj {
            psi[state] *= t;
        } else if ui {
            // pair (up_i down_j, down_i up_j) handled once from the up_i side
            let other = state ^ bi ^ bj;
            let (a, b) = (psi[state], psi[other]);
            let sym = (a + b) * 0.5;
            let anti = (a - b) * 0.5;
            psi[state] = sym * t + anti * s;
            psi[other] = sym * t - anti * s;
        }
    }
}

fn bond_energy(model: &SpinModelSpec, psi: &[Complex64]) -> f64 {
    let mut e = 0.0;
    for (i, j, coupling) in model.bonds() {
        let (bi, bj) = (1usize << i, 1usize << j);
        let mut acc = 0.0;
        for (state, amp) in psi.iter().enumerate() {
            let p = amp.norm_sqr();
            if (state & bi != 0) == (state & bj != 0) {
                acc += 0.25 * p;
            } else {
                acc -= 0.25 * p;
                let other = state ^ bi ^ bj;
                acc += 0.5 * (amp.conj() * psi[other]).re;
            }
        }
        e += coupling * acc;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, build_spin_operators};
    use crate::spectral::decompose;

    fn setup(n: usize) -> (SpinModelSpec, SpectrumTable) {
        let spec = SpinModelSpec::default_random(n, 21);
        let t = decompose(
            &build_hamiltonian(&spec).unwrap(),
            &build_spin_operators(n).unwrap(),
        )
        .unwrap()
        .with_model_hash(spec.digest());
        (spec, t)
    }

    #[test]
    fn vector_round_trip() {
        let (spec, t) = setup(6);
        let psi = product_state(
            &spec,
            &ProductStateSpec {
                m_density: 0.1,
                energy_density: None,
                phi: 0.7,
                seed: 3,
            },
        )
        .unwrap();
        let c = StateCoefficients::from_vector(&t, &psi).unwrap();
        assert!(c.is_normalized());
        let back = c.to_vector(&t).unwrap();
        for (a, b) in psi.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn partial_swap_matches_exponential() {
        // phi = pi is a swap up to a global phase
        let mut psi = vec![Complex64::new(0.0, 0.0); 4];
        psi[0b01] = Complex64::new(1.0, 0.0);
        partial_swap(&mut psi, 0, 1, std::f64::consts::PI);
        assert!(psi[0b01].norm() < 1e-15);
        assert!((psi[0b10].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn product_energy_is_tuned() {
        let (spec, _) = setup(8);
        let base = ProductStateSpec {
            m_density: 0.25,
            energy_density: None,
            phi: 0.0,
            seed: 1,
        };
        let e0 = bond_energy(&spec, &product_state(&spec, &base).unwrap()) / 8.0;
        let target = ProductStateSpec {
            energy_density: Some(e0 - 0.05),
            ..base
        };
        let psi = product_state(&spec, &target).unwrap();
        assert!((bond_energy(&spec, &psi) / 8.0 - (e0 - 0.05)).abs() < 1e-10);
        let unreachable = ProductStateSpec {
            energy_density: Some(-50.0),
            ..base
        };
        assert!(matches!(
            product_state(&spec, &unreachable),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn anomalous_a_uses_even_spin() {
        let (_, t) = setup(10);
        let st = build_state(
            &StateKind::AnomalousA {
                c: 1.0,
                energy_fraction: 0.5,
            },
            &t,
            None,
        )
        .unwrap();
        assert!(st.is_normalized());
        let (label, _, _) = st.probabilities().find(|p| p.2 > 0.0).unwrap();
        assert_eq!(t.spin(label), HalfInteger::from_int(4));
        let m_mean: f64 = st.probabilities().map(|(_, m, p)| p * m.value()).sum();
        assert!(m_mean.abs() < 1e-15);
    }

    #[test]
    fn anomalous_b_default_m_bar() {
        let (_, t) = setup(9);
        let st = build_state(
            &StateKind::AnomalousB {
                c: 1.0,
                energy_fraction: 0.5,
                m_bar: None,
            },
            &t,
            None,
        )
        .unwrap();
        assert!(st.is_normalized());
        assert_eq!(st.probabilities().filter(|p| p.2 > 0.0).count(), 4);
        let bad = StateKind::AnomalousB {
            c: 1.0,
            energy_fraction: 0.5,
            m_bar: Some(HalfInteger::from_twice(1)),
        };
        assert!(matches!(
            build_state(&bad, &t, None),
            Err(Error::NoMultiplet(_))
        ));
    }

    #[test]
    fn mismatched_table_is_detected() {
        let (_, t) = setup(6);
        let (_, other) = setup(7);
        let st = StateCoefficients::eigenstate(&t, 0, HalfInteger::ZERO).unwrap();
        assert!(st.check_table(&t).is_ok());
        assert!(st.check_table(&other).is_err());
    }
}
