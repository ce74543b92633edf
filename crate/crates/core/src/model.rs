//! SU(2)-invariant Heisenberg chains and global spin operators.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Operators act on the full `2^N` space; all are stored sparse.
pub type OperatorMatrix = CsrMatrix<Complex64>;

/// Default cap on chain length.
pub const DEFAULT_MAX_SITES: usize = 14;

/// Tolerance used by [`verify_symmetry`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// Couplings of `H = sum_j J1_j s_j.s_{j+1} + sum_j J2_j s_j.s_{j+2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinModelSpec {
    pub n_sites: usize,
    pub nn_couplings: Vec<f64>,
    pub nnn_couplings: Vec<f64>,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SpinModelSpec {
    /// Random nearest-neighbour couplings in `[0.8, 1.2]` and uniform `J2 = 0.4`, open chain.
    pub fn default_random(n_sites: usize, seed: u64) -> Self {
        SpinModelSpec::random(n_sites, seed, (0.8, 1.2), 0.4, Boundary::Open)
    }

    pub fn random(
        n_sites: usize,
        seed: u64,
        j1_range: (f64, f64),
        j2: f64,
        boundary: Boundary,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nn, nnn) = bond_counts(n_sites, boundary);
        let nn_couplings = (0..nn)
            .map(|_| {
                if j1_range.1 > j1_range.0 {
                    rng.random_range(j1_range.0..j1_range.1)
                } else {
                    j1_range.0
                }
            })
            .collect();
        SpinModelSpec {
            n_sites,
            nn_couplings,
            nnn_couplings: vec![j2; nnn],
            boundary,
            rng_seed: seed,
        }
    }

    /// Ferromagnetic preset: `J1 = -1`, `J2 = -0.3`, open chain.
    pub fn ferromagnetic(n_sites: usize) -> Self {
        SpinModelSpec::uniform(n_sites, -1.0, -0.3, Boundary::Open)
    }

    pub fn uniform(n_sites: usize, j1: f64, j2: f64, boundary: Boundary) -> Self {
        let (nn, nnn) = bond_counts(n_sites, boundary);
        SpinModelSpec {
            n_sites,
            nn_couplings: vec![j1; nn],
            nnn_couplings: if j2 == 0.0 { Vec::new() } else { vec![j2; nnn] },
            boundary,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidArgument(format!(
                "a chain needs at least 2 sites, got {}",
                self.n_sites
            )));
        }
        if self.boundary == Boundary::Periodic && self.n_sites < 3 {
            return Err(Error::InvalidArgument(
                "periodic chains need at least 3 sites".into(),
            ));
        }
        let (nn, nnn) = bond_counts(self.n_sites, self.boundary);
        if self.nn_couplings.len() != nn {
            return Err(Error::InvalidArgument(format!(
                "expected {nn} nearest-neighbour couplings, got {}",
                self.nn_couplings.len()
            )));
        }
        if !self.nnn_couplings.is_empty() && self.nnn_couplings.len() != nnn {
            return Err(Error::InvalidArgument(format!(
                "expected {nnn} next-nearest-neighbour couplings (or none), got {}",
                self.nnn_couplings.len()
            )));
        }
        if self
            .nn_couplings
            .iter()
            .chain(&self.nnn_couplings)
            .any(|j| !j.is_finite())
        {
            return Err(Error::InvalidArgument("couplings must be finite".into()));
        }
        Ok(())
    }

    /// Heuristic flag only: some `J2 != 0`, or nonuniform `J1`.
    pub fn is_nonintegrable(&self) -> bool {
        let nonuniform = self
            .nn_couplings
            .windows(2)
            .any(|w| (w[0] - w[1]).abs() > 0.0);
        self.nnn_couplings.iter().any(|&j| j != 0.0) || nonuniform
    }

    /// All `(i, j, J)` bonds of the Hamiltonian.
    pub fn bonds(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_sites;
        let mut out = Vec::new();
        for (b, &j) in self.nn_couplings.iter().enumerate() {
            out.push((b, (b + 1) % n, j));
        }
        for (b, &j) in self.nnn_couplings.iter().enumerate() {
            out.push((b, (b + 2) % n, j));
        }
        out
    }

    /// Median of `|J1|`, the natural energy unit for binning.
    pub fn energy_unit(&self) -> f64 {
        let mut v: Vec<f64> = self.nn_couplings.iter().map(|j| j.abs()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return 1.0;
        }
        let med = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        if med > 0.0 {
            med
        } else {
            1.0
        }
    }

    /// SHA-256 over a canonical little-endian encoding of the spec.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"spin-model-v1");
        h.update((self.n_sites as u64).to_le_bytes());
        h.update([self.boundary as u8]);
        h.update(self.rng_seed.to_le_bytes());
        for list in [&self.nn_couplings, &self.nnn_couplings] {
            h.update((list.len() as u64).to_le_bytes());
            for j in list {
                h.update(j.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

fn bond_counts(n_sites: usize, boundary: Boundary) -> (usize, usize) {
    match boundary {
        Boundary::Open => (n_sites.saturating_sub(1), n_sites.saturating_sub(2)),
        Boundary::Periodic => (n_sites, n_sites),
    }
}

fn check_size(n_sites: usize, limit: usize) -> Result<()> {
    if n_sites > limit {
        Err(Error::Resource { n_sites, limit })
    } else {
        Ok(())
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Builds `H` with the default size limit.
pub fn build_hamiltonian(spec: &SpinModelSpec) -> Result<OperatorMatrix> {
    build_hamiltonian_with_limit(spec, DEFAULT_MAX_SITES)
}

pub fn build_hamiltonian_with_limit(
    spec: &SpinModelSpec,
    max_sites: usize,
) -> Result<OperatorMatrix> {
    spec.validate()?;
    check_size(spec.n_sites, max_sites)?;
    let bonds = spec.bonds();
    let dim = 1usize << spec.n_sites;
    Ok(CsrMatrix::from_rows(dim, dim, |state| {
        let mut diag = 0.0;
        let mut entries = Vec::with_capacity(bonds.len() + 1);
        for &(i, j, coupling) in &bonds {
            let bi = (state >> i) & 1;
            let bj = (state >> j) & 1;
            if bi == bj {
                diag += 0.25 * coupling;
            } else {
                diag -= 0.25 * coupling;
                let flipped = state ^ (1 << i) ^ (1 << j);
                entries.push((flipped, c(0.5 * coupling)));
            }
        }
        entries.push((state, c(diag)));
        entries
    }))
}

/// Single-site `s_z`, `s_+` or `s_-` on site `site` of an `n_sites` chain.
pub fn site_operator(n_sites: usize, site: usize, which: SiteOp) -> OperatorMatrix {
    assert!(site < n_sites);
    let dim = 1usize << n_sites;
    let bit = 1usize << site;
    CsrMatrix::from_rows(dim, dim, |row| {
        let up = row & bit != 0;
        match which {
            SiteOp::Z => vec![(row, c(if up { 0.5 } else { -0.5 }))],
            // <row| s_+ |col> is 1 when row has the bit and col = row without it.
            SiteOp::Plus => {
                if up {
                    vec![(row ^ bit, c(1.0))]
                } else {
                    vec![]
                }
            }
            SiteOp::Minus => {
                if up {
                    vec![]
                } else {
                    vec![(row | bit, c(1.0))]
                }
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteOp {
    Z,
    Plus,
    Minus,
}

/// `s_i . s_j` as a sparse matrix.
pub fn spin_dot(n_sites: usize, i: usize, j: usize) -> OperatorMatrix {
    let spec_bond = [(i, j, 1.0)];
    let dim = 1usize << n_sites;
    CsrMatrix::from_rows(dim, dim, |state| {
        let mut out = Vec::with_capacity(2);
        for &(a, b, coupling) in &spec_bond {
            if a == b {
                out.push((state, c(0.75 * coupling)));
                continue;
            }
            let ba = (state >> a) & 1;
            let bb = (state >> b) & 1;
            if ba == bb {
                out.push((state, c(0.25 * coupling)));
            } else {
                out.push((state, c(-0.25 * coupling)));
                out.push((state ^ (1 << a) ^ (1 << b), c(0.5 * coupling)));
            }
        }
        out
    })
}

/// Global spin operators `S_a = sum_j s_{j,a}`, ladders and the Casimir.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub n_sites: usize,
    pub sx: OperatorMatrix,
    pub sy: OperatorMatrix,
    pub sz: OperatorMatrix,
    pub s_plus: OperatorMatrix,
    pub s_minus: OperatorMatrix,
    pub s_squared: OperatorMatrix,
}

pub fn build_spin_operators(n_sites: usize) -> Result<SpinOperators> {
    build_spin_operators_with_limit(n_sites, DEFAULT_MAX_SITES)
}

pub fn build_spin_operators_with_limit(n_sites: usize, max_sites: usize) -> Result<SpinOperators> {
    if n_sites == 0 {
        return Err(Error::InvalidArgument("need at least one site".into()));
    }
    check_size(n_sites, max_sites)?;
    let dim = 1usize << n_sites;
    let sz = CsrMatrix::from_rows(dim, dim, |state| {
        let up = state.count_ones() as f64;
        vec![(state, c(up - 0.5 * n_sites as f64))]
    });
    let s_plus = CsrMatrix::from_rows(dim, dim, |row| {
        (0..n_sites)
            .filter(|&j| row & (1 << j) != 0)
            .map(|j| (row ^ (1 << j), c(1.0)))
            .collect::<Vec<_>>()
    });
    let s_minus = s_plus.adjoint();
    let half = c(0.5);
    let half_i = Complex64::new(0.0, 0.5);
    let sx = s_plus.axpby(half, &s_minus, half)?;
    // S_y = (S_+ - S_-) / (2i)
    let sy = s_plus.axpby(-half_i, &s_minus, half_i)?;
    let s_squared = sx
        .matmul(&sx)?
        .add(&sy.matmul(&sy)?)?
        .add(&sz.matmul(&sz)?)?;
    Ok(SpinOperators {
        n_sites,
        sx,
        sy,
        sz,
        s_plus,
        s_minus,
        s_squared,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryReport {
    /// `max|[H, S_a]|` for `a = x, y, z`.
    pub h_commutators: [f64; 3],
    /// `max|[S_x, S_y] - i S_z|`.
    pub algebra_residual: f64,
    /// `max|[S_x, S_y]|`, which must be nonzero.
    pub noncommutation_witness: f64,
    pub passed: bool,
}

pub fn verify_symmetry(h: &OperatorMatrix, ops: &SpinOperators) -> Result<SymmetryReport> {
    if h.nrows() != h.ncols() || h.nrows() != ops.sz.nrows() {
        return Err(Error::DimensionMismatch {
            expected: ops.sz.nrows(),
            got: h.nrows(),
        });
    }
    let h_commutators = [
        h.commutator(&ops.sx)?.max_abs(),
        h.commutator(&ops.sy)?.max_abs(),
        h.commutator(&ops.sz)?.max_abs(),
    ];
    let sxy = ops.sx.commutator(&ops.sy)?;
    let algebra_residual = sxy.max_abs_diff(&ops.sz.scale(Complex64::new(0.0, 1.0)))?;
    let noncommutation_witness = sxy.max_abs();
    let passed = h_commutators.iter().all(|&v| v <= SYMMETRY_TOL) && noncommutation_witness > 0.0;
    Ok(SymmetryReport {
        h_commutators,
        algebra_residual,
        noncommutation_witness,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn real_dense(op: &OperatorMatrix) -> DMatrix<f64> {
        op.real_part(0.0).unwrap().to_dense()
    }

    #[test]
    fn two_spin_exchange_spectrum() {
        let spec = SpinModelSpec {
            n_sites: 2,
            nn_couplings: vec![1.0],
            nnn_couplings: vec![],
            boundary: Boundary::Open,
            rng_seed: 0,
        };
        let h = build_hamiltonian(&spec).unwrap();
        let mut ev: Vec<f64> = real_dense(&h)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        let expected = [-0.75, 0.25, 0.25, 0.25];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_site_sz() {
        let ops = build_spin_operators(1).unwrap();
        let d = real_dense(&ops.sz);
        assert_eq!(d[(0, 0)], -0.5);
        assert_eq!(d[(1, 1)], 0.5);
    }

    #[test]
    fn casimir_spectrum_four_sites() {
        let ops = build_spin_operators(4).unwrap();
        assert!(ops.s_squared.commutator(&ops.sz).unwrap().max_abs() < 1e-13);
        let mut ev: Vec<f64> = real_dense(&ops.s_squared)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        let count = |x: f64| ev.iter().filter(|&&e| (e - x).abs() < 1e-9).count();
        // 2 singlets, 3 triplets, 1 quintet
        assert_eq!(count(0.0), 2);
        assert_eq!(count(2.0), 9);
        assert_eq!(count(6.0), 5);
    }

    #[test]
    fn algebra_closes_cyclically() {
        let i = Complex64::new(0.0, 1.0);
        for n in 1..=6 {
            let o = build_spin_operators(n).unwrap();
            let triples = [
                (&o.sx, &o.sy, &o.sz),
                (&o.sy, &o.sz, &o.sx),
                (&o.sz, &o.sx, &o.sy),
            ];
            for (a, b, cc) in triples {
                let r = a.commutator(b).unwrap().max_abs_diff(&cc.scale(i)).unwrap();
                assert!(r < 1e-13, "n={n}: {r}");
            }
            for op in [&o.sx, &o.sy, &o.sz, &o.s_squared] {
                assert!(op.hermiticity_defect() < 1e-13);
            }
        }
    }

    #[test]
    fn heisenberg_commutes_with_spin() {
        for n in [3, 5, 8] {
            let spec = SpinModelSpec::default_random(n, 7);
            let h = build_hamiltonian(&spec).unwrap();
            let ops = build_spin_operators(n).unwrap();
            let rep = verify_symmetry(&h, &ops).unwrap();
            assert!(rep.passed, "{rep:?}");
            assert!(h.hermiticity_defect() < 1e-13);
            assert!(h.commutator(&ops.s_squared).unwrap().max_abs() < 1e-12);
            assert!(h.commutator(&ops.s_plus).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn field_along_x_breaks_symmetry() {
        let n = 3;
        let ops = build_spin_operators(n).unwrap();
        let h = ops
            .sz
            .matmul(&ops.sz)
            .unwrap()
            .add(&ops.sx.scale(c(0.3)))
            .unwrap();
        let rep = verify_symmetry(&h, &ops).unwrap();
        assert!(!rep.passed);
        assert!(rep.h_commutators[2] > 0.1);
    }

    #[test]
    fn identity_passes_trivially() {
        let ops = build_spin_operators(3).unwrap();
        let rep = verify_symmetry(&OperatorMatrix::identity(8), &ops).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.h_commutators, [0.0; 3]);
    }

    #[test]
    fn oversized_chain_is_a_resource_error() {
        let spec = SpinModelSpec::default_random(15, 1);
        assert!(matches!(
            build_hamiltonian(&spec),
            Err(Error::Resource { limit: 14, .. })
        ));
        let spec = SpinModelSpec::default_random(10, 1);
        assert!(matches!(
            build_hamiltonian_with_limit(&spec, 8),
            Err(Error::Resource {
                n_sites: 10,
                limit: 8
            })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ops = build_spin_operators(3).unwrap();
        let h = OperatorMatrix::identity(4);
        assert!(matches!(
            verify_symmetry(&h, &ops),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = SpinModelSpec::default_random(6, 3);
        assert!(spec.validate().is_ok());
        assert!(spec.is_nonintegrable());
        spec.nn_couplings.pop();
        assert!(spec.validate().is_err());
        assert!(SpinModelSpec::uniform(1, 1.0, 0.0, Boundary::Open)
            .validate()
            .is_err());
        assert!(!SpinModelSpec::uniform(6, 1.0, 0.0, Boundary::Open).is_nonintegrable());
        assert_eq!(
            SpinModelSpec::uniform(6, 1.0, 0.2, Boundary::Periodic)
                .bonds()
                .len(),
            12
        );
    }
}
