//! Spherical tensor operators, reduced matrix elements and ETH diagnostics.

mod eth;
mod reduced;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{site_operator, spin_dot, OperatorMatrix, SiteOp, SpinOperators};
use crate::spin_algebra::HalfInteger;

pub use eth::{
    eth_diagonal_fit, eth_offdiagonal_stats, spin_density_slope, write_diagonal_csv,
    write_offdiagonal_csv, DiagonalBin, DiagonalFit, DiagonalSample, OffDiagonalBin,
    OffDiagonalStats, SizeSample, SlopeReport, DEFAULT_MIN_BIN_COUNT,
};
pub use reduced::{
    reduced_elements, ReducedElement, ReducedElementTable, ReductionMode, CG_THRESHOLD,
};

/// Few-body tensors supported by [`build_tensor`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TensorKind {
    /// `T^(1)` built from `s_j`.
    Dipole { site: usize },
    /// `T^(2)_0 = 3 s_iz s_jz - s_i.s_j` and its ladder partners.
    Quadrupole { i: usize, j: usize },
    /// `T^(0)_0 = -s_i.s_j`.
    Scalar { i: usize, j: usize },
    /// The identity as a rank-0 tensor.
    Identity,
}

impl TensorKind {
    pub fn rank(&self) -> u32 {
        match self {
            TensorKind::Dipole { .. } => 1,
            TensorKind::Quadrupole { .. } => 2,
            TensorKind::Scalar { .. } | TensorKind::Identity => 0,
        }
    }
}

/// Components `T^(k)_q` for `q = -k..=k`.
#[derive(Clone, Debug)]
pub struct SphericalTensorFamily {
    rank: u32,
    components: Vec<OperatorMatrix>,
    pub locality: usize,
    pub description: String,
    n_sites: usize,
}

impl SphericalTensorFamily {
    /// Wraps user-supplied components ordered `q = -k..=k`.
    pub fn from_components(
        n_sites: usize,
        components: Vec<OperatorMatrix>,
        locality: usize,
        description: impl Into<String>,
    ) -> Result<Self> {
        if components.is_empty() || components.len() % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "a tensor needs 2k+1 components, got {}",
                components.len()
            )));
        }
        let dim = 1usize << n_sites;
        for c in &components {
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.nrows(),
                });
            }
        }
        Ok(SphericalTensorFamily {
            rank: (components.len() as u32 - 1) / 2,
            components,
            locality,
            description: description.into(),
            n_sites,
        })
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn rank_half(&self) -> HalfInteger {
        HalfInteger::from_int(self.rank as i32)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn component(&self, q: i32) -> &OperatorMatrix {
        assert!(
            q.unsigned_abs() <= self.rank,
            "q={q} outside rank {}",
            self.rank
        );
        &self.components[(q + self.rank as i32) as usize]
    }

    pub fn components(&self) -> impl Iterator<Item = (i32, &OperatorMatrix)> {
        let k = self.rank as i32;
        self.components
            .iter()
            .enumerate()
            .map(move |(i, c)| (i as i32 - k, c))
    }
}

/// Residuals of the defining commutators and the Hermiticity pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorAlgebraReport {
    /// `max_q max|[S_z, T_q] - q T_q|`.
    pub sz_residual: f64,
    /// `max_q max|[S_+-, T_q] - sqrt(k(k+1) - q(q+-1)) T_{q+-1}|`.
    pub ladder_residual: f64,
    /// `max_q max|T_q^dagger - (-1)^q T_{-q}|`.
    pub hermiticity_residual: f64,
}

impl TensorAlgebraReport {
    pub fn max(&self) -> f64 {
        self.sz_residual
            .max(self.ladder_residual)
            .max(self.hermiticity_residual)
    }
}

pub fn check_tensor_algebra(
    t: &SphericalTensorFamily,
    ops: &SpinOperators,
) -> Result<TensorAlgebraReport> {
    let k = t.rank as i32;
    let kk = (k * (k + 1)) as f64;
    let mut sz_residual: f64 = 0.0;
    let mut ladder_residual: f64 = 0.0;
    let mut hermiticity_residual: f64 = 0.0;
    for (q, tq) in t.components() {
        let lhs = ops.sz.commutator(tq)?;
        sz_residual = sz_residual.max(lhs.max_abs_diff(&tq.scale(Complex64::new(q as f64, 0.0)))?);
        for (ladder, step) in [(&ops.s_plus, 1), (&ops.s_minus, -1)] {
            let lhs = ladder.commutator(tq)?;
            let target = q + step;
            let r = if target.abs() <= k {
                let c = (kk - (q * target) as f64).sqrt();
                lhs.max_abs_diff(&t.component(target).scale(Complex64::new(c, 0.0)))?
            } else {
                lhs.max_abs()
            };
            ladder_residual = ladder_residual.max(r);
        }
        let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
        let r = tq
            .adjoint()
            .max_abs_diff(&t.component(-q).scale(Complex64::new(sign, 0.0)))?;
        hermiticity_residual = hermiticity_residual.max(r);
    }
    Ok(TensorAlgebraReport {
        sz_residual,
        ladder_residual,
        hermiticity_residual,
    })
}

fn check_site(site: usize, n_sites: usize) -> Result<()> {
    if site >= n_sites {
        Err(Error::InvalidArgument(format!(
            "site {site} outside a chain of {n_sites}"
        )))
    } else {
        Ok(())
    }
}

fn check_pair(i: usize, j: usize, n_sites: usize) -> Result<()> {
    check_site(i, n_sites)?;
    check_site(j, n_sites)?;
    if i == j {
        return Err(Error::InvalidArgument(format!(
            "two-site tensor needs distinct sites, got {i} twice"
        )));
    }
    Ok(())
}

pub fn build_tensor(kind: &TensorKind, n_sites: usize) -> Result<SphericalTensorFamily> {
    if n_sites == 0 || n_sites > 30 {
        return Err(Error::InvalidArgument(format!(
            "unsupported chain length {n_sites}"
        )));
    }
    let r = |x: f64| Complex64::new(x, 0.0);
    match *kind {
        TensorKind::Dipole { site } => {
            check_site(site, n_sites)?;
            let f = 1.0 / 2f64.sqrt();
            let comps = vec![
                site_operator(n_sites, site, SiteOp::Minus).scale(r(f)),
                site_operator(n_sites, site, SiteOp::Z),
                site_operator(n_sites, site, SiteOp::Plus).scale(r(-f)),
            ];
            SphericalTensorFamily::from_components(n_sites, comps, 1, format!("dipole s_{site}"))
        }
        TensorKind::Quadrupole { i, j } => {
            check_pair(i, j, n_sites)?;
            let zz = site_operator(n_sites, i, SiteOp::Z).matmul(&site_operator(
                n_sites,
                j,
                SiteOp::Z,
            ))?;
            let t0 = zz.axpby(r(3.0), &spin_dot(n_sites, i, j), r(-1.0))?;
            let (sp, sm) = two_site_ladders(n_sites, i, j)?;
            let c1 = r(1.0 / 6f64.sqrt());
            let c2 = r(0.5);
            let t1 = sp.commutator(&t0)?.scale(c1);
            let t2 = sp.commutator(&t1)?.scale(c2);
            let tm1 = sm.commutator(&t0)?.scale(c1);
            let tm2 = sm.commutator(&tm1)?.scale(c2);
            SphericalTensorFamily::from_components(
                n_sites,
                vec![tm2, tm1, t0, t1, t2],
                2,
                format!("quadrupole ({i},{j})"),
            )
        }
        TensorKind::Scalar { i, j } => {
            check_pair(i, j, n_sites)?;
            let t0 = spin_dot(n_sites, i, j).scale(r(-1.0));
            SphericalTensorFamily::from_components(
                n_sites,
                vec![t0],
                2,
                format!("scalar -s_{i}.s_{j}"),
            )
        }
        TensorKind::Identity => SphericalTensorFamily::from_components(
            n_sites,
            vec![OperatorMatrix::identity(1 << n_sites)],
            0,
            "identity",
        ),
    }
}

/// `s_i+ + s_j+` and `s_i- + s_j-`; enough to generate two-site components.
fn two_site_ladders(
    n_sites: usize,
    i: usize,
    j: usize,
) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let sp =
        site_operator(n_sites, i, SiteOp::Plus).add(&site_operator(n_sites, j, SiteOp::Plus))?;
    let sm =
        site_operator(n_sites, i, SiteOp::Minus).add(&site_operator(n_sites, j, SiteOp::Minus))?;
    Ok((sp, sm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_spin_operators;

    #[test]
    fn dipole_zero_component_is_sz() {
        let t = build_tensor(&TensorKind::Dipole { site: 2 }, 4).unwrap();
        assert_eq!(t.rank(), 1);
        let diff = t
            .component(0)
            .max_abs_diff(&site_operator(4, 2, SiteOp::Z))
            .unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn quadrupole_zero_component() {
        let n = 3;
        let t = build_tensor(&TensorKind::Quadrupole { i: 0, j: 2 }, n).unwrap();
        let zz = site_operator(n, 0, SiteOp::Z)
            .matmul(&site_operator(n, 2, SiteOp::Z))
            .unwrap();
        let expected = zz
            .scale(Complex64::new(3.0, 0.0))
            .sub(&spin_dot(n, 0, 2))
            .unwrap();
        assert!(t.component(0).max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn families_satisfy_tensor_algebra() {
        let n = 5;
        let ops = build_spin_operators(n).unwrap();
        for kind in [
            TensorKind::Dipole { site: 3 },
            TensorKind::Quadrupole { i: 1, j: 2 },
            TensorKind::Quadrupole { i: 4, j: 0 },
            TensorKind::Scalar { i: 0, j: 3 },
            TensorKind::Identity,
        ] {
            let t = build_tensor(&kind, n).unwrap();
            let rep = check_tensor_algebra(&t, &ops).unwrap();
            assert!(rep.max() < 1e-12, "{kind:?}: {rep:?}");
        }
    }

    #[test]
    fn scalar_commutes_with_spin() {
        let n = 4;
        let ops = build_spin_operators(n).unwrap();
        let t = build_tensor(&TensorKind::Scalar { i: 1, j: 3 }, n).unwrap();
        for s in [&ops.sx, &ops.sy, &ops.sz] {
            assert!(t.component(0).commutator(s).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sites_are_rejected() {
        assert!(build_tensor(&TensorKind::Dipole { site: 4 }, 4).is_err());
        assert!(build_tensor(&TensorKind::Quadrupole { i: 1, j: 1 }, 4).is_err());
        assert!(build_tensor(&TensorKind::Scalar { i: 0, j: 9 }, 4).is_err());
    }

    #[test]
    fn even_component_count_is_rejected() {
        let comps = vec![OperatorMatrix::identity(4), OperatorMatrix::identity(4)];
        assert!(SphericalTensorFamily::from_components(2, comps, 0, "bad").is_err());
    }
}
