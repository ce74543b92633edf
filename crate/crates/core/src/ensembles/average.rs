//! Infinite-time averages in the diagonal ensemble.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::OperatorMatrix;
use crate::spectral::SpectrumTable;
use crate::spin_algebra::{cg_f64, triangle, CGKey, HalfInteger};
use crate::tensor::ReducedElementTable;

use super::StateCoefficients;

/// Ordered label pairs that survive dephasing: every pair inside an energy class,
/// the diagonal included. Feed these to [`crate::tensor::ReductionMode::Pairs`].
pub fn time_average_pairs(table: &SpectrumTable, tol: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for class in table.energy_classes(tol) {
        for &a in &class {
            for &b in &class {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// `sum C*_{a,m} C_{b,m'} <s_a m|s_b m'; k q> <a||T||b>` over labels in a common energy class.
pub fn time_average(
    r: &ReducedElementTable,
    q: i32,
    state: &StateCoefficients,
    table: &SpectrumTable,
    tol: f64,
) -> Result<Complex64> {
    state.check_table(table)?;
    if r.n_sites() != table.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: table.n_sites(),
            got: r.n_sites(),
        });
    }
    if q.unsigned_abs() > r.rank() {
        return Err(Error::InvalidArgument(format!(
            "q={q} outside rank {}",
            r.rank()
        )));
    }
    let k = HalfInteger::from_int(r.rank() as i32);
    let qh = HalfInteger::from_int(q);
    let occupied = |a: usize| state.multiplet(a).iter().any(|c| c.norm_sqr() > 0.0);
    let mut total = Complex64::new(0.0, 0.0);
    for class in table.energy_classes(tol) {
        let live: Vec<usize> = class.into_iter().filter(|&a| occupied(a)).collect();
        for &a in &live {
            for &b in &live {
                let (sa, sb) = (table.spin(a), table.spin(b));
                if !triangle(sa, sb, k) {
                    continue;
                }
                let reduced = r.value(a, b).ok_or_else(|| {
                    Error::InvalidArgument(format!("missing reduced element for pair ({a}, {b})"))
                })?;
                for mp in sb.projections() {
                    let m = mp + qh;
                    if !sa.admits(m) {
                        continue;
                    }
                    let amp = state.get(a, m).conj() * state.get(b, mp);
                    if amp == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    total += amp * cg_f64(&CGKey::new(sa, m, sb, mp, k, qh)) * reduced;
                }
            }
        }
    }
    Ok(total)
}

/// Dephased average `sum_E <psi_E|T|psi_E>` with `psi_E` the projection of the state on
/// each energy class. Uses eigenvectors and `T` directly, no Wigner-Eckart.
pub fn time_average_dephasing(
    op: &OperatorMatrix,
    state: &StateCoefficients,
    table: &SpectrumTable,
    tol: f64,
) -> Result<Complex64> {
    state.check_table(table)?;
    let basis = table.basis();
    if op.nrows() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: op.nrows(),
        });
    }
    let mut total = Complex64::new(0.0, 0.0);
    for class in table.energy_classes(tol) {
        let mut psi = vec![Complex64::new(0.0, 0.0); basis.dim()];
        let mut any = false;
        for &a in &class {
            let s = table.spin(a);
            for m in s.projections() {
                let c = state.get(a, m);
                if c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                any = true;
                let up = basis.up_count(m).expect("valid projection");
                let v = table.sector_vector(a, m).expect("projection in multiplet");
                for (&st, &x) in basis.sector(up).iter().zip(v) {
                    psi[st as usize] += c * x;
                }
            }
        }
        if !any {
            continue;
        }
        let t_psi = op.apply(&psi);
        total += psi
            .iter()
            .zip(&t_psi)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{build_state, StateKind};
    use crate::model::{build_hamiltonian, build_spin_operators, SpinModelSpec};
    use crate::spectral::decompose;
    use crate::tensor::{build_tensor, reduced_elements, ReductionMode, TensorKind};

    fn setup(n: usize) -> (SpinModelSpec, SpectrumTable) {
        let spec = SpinModelSpec::default_random(n, 5);
        let t = decompose(
            &build_hamiltonian(&spec).unwrap(),
            &build_spin_operators(n).unwrap(),
        )
        .unwrap()
        .with_model_hash(spec.digest());
        (spec, t)
    }

    #[test]
    fn eigenstate_of_scalar_is_stationary() {
        let (_, t) = setup(6);
        let op = build_tensor(&TensorKind::Scalar { i: 2, j: 3 }, 6).unwrap();
        let r = reduced_elements(&op, &t, &ReductionMode::Diagonal).unwrap();
        let a = 7;
        let m = t.spin(a);
        let st = StateCoefficients::eigenstate(&t, a, m).unwrap();
        let tol = t.default_degeneracy_tol();
        let avg = time_average(&r, 0, &st, &t, tol).unwrap();
        assert!((avg.re - r.diagonal(a).unwrap()).abs() < 1e-14);
        assert_eq!(avg.im, 0.0);
    }

    #[test]
    fn both_routes_agree_on_product_state() {
        let (spec, t) = setup(8);
        let kind = StateKind::Product(crate::ensembles::ProductStateSpec {
            m_density: 0.2,
            energy_density: None,
            phi: 0.9,
            seed: 4,
        });
        let st = build_state(&kind, &t, Some(&spec)).unwrap();
        let tol = t.default_degeneracy_tol();
        for kind in [
            TensorKind::Quadrupole { i: 3, j: 4 },
            TensorKind::Dipole { site: 2 },
        ] {
            let op = build_tensor(&kind, 8).unwrap();
            let r = reduced_elements(&op, &t, &ReductionMode::Pairs(time_average_pairs(&t, tol)))
                .unwrap();
            for (q, comp) in op.components() {
                let a = time_average(&r, q, &st, &t, tol).unwrap();
                let b = time_average_dephasing(comp, &st, &t, tol).unwrap();
                assert!((a - b).norm() < 1e-10, "{kind:?} q={q}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn degenerate_classes_keep_cross_terms() {
        // H = 0: one class, so the average is the full expectation value
        let n = 4;
        let ops = build_spin_operators(n).unwrap();
        let t = decompose(&OperatorMatrix::zeros(16, 16), &ops).unwrap();
        let tol = 1e-10;
        let psi: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos() * 0.2))
            .collect();
        let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let psi: Vec<Complex64> = psi.iter().map(|c| c / norm).collect();
        let st = StateCoefficients::from_vector(&t, &psi).unwrap();
        let op = build_tensor(&TensorKind::Quadrupole { i: 0, j: 1 }, n).unwrap();
        let r =
            reduced_elements(&op, &t, &ReductionMode::Pairs(time_average_pairs(&t, tol))).unwrap();
        for (q, comp) in op.components() {
            let direct: Complex64 = psi
                .iter()
                .zip(comp.apply(&psi))
                .map(|(a, b)| a.conj() * b)
                .sum();
            let avg = time_average(&r, q, &st, &t, tol).unwrap();
            assert!((avg - direct).norm() < 1e-12, "q={q}");
        }
    }
}
