//! Non-Abelian thermal state `exp(-beta (H - mu S_z)) / Z` on a multiplet table.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{OperatorMatrix, SpinOperators};
use crate::spectral::SpectrumTable;
use crate::spin_algebra::{cg_f64, triangle, CGKey, HalfInteger};
use crate::tensor::ReducedElementTable;

/// Solved ensemble parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NatsParams {
    pub beta: f64,
    pub mu: f64,
    pub target_e: f64,
    pub target_m: f64,
    /// `(E(beta, mu) - E*, M(beta, mu) - M*)`.
    pub residuals: (f64, f64),
    pub iterations: usize,
}

/// Dense-trace cutoff for the direct cross-checks.
pub const DIRECT_MAX_SITES: usize = 12;

const MAX_ITER: usize = 200;

/// Weights `p_{alpha,m}` of a thermal state, flattened like [`super::StateCoefficients`].
#[derive(Clone, Debug)]
pub struct ThermalWeights {
    pub log_z: f64,
    pub probabilities: Vec<f64>,
}

struct Moments {
    e: f64,
    m: f64,
    var_e: f64,
    var_m: f64,
    cov: f64,
}

/// Iterates `(alpha, 2m)` in table order.
pub(crate) fn levels(table: &SpectrumTable) -> impl Iterator<Item = (usize, i32)> + '_ {
    (0..table.len()).flat_map(move |a| {
        let t = table.spin(a).twice();
        (0..=t).map(move |i| (a, 2 * i - t))
    })
}

fn log_weights(table: &SpectrumTable, beta: f64, h: f64) -> Vec<f64> {
    levels(table)
        .map(|(a, tm)| -beta * table.energy(a) + h * 0.5 * tm as f64)
        .collect()
}

fn moments(table: &SpectrumTable, beta: f64, h: f64) -> Moments {
    let lw = log_weights(table, beta, h);
    let shift = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let (mut se, mut sm, mut see, mut smm, mut sem) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((a, tm), l) in levels(table).zip(&lw) {
        let w = (l - shift).exp();
        let e = table.energy(a);
        let m = 0.5 * tm as f64;
        z += w;
        se += w * e;
        sm += w * m;
        see += w * e * e;
        smm += w * m * m;
        sem += w * e * m;
    }
    let (e, m) = (se / z, sm / z);
    Moments {
        e,
        m,
        var_e: (see / z - e * e).max(0.0),
        var_m: (smm / z - m * m).max(0.0),
        cov: sem / z - e * m,
    }
}

/// `(E, M)` of the ensemble with the given `(beta, mu)`.
pub fn nats_expectations(table: &SpectrumTable, beta: f64, mu: f64) -> (f64, f64) {
    let m = moments(table, beta, beta * mu);
    (m.e, m.m)
}

pub fn thermal_weights(table: &SpectrumTable, params: &NatsParams) -> ThermalWeights {
    let lw = log_weights(table, params.beta, params.beta * params.mu);
    let shift = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - shift).exp()).collect();
    let z: f64 = w.iter().sum();
    ThermalWeights {
        log_z: z.ln() + shift,
        probabilities: w.into_iter().map(|x| x / z).collect(),
    }
}

/// Range of energies reachable at magnetization `target_m`: the lower and upper
/// convex hulls of `{(m, E_alpha) : s_alpha >= |m|}` evaluated at `target_m`.
pub fn attainable_energy(table: &SpectrumTable, target_m: f64) -> Option<(f64, f64)> {
    let n = table.n_sites() as i32;
    let mut lows = Vec::new();
    let mut highs = Vec::new();
    for up in 0..=n {
        let labels = table.sector_labels(up as usize);
        if labels.is_empty() {
            continue;
        }
        let m = 0.5 * (2 * up - n) as f64;
        let es = &table.energies()[labels];
        lows.push((m, es.iter().copied().fold(f64::INFINITY, f64::min)));
        highs.push((m, es.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    }
    let lo = hull_value(&lows, target_m, true)?;
    let hi = hull_value(&highs, target_m, false)?;
    Some((lo, hi))
}

/// Lower (or upper) convex envelope of points sorted by abscissa, evaluated at `x`.
fn hull_value(points: &[(f64, f64)], x: f64, lower: bool) -> Option<f64> {
    let first = points.first()?.0;
    let last = points.last()?.0;
    if x < first || x > last {
        return None;
    }
    let sign = if lower { 1.0 } else { -1.0 };
    let mut best = f64::INFINITY;
    for (i, &(x1, y1)) in points.iter().enumerate() {
        if x1 == x {
            best = best.min(sign * y1);
        }
        for &(x2, y2) in &points[i + 1..] {
            if x1 <= x && x <= x2 && x2 > x1 {
                let y = y1 + (y2 - y1) * (x - x1) / (x2 - x1);
                best = best.min(sign * y);
            }
        }
    }
    Some(sign * best)
}

fn infeasible(target_e: f64, target_m: f64, bounds: String) -> Error {
    Error::Infeasible {
        energy: target_e,
        magnetization: target_m,
        bounds,
    }
}

/// Residuals are judged against the extensive scales `N J` and `N / 2`, since the
/// targets themselves may be arbitrarily close to zero.
fn converged(table: &SpectrumTable, r_e: f64, r_m: f64, target_e: f64, target_m: f64) -> bool {
    let n = table.n_sites() as f64;
    let e_scale = target_e.abs().max(n * table.energy_scale()).max(1.0);
    let m_scale = target_m.abs().max(0.5 * n);
    r_e.abs() <= 1e-12 * e_scale && r_m.abs() <= 1e-12 * m_scale
}

/// Finds `(beta, mu)` reproducing the targets.
///
/// `target_m == 0` fixes `mu = 0` and solves for `beta` alone.
pub fn solve_nats(table: &SpectrumTable, target_e: f64, target_m: f64) -> Result<NatsParams> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if !target_e.is_finite() || !target_m.is_finite() {
        return Err(Error::InvalidArgument("targets must be finite".into()));
    }
    let half_n = 0.5 * table.n_sites() as f64;
    if target_m.abs() >= half_n {
        return Err(infeasible(
            target_e,
            target_m,
            format!("|M| < {half_n} required"),
        ));
    }
    let (lo, hi) = attainable_energy(table, target_m)
        .ok_or_else(|| infeasible(target_e, target_m, "no multiplets".into()))?;
    let margin = 1e-9 * (hi - lo).abs().max(1.0);
    if !(target_e > lo + margin && target_e < hi - margin) {
        return Err(infeasible(
            target_e,
            target_m,
            format!("E in ({lo}, {hi}) at this M"),
        ));
    }
    if target_m == 0.0 {
        solve_beta(table, target_e)
    } else {
        solve_two_dimensional(table, target_e, target_m)
    }
}

/// Safeguarded Newton on `E(beta) - E*` with `mu = 0`; `E` decreases in `beta`.
fn solve_beta(table: &SpectrumTable, target_e: f64) -> Result<NatsParams> {
    let f = |beta: f64| {
        let m = moments(table, beta, 0.0);
        (m.e - target_e, m.var_e)
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo).0 < 0.0 {
        lo *= 2.0;
        if lo < -1e8 {
            return Err(Error::solver("nats", "could not bracket beta from below"));
        }
    }
    while f(hi).0 > 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::solver("nats", "could not bracket beta from above"));
        }
    }
    let scale = table.energy_scale().max(1e-300) * table.n_sites() as f64;
    let mut beta = 1.0 / scale;
    if beta <= lo || beta >= hi {
        beta = 0.5 * (lo + hi);
    }
    for it in 0..MAX_ITER {
        let (r, var) = f(beta);
        if converged(table, r, 0.0, target_e, 0.0) {
            return Ok(NatsParams {
                beta,
                mu: 0.0,
                target_e,
                target_m: 0.0,
                residuals: (r, 0.0),
                iterations: it,
            });
        }
        if r > 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        let newton = beta + r / var;
        beta = if var > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * beta.abs().max(1e-300) {
            let (r, _) = f(beta);
            return Ok(NatsParams {
                beta,
                mu: 0.0,
                target_e,
                target_m: 0.0,
                residuals: (r, 0.0),
                iterations: it + 1,
            });
        }
    }
    let (r, _) = f(beta);
    Err(Error::solver(
        "nats",
        format!("no convergence; last residual dE = {r:e}"),
    ))
}

/// Newton on the gradient of the convex potential `ln Z(beta, h) + beta E* - h M*`,
/// `h = beta mu`, backtracking on the scaled residual norm. The potential itself is
/// useless as a merit function near the solution, where its changes drown in rounding.
fn solve_two_dimensional(
    table: &SpectrumTable,
    target_e: f64,
    target_m: f64,
) -> Result<NatsParams> {
    let n = table.n_sites() as f64;
    let e_scale = target_e.abs().max(n * table.energy_scale()).max(1.0);
    let m_scale = target_m.abs().max(0.5 * n);
    let norm = |m: &Moments| {
        (((m.e - target_e) / e_scale).powi(2) + ((m.m - target_m) / m_scale).powi(2)).sqrt()
    };
    let scale = table.energy_scale().max(1e-300) * n;
    let mut x = Vector2::new(1.0 / scale, 0.0);
    let mut m = moments(table, x[0], x[1]);
    let mut rn = norm(&m);
    for it in 0..MAX_ITER {
        let grad = Vector2::new(target_e - m.e, m.m - target_m);
        let (r_e, r_m) = (m.e - target_e, m.m - target_m);
        if converged(table, r_e, r_m, target_e, target_m) {
            return Ok(finish(x, target_e, target_m, (r_e, r_m), it));
        }
        let hess = Matrix2::new(m.var_e, -m.cov, -m.cov, m.var_m);
        let mut ridge = 0.0;
        let step = loop {
            let regularized = hess + Matrix2::identity() * ridge;
            if let Some(inv) = regularized.try_inverse() {
                let s = -(inv * grad);
                if s.iter().all(|v| v.is_finite()) && s.dot(&grad) < 0.0 {
                    break s;
                }
            }
            ridge = if ridge == 0.0 {
                1e-12 * (m.var_e + m.var_m + 1.0)
            } else {
                ridge * 10.0
            };
            if ridge > 1e12 {
                return Err(Error::solver("nats", "singular covariance"));
            }
        };
        let mut t = 1.0;
        loop {
            let trial = x + step * t;
            let mt = moments(table, trial[0], trial[1]);
            let rt = norm(&mt);
            if rt.is_finite() && rt <= (1.0 - 1e-4 * t) * rn {
                x = trial;
                m = mt;
                rn = rt;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                // No step reduces the residual any more: rounding floor.
                if rn <= 1e-9 {
                    return Ok(finish(x, target_e, target_m, (r_e, r_m), it));
                }
                return Err(Error::solver(
                    "nats",
                    format!("line search stalled; residuals dE = {r_e:e}, dM = {r_m:e}"),
                ));
            }
        }
    }
    Err(Error::solver(
        "nats",
        format!(
            "no convergence after {MAX_ITER} iterations; residuals dE = {:e}, dM = {:e}",
            m.e - target_e,
            m.m - target_m
        ),
    ))
}

fn finish(
    x: Vector2<f64>,
    target_e: f64,
    target_m: f64,
    residuals: (f64, f64),
    iterations: usize,
) -> NatsParams {
    NatsParams {
        beta: x[0],
        mu: if x[0] != 0.0 { x[1] / x[0] } else { 0.0 },
        target_e,
        target_m,
        residuals,
        iterations,
    }
}

/// `<T^(k)_q>` in the thermal state via Wigner-Eckart and diagonal reduced elements.
/// Exactly zero for `q != 0`.
pub fn thermal_average(
    r: &ReducedElementTable,
    q: i32,
    table: &SpectrumTable,
    params: &NatsParams,
) -> Result<f64> {
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
    if q != 0 {
        return Ok(0.0);
    }
    let k = HalfInteger::from_int(r.rank() as i32);
    let w = thermal_weights(table, params);
    let mut total = 0.0;
    for ((a, tm), p) in levels(table).zip(&w.probabilities) {
        let s = table.spin(a);
        if !triangle(s, s, k) {
            continue;
        }
        let reduced = r.diagonal(a).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "missing diagonal reduced element for multiplet {a}"
            ))
        })?;
        let m = HalfInteger::from_twice(tm);
        total += p * cg_f64(&CGKey::new(s, m, s, m, k, HalfInteger::ZERO)) * reduced;
    }
    Ok(total)
}

/// Thermal state built by dense diagonalization of `H - mu S_z` in the full space,
/// independent of the multiplet machinery.
pub struct DenseThermalState {
    eigenvectors: DMatrix<f64>,
    probabilities: Vec<f64>,
}

impl DenseThermalState {
    pub fn new(h: &OperatorMatrix, ops: &SpinOperators, params: &NatsParams) -> Result<Self> {
        if ops.n_sites > DIRECT_MAX_SITES {
            return Err(Error::Resource {
                n_sites: ops.n_sites,
                limit: DIRECT_MAX_SITES,
            });
        }
        let k = h.axpby(
            Complex64::new(1.0, 0.0),
            &ops.sz,
            Complex64::new(-params.mu, 0.0),
        )?;
        let k = k
            .real_part(1e-12)
            .ok_or_else(|| Error::InvalidArgument("complex Hamiltonian".into()))?
            .to_dense();
        let eig = SymmetricEigen::new(k);
        let lw: Vec<f64> = eig.eigenvalues.iter().map(|e| -params.beta * e).collect();
        let shift = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|l| (l - shift).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(DenseThermalState {
            eigenvectors: eig.eigenvectors,
            probabilities: w.into_iter().map(|x| x / z).collect(),
        })
    }

    /// `Tr(op rho)`.
    pub fn expectation(&self, op: &OperatorMatrix) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let v: Vec<Complex64> = self
                .eigenvectors
                .column(i)
                .iter()
                .map(|&x| Complex64::new(x, 0.0))
                .collect();
            let ov = op.apply(&v);
            let e: Complex64 = v.iter().zip(&ov).map(|(a, b)| a.conj() * b).sum();
            total += p * e;
        }
        total
    }
}

/// `Tr(T rho)` from a dense full-space thermal state.
pub fn thermal_average_direct(
    op: &OperatorMatrix,
    h: &OperatorMatrix,
    ops: &SpinOperators,
    params: &NatsParams,
) -> Result<Complex64> {
    Ok(DenseThermalState::new(h, ops, params)?.expectation(op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, build_spin_operators, SpinModelSpec};
    use crate::spectral::decompose;

    fn table(n: usize) -> SpectrumTable {
        let spec = SpinModelSpec::default_random(n, 9);
        decompose(
            &build_hamiltonian(&spec).unwrap(),
            &build_spin_operators(n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_magnetization_fixes_mu() {
        let t = table(8);
        let e_mid = 0.5 * (t.energies()[0] + t.energy(t.len() - 1));
        let (e, _) = nats_expectations(&t, 0.4, 0.0);
        let p = solve_nats(&t, e, 0.0).unwrap();
        assert_eq!(p.mu, 0.0);
        assert!((p.beta - 0.4).abs() < 1e-8);
        let _ = solve_nats(&t, e_mid, 0.0).unwrap();
    }

    #[test]
    fn infinite_temperature() {
        let t = table(6);
        let mean: f64 = levels(&t).map(|(a, _)| t.energy(a)).sum::<f64>() / 64.0;
        let p = solve_nats(&t, mean, 0.0).unwrap();
        assert!(p.beta.abs() < 1e-10);
    }

    #[test]
    fn round_trip_two_dimensional() {
        let t = table(8);
        for (beta, mu) in [(0.7, 0.3), (-0.4, 0.5), (1.5, -0.2)] {
            let (e, m) = nats_expectations(&t, beta, mu);
            let p = solve_nats(&t, e, m).unwrap();
            assert!((p.beta - beta).abs() < 1e-6, "{p:?}");
            assert!((p.mu - mu).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn infeasible_targets() {
        let t = table(6);
        assert!(matches!(
            solve_nats(&t, 0.0, 3.0),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(
            solve_nats(&t, -100.0, 0.0),
            Err(Error::Infeasible { .. })
        ));
        // Fully polarized: only the top multiplet reaches |m| near N/2.
        let (lo, hi) = attainable_energy(&t, 2.9).unwrap();
        assert!(matches!(
            solve_nats(&t, hi + 0.1, 2.9),
            Err(Error::Infeasible { .. })
        ));
        assert!(lo <= hi);
    }

    #[test]
    fn energy_decreases_with_beta() {
        let t = table(6);
        for mu in [0.0, 0.5] {
            let mut last = f64::INFINITY;
            for i in -20..=20 {
                let (e, _) = nats_expectations(&t, 0.1 * i as f64, mu);
                assert!(e < last);
                last = e;
            }
        }
    }

    #[test]
    fn hull_of_segment() {
        let pts = [(-1.0, 0.0), (0.0, 2.0), (1.0, 0.0)];
        assert_eq!(hull_value(&pts, 0.0, true), Some(0.0));
        assert_eq!(hull_value(&pts, 0.0, false), Some(2.0));
        assert_eq!(hull_value(&pts, 2.0, true), None);
    }
}
