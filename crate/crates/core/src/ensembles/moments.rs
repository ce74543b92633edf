//! Variance and moment diagnostics of initial states and ensembles.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{OperatorMatrix, SpinOperators};
use crate::stats::{log_log_fit, LinearFit};

use super::nats::{levels, thermal_weights, NatsParams};
use super::StateCoefficients;
use crate::spectral::SpectrumTable;

#[derive(Clone, Debug, PartialEq)]
pub struct AmcReport {
    pub n_sites: usize,
    pub energy: f64,
    pub magnetization: f64,
    pub mean_sx: f64,
    pub mean_sy: f64,
    pub var_h: f64,
    pub var_sx: f64,
    pub var_sy: f64,
    pub var_sz: f64,
}

fn mean_and_variance(op: &OperatorMatrix, psi: &[Complex64]) -> (f64, f64) {
    let o = op.apply(psi);
    let mean: Complex64 = psi.iter().zip(&o).map(|(a, b)| a.conj() * b).sum();
    let second: f64 = o.iter().map(|c| c.norm_sqr()).sum();
    (mean.re, second - mean.re * mean.re)
}

/// Charges and variances of a normalized full-space state.
pub fn amc_check(psi: &[Complex64], h: &OperatorMatrix, ops: &SpinOperators) -> Result<AmcReport> {
    if psi.len() != h.nrows() || psi.len() != ops.sz.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: psi.len(),
        });
    }
    let (energy, var_h) = mean_and_variance(h, psi);
    let (mean_sx, var_sx) = mean_and_variance(&ops.sx, psi);
    let (mean_sy, var_sy) = mean_and_variance(&ops.sy, psi);
    let (magnetization, var_sz) = mean_and_variance(&ops.sz, psi);
    Ok(AmcReport {
        n_sites: ops.n_sites,
        energy,
        magnetization,
        mean_sx,
        mean_sy,
        var_h,
        var_sx,
        // Variances of S_x and S_y are about their own means, which vanish for states
        // aligned with z; the definitions use <S_{x,y}^2> directly.
        var_sy,
        var_sz,
    })
}

/// Log-log slopes of each variance against `N`.
#[derive(Clone, Debug)]
pub struct AmcScaling {
    pub var_h: LinearFit,
    pub var_sx: LinearFit,
    pub var_sy: LinearFit,
    pub var_sz: LinearFit,
}

pub fn amc_scaling(reports: &[AmcReport]) -> Result<AmcScaling> {
    let n: Vec<f64> = reports.iter().map(|r| r.n_sites as f64).collect();
    let fit = |f: fn(&AmcReport) -> f64| -> Result<LinearFit> {
        let y: Vec<f64> = reports.iter().map(f).collect();
        Ok(log_log_fit(&n, &y)?.0)
    };
    Ok(AmcScaling {
        var_h: fit(|r| r.var_h)?,
        var_sx: fit(|r| r.var_sx + r.mean_sx * r.mean_sx)?,
        var_sy: fit(|r| r.var_sy + r.mean_sy * r.mean_sy)?,
        var_sz: fit(|r| r.var_sz)?,
    })
}

/// A probability distribution over levels `(E_alpha, m, s_alpha)`.
#[derive(Clone, Debug)]
pub struct LevelDistribution {
    pub n_sites: usize,
    /// `(E_alpha, m, s_alpha, p)`.
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl LevelDistribution {
    /// Diagonal ensemble `|C_{alpha,m}|^2`.
    pub fn diagonal(state: &StateCoefficients, table: &SpectrumTable) -> Result<Self> {
        state.check_table(table)?;
        let points = state
            .probabilities()
            .filter(|p| p.2 > 0.0)
            .map(|(a, m, p)| (table.energy(a), m.value(), table.spin(a).value(), p))
            .collect();
        Ok(LevelDistribution {
            n_sites: table.n_sites(),
            points,
        })
    }

    pub fn thermal(table: &SpectrumTable, params: &NatsParams) -> Self {
        let w = thermal_weights(table, params);
        let points = levels(table)
            .zip(w.probabilities)
            .map(|((a, tm), p)| (table.energy(a), 0.5 * tm as f64, table.spin(a).value(), p))
            .collect();
        LevelDistribution {
            n_sites: table.n_sites(),
            points,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moment {
    pub orders: (u32, u32, u32),
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub n_sites: usize,
    pub energy: f64,
    pub magnetization: f64,
    pub moments: Vec<Moment>,
}

impl MomentReport {
    pub fn get(&self, a: u32, b: u32, c: u32) -> Option<f64> {
        self.moments
            .iter()
            .find(|m| m.orders == (a, b, c))
            .map(|m| m.value)
    }
}

/// Relative size below which a moment is taken to have cancelled exactly.
const CANCELLATION: f64 = 1e-12;

/// `<(E_alpha - E)^A (m - M)^B (s_alpha - M)^C>_p` for `A + B + C <= max_order`.
pub fn moment_check(dist: &LevelDistribution, max_order: u32) -> MomentReport {
    let total: f64 = dist.points.iter().map(|p| p.3).sum();
    let energy = dist.points.iter().map(|p| p.0 * p.3).sum::<f64>() / total;
    let magnetization = dist.points.iter().map(|p| p.1 * p.3).sum::<f64>() / total;
    let mut moments = Vec::new();
    for order in 0..=max_order {
        for a in (0..=order).rev() {
            for b in (0..=order - a).rev() {
                let c = order - a - b;
                let (sum, magnitude) =
                    dist.points
                        .iter()
                        .fold((0.0, 0.0), |(sum, mag), &(e, m, s, p)| {
                            let t = p
                                * (e - energy).powi(a as i32)
                                * (m - magnetization).powi(b as i32)
                                * (s - magnetization).powi(c as i32);
                            (sum + t, mag + t.abs())
                        });
                // Centered first moments and other exact cancellations leave only rounding.
                let value = if sum.abs() <= CANCELLATION * magnitude {
                    0.0
                } else {
                    sum / total
                };
                moments.push(Moment {
                    orders: (a, b, c),
                    value,
                });
            }
        }
    }
    MomentReport {
        n_sites: dist.n_sites,
        energy,
        magnetization,
        moments,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSlope {
    pub orders: (u32, u32, u32),
    pub slope: f64,
    pub std_error: f64,
    /// `A + B + C - 1`.
    pub bound: f64,
    /// Zero or nonpositive values are consistent with the signed bound at every size.
    pub nonpositive: bool,
    pub exceeds: bool,
}

/// Log-log slopes of `|moment|` against `N`; a moment exceeds the bound when its slope
/// is above `A + B + C - 1` by more than one standard error.
pub fn moment_scaling(reports: &[MomentReport]) -> Result<Vec<MomentSlope>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no moment reports".into()))?;
    let n: Vec<f64> = reports.iter().map(|r| r.n_sites as f64).collect();
    let mut out = Vec::new();
    for m in &first.moments {
        let (a, b, c) = m.orders;
        if a + b + c == 0 {
            continue;
        }
        let y: Vec<f64> = reports
            .iter()
            .map(|r| r.get(a, b, c).unwrap_or(f64::NAN))
            .collect();
        let bound = (a + b + c) as f64 - 1.0;
        let nonpositive = y.iter().all(|&v| v <= 0.0);
        let usable = y.iter().filter(|v| **v != 0.0).count();
        let (slope, std_error) = if usable >= 2 {
            let (fit, _) = log_log_fit(&n, &y)?;
            (fit.slope, fit.slope_std_error)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        let err = if std_error.is_finite() {
            std_error
        } else {
            0.0
        };
        out.push(MomentSlope {
            orders: (a, b, c),
            slope,
            std_error,
            bound,
            nonpositive,
            // The small slack keeps exactly linear moments from failing on rounding.
            exceeds: !nonpositive && slope > bound + err + 1e-9,
        });
    }
    Ok(out)
}
