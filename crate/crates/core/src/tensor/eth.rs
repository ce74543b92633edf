use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::report::{fmt_f64, fmt_opt, write_csv};
use crate::spectral::{EntropySurface, SpectrumTable};
use crate::stats::{linear_fit, mean_std};

use super::ReducedElementTable;

/// Bins with fewer multiplets are left undefined.
pub const DEFAULT_MIN_BIN_COUNT: usize = 5;

/// Diagonal value used for binning: the reduced element, or the measured
/// (vanishing) diagonal element where the triangle rule forbids one.
fn diagonal_sample(r: &ReducedElementTable, a: usize) -> Option<f64> {
    r.diagonal(a)
        .or_else(|| r.forbidden_diagonal().get(&a).copied())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalBin {
    pub energy_bin: usize,
    pub spin_bin: usize,
    pub energy_center: f64,
    pub spin_center: f64,
    pub count: usize,
    /// `None` below the minimum count.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub std_error: Option<f64>,
}

impl DiagonalBin {
    pub fn is_defined(&self) -> bool {
        self.mean.is_some()
    }
}

/// Per-multiplet sample of the diagonal fit.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSample {
    pub label: usize,
    pub energy: f64,
    pub spin: f64,
    pub value: f64,
    pub energy_bin: usize,
    pub spin_bin: usize,
    /// `value` minus the bin mean, when the bin is defined.
    pub residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DiagonalFit {
    pub rank: u32,
    pub n_sites: usize,
    pub bin_widths: (f64, f64),
    pub energy_range: (f64, f64),
    pub bins: Vec<DiagonalBin>,
    pub samples: Vec<DiagonalSample>,
}

impl DiagonalFit {
    pub fn defined_bins(&self) -> impl Iterator<Item = &DiagonalBin> {
        self.bins.iter().filter(|b| b.is_defined())
    }

    /// Smoothed value at `(E, s)`, if that bin is defined.
    pub fn value_at(&self, energy: f64, spin: f64) -> Option<f64> {
        let (ie, is) = self.bin_of(energy, spin)?;
        self.bins
            .iter()
            .find(|b| b.energy_bin == ie && b.spin_bin == is)
            .and_then(|b| b.mean)
    }

    fn bin_of(&self, energy: f64, spin: f64) -> Option<(usize, usize)> {
        let ie = ((energy - self.energy_range.0) / self.bin_widths.0).floor();
        let is = (spin / self.bin_widths.1).floor();
        (ie >= 0.0 && is >= 0.0).then_some((ie as usize, is as usize))
    }

    /// Count-weighted mean of the bin standard deviations over defined bins whose
    /// energy centre lies in the central third of the band.
    pub fn mid_spectrum_std(&self) -> Option<f64> {
        let (lo, hi) = self.energy_range;
        let mid = 0.5 * (lo + hi);
        let half = (1.0 / 6.0) * (hi - lo);
        let mut weight = 0.0;
        let mut acc = 0.0;
        for b in self.defined_bins() {
            if (b.energy_center - mid).abs() <= half {
                if let Some(s) = b.std {
                    acc += s * b.count as f64;
                    weight += b.count as f64;
                }
            }
        }
        (weight > 0.0).then(|| acc / weight)
    }
}

/// Bins diagonal reduced elements over `(E, s)`.
pub fn eth_diagonal_fit(
    r: &ReducedElementTable,
    table: &SpectrumTable,
    bin_widths: (f64, f64),
    min_count: usize,
) -> Result<DiagonalFit> {
    let (de, ds) = bin_widths;
    if !(de > 0.0 && ds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bin widths must be positive, got ({de}, {ds})"
        )));
    }
    if r.n_sites() != table.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: table.n_sites(),
            got: r.n_sites(),
        });
    }
    let e_min = table
        .energies()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let e_max = table
        .energies()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut samples = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for a in 0..table.len() {
        let Some(value) = diagonal_sample(r, a) else {
            continue;
        };
        let energy = table.energy(a);
        let spin = table.spin(a).value();
        let ie = ((energy - e_min) / de).floor() as usize;
        let is = (spin / ds).floor() as usize;
        groups.entry((is, ie)).or_default().push(samples.len());
        samples.push(DiagonalSample {
            label: a,
            energy,
            spin,
            value,
            energy_bin: ie,
            spin_bin: is,
            residual: None,
        });
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "no diagonal reduced elements".into(),
        ));
    }
    let mut bins = Vec::with_capacity(groups.len());
    for ((is, ie), idx) in groups {
        let values: Vec<f64> = idx.iter().map(|&i| samples[i].value).collect();
        let count = values.len();
        let (mean, std, std_error) = if count >= min_count.max(2) {
            let (m, s) = mean_std(&values);
            for &i in &idx {
                samples[i].residual = Some(samples[i].value - m);
            }
            (Some(m), Some(s), Some(s / (count as f64).sqrt()))
        } else {
            (None, None, None)
        };
        bins.push(DiagonalBin {
            energy_bin: ie,
            spin_bin: is,
            energy_center: e_min + (ie as f64 + 0.5) * de,
            spin_center: (is as f64 + 0.5) * ds,
            count,
            mean,
            std,
            std_error,
        });
    }
    Ok(DiagonalFit {
        rank: r.rank(),
        n_sites: table.n_sites(),
        bin_widths,
        energy_range: (e_min, e_max),
        bins,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffDiagonalBin {
    /// `floor(omega / dE)`.
    pub omega_bin: i64,
    /// Doubled `nu = s_alpha - s_alpha'`.
    pub twice_nu: i32,
    pub count: usize,
    /// Mean of `|<a||T||b>| exp(S_th / 2)`, the `|f_nu(omega)|` estimate.
    pub mean_abs_scaled: f64,
    pub rms_scaled: f64,
}

#[derive(Clone, Debug)]
pub struct OffDiagonalStats {
    pub rank: u32,
    pub bins: Vec<OffDiagonalBin>,
    /// Samples whose `(E, S)` falls in an empty entropy bin.
    pub skipped: usize,
    /// Moments of the per-bin rms-normalized residuals over bins with
    /// at least the minimum count.
    pub residual_count: usize,
    pub residual_mean: f64,
    pub residual_variance: f64,
    pub residual_kurtosis: f64,
    /// Largest off-diagonal `|<a||T||b>|` between exactly degenerate levels.
    pub max_abs_value: f64,
}

/// Scaled off-diagonal reduced elements binned by `(omega, nu)`.
pub fn eth_offdiagonal_stats(
    r: &ReducedElementTable,
    table: &SpectrumTable,
    entropy: &EntropySurface,
    min_count: usize,
) -> Result<OffDiagonalStats> {
    if r.n_sites() != table.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: table.n_sites(),
            got: r.n_sites(),
        });
    }
    let de = entropy.bin_widths().0;
    let mut groups: BTreeMap<(i64, i32), Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    let mut max_abs_value: f64 = 0.0;
    for ((a, b), e) in r.entries() {
        if a == b {
            continue;
        }
        let Some(v) = e.value else { continue };
        max_abs_value = max_abs_value.max(v.abs());
        let e_mean = 0.5 * (table.energy(a) + table.energy(b));
        let s_mean = 0.5 * (table.spin(a).value() + table.spin(b).value());
        let Some(s_th) = entropy.value(e_mean, s_mean) else {
            skipped += 1;
            continue;
        };
        let omega = table.energy(a) - table.energy(b);
        let twice_nu = table.spin(a).twice() - table.spin(b).twice();
        let key = ((omega / de).floor() as i64, twice_nu);
        groups.entry(key).or_default().push(v * (0.5 * s_th).exp());
    }
    let mut bins = Vec::with_capacity(groups.len());
    let mut normalized = Vec::new();
    for ((omega_bin, twice_nu), xs) in groups {
        let count = xs.len();
        let rms = (xs.iter().map(|x| x * x).sum::<f64>() / count as f64).sqrt();
        bins.push(OffDiagonalBin {
            omega_bin,
            twice_nu,
            count,
            mean_abs_scaled: xs.iter().map(|x| x.abs()).sum::<f64>() / count as f64,
            rms_scaled: rms,
        });
        if count >= min_count && rms > 0.0 {
            normalized.extend(xs.iter().map(|x| x / rms));
        }
    }
    let n = normalized.len() as f64;
    let (residual_mean, residual_variance, residual_kurtosis) = if normalized.len() >= 2 {
        let mean = normalized.iter().sum::<f64>() / n;
        let m2 = normalized.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = normalized.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, m2 * n / (n - 1.0), m4 / (m2 * m2))
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(OffDiagonalStats {
        rank: r.rank(),
        bins,
        skipped,
        residual_count: normalized.len(),
        residual_mean,
        residual_variance,
        residual_kurtosis,
        max_abs_value,
    })
}

/// One system size for [`spin_density_slope`].
#[derive(Clone, Copy)]
pub struct SizeSample<'a> {
    pub table: &'a SpectrumTable,
    pub reduced: &'a ReducedElementTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeReport {
    pub rank: u32,
    pub sizes: Vec<usize>,
    pub samples: usize,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub intercept: f64,
    pub intercept_ci: (f64, f64),
}

impl SlopeReport {
    pub fn slope_significant(&self) -> bool {
        self.slope_ci.0 > 0.0 || self.slope_ci.1 < 0.0
    }

    pub fn intercept_consistent_with_zero(&self) -> bool {
        self.intercept_ci.0 <= 0.0 && self.intercept_ci.1 >= 0.0
    }
}

/// Fits diagonal reduced elements against `s / N` for multiplets with `E / N` in
/// `energy_window`, pooled over sizes, with 95% confidence intervals.
pub fn spin_density_slope(
    sizes: &[SizeSample<'_>],
    energy_window: (f64, f64),
) -> Result<SlopeReport> {
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 sizes, got {}",
            sizes.len()
        )));
    }
    let rank = sizes[0].reduced.rank();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in sizes {
        if s.reduced.rank() != rank {
            return Err(Error::InvalidArgument("mixed tensor ranks".into()));
        }
        let n = s.table.n_sites() as f64;
        for a in 0..s.table.len() {
            let density = s.table.energy(a) / n;
            if density < energy_window.0 || density > energy_window.1 {
                continue;
            }
            if let Some(v) = diagonal_sample(s.reduced, a) {
                x.push(s.table.spin(a).value() / n);
                y.push(v);
            }
        }
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {} multiplets in energy window {energy_window:?}",
            x.len()
        )));
    }
    let fit = linear_fit(&x, &y)?;
    let hs = fit.slope_half_width(0.95);
    let hi = fit.intercept_half_width(0.95);
    Ok(SlopeReport {
        rank,
        sizes: sizes.iter().map(|s| s.table.n_sites()).collect(),
        samples: fit.samples,
        slope: fit.slope,
        slope_ci: (fit.slope - hs, fit.slope + hs),
        intercept: fit.intercept,
        intercept_ci: (fit.intercept - hi, fit.intercept + hi),
    })
}

/// Columns: `alpha,energy,spin,value,energy_bin,spin_bin,bin_mean,residual`.
pub fn write_diagonal_csv(path: &Path, fit: &DiagonalFit) -> Result<()> {
    let means: BTreeMap<(usize, usize), Option<f64>> = fit
        .bins
        .iter()
        .map(|b| ((b.energy_bin, b.spin_bin), b.mean))
        .collect();
    let rows = fit.samples.iter().map(|s| {
        vec![
            s.label.to_string(),
            fmt_f64(s.energy),
            fmt_f64(s.spin),
            fmt_f64(s.value),
            s.energy_bin.to_string(),
            s.spin_bin.to_string(),
            fmt_opt(means[&(s.energy_bin, s.spin_bin)]),
            fmt_opt(s.residual),
        ]
    });
    write_csv(
        path,
        &[
            "alpha",
            "energy",
            "spin",
            "value",
            "energy_bin",
            "spin_bin",
            "bin_mean",
            "residual",
        ],
        rows,
    )
}

/// Columns: `omega_bin,nu,count,mean_abs_scaled,rms_scaled`.
pub fn write_offdiagonal_csv(path: &Path, stats: &OffDiagonalStats) -> Result<()> {
    let rows = stats.bins.iter().map(|b| {
        vec![
            b.omega_bin.to_string(),
            fmt_f64(b.twice_nu as f64 / 2.0),
            b.count.to_string(),
            fmt_f64(b.mean_abs_scaled),
            fmt_f64(b.rms_scaled),
        ]
    });
    write_csv(
        path,
        &["omega_bin", "nu", "count", "mean_abs_scaled", "rms_scaled"],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, build_spin_operators, SpinModelSpec};
    use crate::spectral::{decompose, entropy_surface};
    use crate::tensor::{build_tensor, reduced_elements, ReductionMode, TensorKind};

    fn table(n: usize, spec: SpinModelSpec) -> SpectrumTable {
        decompose(
            &build_hamiltonian(&spec).unwrap(),
            &build_spin_operators(n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_fit_is_flat() {
        let t = table(8, SpinModelSpec::default_random(8, 2));
        let id = build_tensor(&TensorKind::Identity, 8).unwrap();
        let r = reduced_elements(&id, &t, &ReductionMode::Diagonal).unwrap();
        let fit = eth_diagonal_fit(&r, &t, (0.5, 1.0), DEFAULT_MIN_BIN_COUNT).unwrap();
        assert!(fit.defined_bins().count() > 0);
        for b in fit.defined_bins() {
            assert!((b.mean.unwrap() - 1.0).abs() < 1e-12);
            assert!(b.std.unwrap() < 1e-12);
        }
    }

    #[test]
    fn singlet_bins_vanish_for_quadrupole() {
        let t = table(8, SpinModelSpec::default_random(8, 2));
        let q = build_tensor(&TensorKind::Quadrupole { i: 3, j: 4 }, 8).unwrap();
        let r = reduced_elements(&q, &t, &ReductionMode::Diagonal).unwrap();
        let fit = eth_diagonal_fit(&r, &t, (2.0, 1.0), DEFAULT_MIN_BIN_COUNT).unwrap();
        let singlet_bins: Vec<_> = fit.defined_bins().filter(|b| b.spin_bin == 0).collect();
        assert!(!singlet_bins.is_empty());
        for b in singlet_bins {
            assert!(b.mean.unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn conserved_scalar_has_no_offdiagonal_weight() {
        // -s_0.s_1 summed with the Hamiltonian's own bond structure is H itself when J uniform
        let n = 6;
        let spec = SpinModelSpec::uniform(n, 1.0, 0.0, crate::model::Boundary::Open);
        let t = table(n, spec.clone());
        let h = build_hamiltonian(&spec).unwrap();
        let family =
            crate::tensor::SphericalTensorFamily::from_components(n, vec![h], n, "H").unwrap();
        let r = reduced_elements(&family, &t, &ReductionMode::All).unwrap();
        let s = entropy_surface(&t, (0.5, 1.0)).unwrap();
        let stats = eth_offdiagonal_stats(&r, &t, &s, DEFAULT_MIN_BIN_COUNT).unwrap();
        assert!(stats.max_abs_value < 1e-12);
    }

    #[test]
    fn triangle_rule_limits_nu() {
        let t = table(8, SpinModelSpec::default_random(8, 4));
        let d = build_tensor(&TensorKind::Dipole { site: 1 }, 8).unwrap();
        let r = reduced_elements(&d, &t, &ReductionMode::All).unwrap();
        let s = entropy_surface(&t, (0.5, 1.0)).unwrap();
        let stats = eth_offdiagonal_stats(&r, &t, &s, DEFAULT_MIN_BIN_COUNT).unwrap();
        assert!(stats.bins.iter().all(|b| b.twice_nu.abs() <= 2));
        assert!(stats.residual_count > 0);
        assert!(stats.residual_mean.abs() < 0.5);
    }

    #[test]
    fn slope_needs_three_sizes() {
        let t = table(6, SpinModelSpec::ferromagnetic(6));
        let q = build_tensor(&TensorKind::Quadrupole { i: 2, j: 3 }, 6).unwrap();
        let r = reduced_elements(&q, &t, &ReductionMode::Diagonal).unwrap();
        let one = SizeSample {
            table: &t,
            reduced: &r,
        };
        assert!(spin_density_slope(&[one, one], (-10.0, 10.0)).is_err());
        assert!(spin_density_slope(&[one, one, one], (100.0, 101.0)).is_err());
        let rep = spin_density_slope(&[one, one, one], (-10.0, 10.0)).unwrap();
        assert!(rep.slope_ci.0 <= rep.slope && rep.slope <= rep.slope_ci.1);
    }

    #[test]
    fn csv_export() {
        let t = table(6, SpinModelSpec::default_random(6, 4));
        let d = build_tensor(&TensorKind::Dipole { site: 1 }, 6).unwrap();
        let r = reduced_elements(&d, &t, &ReductionMode::All).unwrap();
        let fit = eth_diagonal_fit(&r, &t, (0.5, 1.0), 2).unwrap();
        let s = entropy_surface(&t, (0.5, 1.0)).unwrap();
        let off = eth_offdiagonal_stats(&r, &t, &s, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_diagonal_csv(&dir.path().join("d.csv"), &fit).unwrap();
        write_offdiagonal_csv(&dir.path().join("o.csv"), &off).unwrap();
        let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
        assert!(text.starts_with("alpha,energy,spin,value"));
        assert_eq!(text.lines().count(), fit.samples.len() + 1);
    }
}
