use crate::error::{Error, Result};

use super::SpectrumTable;

/// Histogram estimate of `S_th(E, S) = ln(multiplet density)` over `(E, s)` bins.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropySurface {
    e_origin: f64,
    bin_widths: (f64, f64),
    n_energy: usize,
    n_spin: usize,
    /// Row-major over `(spin bin, energy bin)`.
    counts: Vec<usize>,
}

impl EntropySurface {
    pub fn bin_widths(&self) -> (f64, f64) {
        self.bin_widths
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_energy, self.n_spin)
    }

    pub fn bin_of(&self, energy: f64, spin: f64) -> Option<(usize, usize)> {
        let (de, ds) = self.bin_widths;
        let ie = ((energy - self.e_origin) / de).floor();
        let is = (spin / ds).floor();
        if !(ie >= 0.0 && is >= 0.0) || ie as usize >= self.n_energy || is as usize >= self.n_spin {
            return None;
        }
        Some((ie as usize, is as usize))
    }

    pub fn count(&self, ie: usize, is: usize) -> usize {
        self.counts[is * self.n_energy + ie]
    }

    /// `ln(count / dE)`, or `None` for an empty bin.
    pub fn bin_value(&self, ie: usize, is: usize) -> Option<f64> {
        let c = self.count(ie, is);
        (c > 0).then(|| (c as f64 / self.bin_widths.0).ln())
    }

    pub fn value(&self, energy: f64, spin: f64) -> Option<f64> {
        self.bin_of(energy, spin)
            .and_then(|(ie, is)| self.bin_value(ie, is))
    }

    pub fn bin_center(&self, ie: usize, is: usize) -> (f64, f64) {
        let (de, ds) = self.bin_widths;
        (
            self.e_origin + (ie as f64 + 0.5) * de,
            (is as f64 + 0.5) * ds,
        )
    }

    pub fn max_value(&self) -> Option<f64> {
        (0..self.n_spin)
            .flat_map(|is| (0..self.n_energy).map(move |ie| (ie, is)))
            .filter_map(|(ie, is)| self.bin_value(ie, is))
            .reduce(f64::max)
    }

    /// `sum exp(S_th) dE` over occupied bins.
    pub fn integrated_count(&self) -> f64 {
        (0..self.n_spin)
            .flat_map(|is| (0..self.n_energy).map(move |ie| (ie, is)))
            .filter_map(|(ie, is)| self.bin_value(ie, is))
            .map(|s| s.exp() * self.bin_widths.0)
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn entropy_surface(table: &SpectrumTable, bin_widths: (f64, f64)) -> Result<EntropySurface> {
    let (de, ds) = bin_widths;
    if !(de > 0.0 && ds > 0.0) || !de.is_finite() || !ds.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bin widths must be positive, got ({de}, {ds})"
        )));
    }
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
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
    let s_max = table.spins().iter().map(|s| s.value()).fold(0.0, f64::max);
    let n_energy = ((e_max - e_min) / de).floor() as usize + 1;
    let n_spin = (s_max / ds).floor() as usize + 1;
    let mut surface = EntropySurface {
        e_origin: e_min,
        bin_widths,
        n_energy,
        n_spin,
        counts: vec![0; n_energy * n_spin],
    };
    for m in table.multiplets() {
        let (ie, is) = surface
            .bin_of(m.energy(), m.spin().value())
            .expect("every multiplet lies on the grid");
        surface.counts[is * n_energy + ie] += 1;
    }
    Ok(surface)
}
