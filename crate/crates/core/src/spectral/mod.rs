//! Joint eigenbasis of `H`, `S^2` and `S_z`, organised into multiplets.

mod cache;
mod entropy;
mod highest_weight;

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::model::{verify_symmetry, OperatorMatrix, SpinOperators};
use crate::spin_algebra::HalfInteger;

pub use cache::{
    cache_path, load_cached, load_or_decompose, load_or_decompose_with_limit, store_cached,
    CACHE_VERSION,
};
pub use entropy::{entropy_surface, EntropySurface};

/// Threshold on `max|S_+ v|` for the highest-weight basis.
const HIGHEST_WEIGHT_TOL: f64 = 1e-10;

/// Spectrum of a spin-rotation-invariant Hamiltonian.
///
/// Labels `alpha` run over multiplets sorted by `(s, E)`; ties keep the eigensolver order.
/// Eigenvectors live in per-`S_z` sector matrices. Column `c` of sector `u` is
/// `|alpha, m>` with `alpha = sector_labels(u).start + c` and `m = u - N/2`.
#[derive(Clone, Debug)]
pub struct SpectrumTable {
    n_sites: usize,
    model_spec_hash: [u8; 32],
    energies: Vec<f64>,
    spins: Vec<HalfInteger>,
    /// `first_label[t]` is the first label with `2s >= t`.
    first_label: Vec<usize>,
    /// Highest-weight eigenvectors for each doubled spin.
    highest: Vec<DMatrix<f64>>,
    sectors: Vec<DMatrix<f64>>,
    basis: SectorBasis,
    energy_scale: f64,
}

/// One multiplet of a [`SpectrumTable`].
#[derive(Clone, Copy, Debug)]
pub struct SpinMultiplet<'a> {
    table: &'a SpectrumTable,
    label: usize,
}

impl<'a> SpinMultiplet<'a> {
    pub fn label(&self) -> usize {
        self.label
    }

    pub fn energy(&self) -> f64 {
        self.table.energies[self.label]
    }

    pub fn spin(&self) -> HalfInteger {
        self.table.spins[self.label]
    }

    /// `|alpha, m>` restricted to its `S_z` sector.
    pub fn sector_vector(&self, m: HalfInteger) -> Option<&'a [f64]> {
        self.table.sector_vector(self.label, m)
    }

    /// `|alpha, m>` in the full `2^N` space.
    pub fn vector(&self, m: HalfInteger) -> Option<Vec<f64>> {
        let up = self.table.basis.up_count(m)?;
        self.sector_vector(m).map(|v| self.table.basis.embed(up, v))
    }

    /// All `2s + 1` vectors, ordered from `m = s` down to `m = -s`.
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        let s = self.spin();
        let mut m = s;
        let mut out = Vec::with_capacity(s.multiplicity());
        while m.twice() >= -s.twice() {
            out.push(self.vector(m).expect("projection inside multiplet"));
            m = m - HalfInteger::from_int(1);
        }
        out
    }
}

impl SpectrumTable {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energy(&self, label: usize) -> f64 {
        self.energies[label]
    }

    pub fn spin(&self, label: usize) -> HalfInteger {
        self.spins[label]
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn spins(&self) -> &[HalfInteger] {
        &self.spins
    }

    pub fn multiplet(&self, label: usize) -> SpinMultiplet<'_> {
        assert!(label < self.len());
        SpinMultiplet { table: self, label }
    }

    pub fn multiplets(&self) -> impl Iterator<Item = SpinMultiplet<'_>> + '_ {
        (0..self.len()).map(move |label| SpinMultiplet { table: self, label })
    }

    pub fn model_spec_hash(&self) -> &[u8; 32] {
        &self.model_spec_hash
    }

    pub fn with_model_hash(mut self, hash: [u8; 32]) -> Self {
        self.model_spec_hash = hash;
        self
    }

    pub fn basis(&self) -> &SectorBasis {
        &self.basis
    }

    /// `max|H_ij|` of the decomposed Hamiltonian.
    pub fn energy_scale(&self) -> f64 {
        self.energy_scale
    }

    /// `1e-10 * max|H_ij|`.
    pub fn default_degeneracy_tol(&self) -> f64 {
        1e-10 * self.energy_scale.max(f64::MIN_POSITIVE)
    }

    pub fn total_dimension(&self) -> usize {
        self.spins.iter().map(|s| s.multiplicity()).sum()
    }

    pub fn multiplet_counts(&self) -> BTreeMap<HalfInteger, usize> {
        let mut out = BTreeMap::new();
        for &s in &self.spins {
            *out.entry(s).or_insert(0) += 1;
        }
        out
    }

    /// Labels with spin exactly `s`.
    pub fn labels_with_spin(&self, s: HalfInteger) -> Range<usize> {
        let t = s.twice().max(0) as usize;
        if t > self.n_sites {
            return self.len()..self.len();
        }
        self.first_label[t]..self.first_label[t + 1]
    }

    /// Labels present in the sector with `up` up spins, i.e. those with `s >= |m|`.
    pub fn sector_labels(&self, up: usize) -> Range<usize> {
        let t = (2 * up as i64 - self.n_sites as i64).unsigned_abs() as usize;
        self.first_label[t]..self.len()
    }

    /// Eigenvectors of sector `up`, one column per label in [`Self::sector_labels`].
    pub fn sector(&self, up: usize) -> &DMatrix<f64> {
        &self.sectors[up]
    }

    pub fn sector_vector(&self, label: usize, m: HalfInteger) -> Option<&[f64]> {
        if !self.spins[label].admits(m) {
            return None;
        }
        let up = self.basis.up_count(m)?;
        let col = label - self.sector_labels(up).start;
        let mat = &self.sectors[up];
        let rows = mat.nrows();
        Some(&mat.as_slice()[col * rows..(col + 1) * rows])
    }

    /// Highest-weight eigenvectors with doubled spin `t`, one column per label.
    pub(crate) fn highest_weight(&self, t: usize) -> &DMatrix<f64> {
        &self.highest[t]
    }

    /// SHA-256 over the model hash, energies, spins and highest-weight vectors.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n_sites() as u64).to_le_bytes());
        h.update(self.model_spec_hash());
        for (e, s) in self.energies.iter().zip(&self.spins) {
            h.update(e.to_bits().to_le_bytes());
            h.update(s.twice().to_le_bytes());
        }
        for block in &self.highest {
            for x in block.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Groups labels whose energies chain together within `tol`, in ascending energy.
    pub fn energy_classes(&self, tol: f64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.energies[a]
                .total_cmp(&self.energies[b])
                .then(a.cmp(&b))
        });
        let mut classes: Vec<Vec<usize>> = Vec::new();
        let mut last = f64::NEG_INFINITY;
        for a in order {
            let e = self.energies[a];
            match classes.last_mut() {
                Some(c) if e - last < tol => c.push(a),
                _ => classes.push(vec![a]),
            }
            last = e;
        }
        for c in &mut classes {
            c.sort_unstable();
        }
        classes
    }

    fn from_parts(
        n_sites: usize,
        model_spec_hash: [u8; 32],
        energy_scale: f64,
        per_spin: Vec<(Vec<f64>, DMatrix<f64>)>,
    ) -> Self {
        let basis = SectorBasis::new(n_sites);
        let mut energies = Vec::new();
        let mut spins = Vec::new();
        let mut first_label = Vec::with_capacity(n_sites + 2);
        let mut highest = Vec::with_capacity(n_sites + 1);
        for (t, (e, v)) in per_spin.into_iter().enumerate() {
            first_label.push(energies.len());
            spins.extend(std::iter::repeat_n(
                HalfInteger::from_twice(t as i32),
                e.len(),
            ));
            energies.extend(e);
            highest.push(v);
        }
        first_label.push(energies.len());
        let mut table = SpectrumTable {
            n_sites,
            model_spec_hash,
            energies,
            spins,
            first_label,
            highest,
            sectors: Vec::new(),
            basis,
            energy_scale,
        };
        table.sectors = table.lowering_chains();
        table
    }

    /// Fills every sector by lowering the highest-weight vectors.
    fn lowering_chains(&self) -> Vec<DMatrix<f64>> {
        let n = self.n_sites;
        let mut sectors: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n + 1];
        for up in (0..=n).rev() {
            let twice_m = 2 * up as i32 - n as i32;
            let rows = self.basis.sector_dim(up);
            let fresh = if twice_m >= 0 {
                let h = &self.highest[twice_m as usize];
                if h.ncols() > 0 {
                    h.clone()
                } else {
                    DMatrix::zeros(rows, 0)
                }
            } else {
                DMatrix::zeros(rows, 0)
            };
            let lowered = if up < n {
                let src_labels = self.sector_labels(up + 1);
                let keep = self.sector_labels(up);
                let skip = keep.start.saturating_sub(src_labels.start);
                let src = &sectors[up + 1];
                let labels: Vec<usize> = (src_labels.start + skip..src_labels.end).collect();
                let cols: Vec<Vec<f64>> = labels
                    .par_iter()
                    .map(|&label| {
                        let c = label - src_labels.start;
                        let col = &src.as_slice()[c * src.nrows()..(c + 1) * src.nrows()];
                        let t = self.spins[label].twice() as f64;
                        let tm = (twice_m + 2) as f64;
                        let norm = ((t * (t + 2.0) - tm * (tm - 2.0)) / 4.0).sqrt();
                        let mut out = self.lower_in_sector(up + 1, col);
                        out.iter_mut().for_each(|x| *x /= norm);
                        out
                    })
                    .collect();
                DMatrix::from_iterator(rows, cols.len(), cols.into_iter().flatten())
            } else {
                DMatrix::zeros(rows, 0)
            };
            let mut merged = DMatrix::zeros(rows, fresh.ncols() + lowered.ncols());
            merged.columns_mut(0, fresh.ncols()).copy_from(&fresh);
            merged
                .columns_mut(fresh.ncols(), lowered.ncols())
                .copy_from(&lowered);
            sectors[up] = merged;
        }
        sectors
    }

    fn lower_in_sector(&self, up: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.sector_dim(up - 1)];
        for (&state, &a) in self.basis.sector(up).iter().zip(v) {
            let mut bits = state;
            while bits != 0 {
                let j = bits.trailing_zeros();
                bits &= bits - 1;
                out[self.basis.position(state ^ (1 << j))] += a;
            }
        }
        out
    }
}

/// SHA-256 of an operator's nonzero pattern and values.
pub fn operator_digest(op: &OperatorMatrix) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((op.nrows() as u64).to_le_bytes());
    for (r, c, v) in op.triplets() {
        h.update((r as u64).to_le_bytes());
        h.update((c as u64).to_le_bytes());
        h.update(v.re.to_bits().to_le_bytes());
        h.update(v.im.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

/// Diagonalizes `H` multiplet by multiplet.
///
/// Refuses Hamiltonians that fail [`verify_symmetry`]. The table's hash is the operator
/// digest; use [`SpectrumTable::with_model_hash`] to stamp a model spec hash instead.
pub fn decompose(h: &OperatorMatrix, ops: &SpinOperators) -> Result<SpectrumTable> {
    let report = verify_symmetry(h, ops)?;
    if !report.passed {
        return Err(Error::Symmetry(format!(
            "max |[H, S_a]| = {:?}, witness {:e}",
            report.h_commutators, report.noncommutation_witness
        )));
    }
    let n = ops.n_sites;
    let scale = h.max_abs();
    let h_real = h
        .real_part(1e-14 * scale.max(1.0))
        .ok_or_else(|| Error::InvalidArgument("Hamiltonian has imaginary entries".into()))?;
    let basis = SectorBasis::new(n);
    let hw = highest_weight::build(n);
    let per_spin = hw
        .by_twice_s
        .into_par_iter()
        .enumerate()
        .map(|(t, v)| diagonalize_spin_sector(&basis, &h_real, n, t, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumTable::from_parts(
        n,
        operator_digest(h),
        scale,
        per_spin,
    ))
}

fn diagonalize_spin_sector(
    basis: &SectorBasis,
    h: &crate::sparse::CsrMatrix<f64>,
    n: usize,
    t: usize,
    v: DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if v.ncols() == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let up = (n + t) / 2;
    let context = format!("sector 2s={t}");
    if up < n {
        let residual = raising_residual(basis, up, &v);
        if residual > HIGHEST_WEIGHT_TOL {
            return Err(Error::solver(
                context,
                format!("S+ residual {residual:e} on highest-weight basis"),
            ));
        }
    }
    let block = basis.block(h, up, up);
    let hv = block.mul_dense(&v);
    let small = v.transpose() * hv;
    let small = (&small + small.transpose()) * 0.5;
    let dim = small.nrows();
    let eig = SymmetricEigen::try_new(small, f64::EPSILON, 1000 * dim.max(10))
        .ok_or_else(|| Error::solver(context.clone(), "symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((energies, v * q))
}

fn raising_residual(basis: &SectorBasis, up: usize, v: &DMatrix<f64>) -> f64 {
    let n = basis.n_sites();
    let mut worst: f64 = 0.0;
    for col in v.column_iter() {
        let mut raised = vec![0.0; basis.sector_dim(up + 1)];
        for (&state, &a) in basis.sector(up).iter().zip(col.iter()) {
            for j in 0..n {
                if state & (1 << j) == 0 {
                    raised[basis.position(state | (1 << j))] += a;
                }
            }
        }
        worst = raised.iter().fold(worst, |w, x| w.max(x.abs()));
    }
    worst
}

/// A multiplet of dimension `2s + 1 > 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcedDegeneracy {
    pub label: usize,
    pub spin: HalfInteger,
    pub multiplicity: usize,
}

/// Two distinct multiplets closer in energy than the tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct AccidentalDegeneracy {
    pub labels: (usize, usize),
    pub gap: f64,
    /// Equal spins: these pairs keep cross terms in infinite-time averages.
    pub same_spin: bool,
}

#[derive(Clone, Debug)]
pub struct DegeneracyReport {
    pub tol: f64,
    pub forced: Vec<ForcedDegeneracy>,
    pub accidental: Vec<AccidentalDegeneracy>,
}

impl DegeneracyReport {
    pub fn hazard_count(&self) -> usize {
        self.accidental.iter().filter(|a| a.same_spin).count()
    }
}

pub fn degeneracy_report(table: &SpectrumTable, tol: f64) -> Result<DegeneracyReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let forced = table
        .multiplets()
        .filter(|m| m.spin().twice() > 0)
        .map(|m| ForcedDegeneracy {
            label: m.label(),
            spin: m.spin(),
            multiplicity: m.spin().multiplicity(),
        })
        .collect();
    let mut accidental = Vec::new();
    for class in table.energy_classes(tol) {
        for (i, &a) in class.iter().enumerate() {
            for &b in &class[i + 1..] {
                let gap = (table.energy(a) - table.energy(b)).abs();
                if gap < tol {
                    accidental.push(AccidentalDegeneracy {
                        labels: (a, b),
                        gap,
                        same_spin: table.spin(a) == table.spin(b),
                    });
                }
            }
        }
    }
    Ok(DegeneracyReport {
        tol,
        forced,
        accidental,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, build_spin_operators, Boundary, SpinModelSpec};

    fn two_site() -> SpectrumTable {
        let spec = SpinModelSpec::uniform(2, 1.0, 0.0, Boundary::Open);
        let h = build_hamiltonian(&spec).unwrap();
        decompose(&h, &build_spin_operators(2).unwrap()).unwrap()
    }

    #[test]
    fn two_site_singlet_and_triplet() {
        let t = two_site();
        assert_eq!(t.len(), 2);
        assert_eq!(t.spin(0), HalfInteger::ZERO);
        assert!((t.energy(0) + 0.75).abs() < 1e-14);
        assert_eq!(t.spin(1), HalfInteger::from_int(1));
        assert!((t.energy(1) - 0.25).abs() < 1e-14);
        assert_eq!(t.total_dimension(), 4);
        let rep = degeneracy_report(&t, 1e-10).unwrap();
        assert_eq!(rep.forced.len(), 1);
        assert_eq!(rep.forced[0].multiplicity, 3);
        assert!(rep.accidental.is_empty());
    }

    #[test]
    fn lowering_chain_matches_ladder_operator() {
        let n = 6;
        let spec = SpinModelSpec::default_random(n, 11);
        let h = build_hamiltonian(&spec).unwrap();
        let ops = build_spin_operators(n).unwrap();
        let t = decompose(&h, &ops).unwrap();
        let sm = ops.s_minus.real_part(0.0).unwrap();
        let hr = h.real_part(0.0).unwrap();
        for mult in t.multiplets() {
            let vs = mult.vectors();
            let s = mult.spin();
            for (i, v) in vs.iter().enumerate() {
                let norm: f64 = v.iter().map(|x| x * x).sum();
                assert!((norm - 1.0).abs() < 1e-12);
                let hv = hr.matvec(v);
                let res = hv
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - mult.energy() * b).abs())
                    .fold(0.0, f64::max);
                assert!(res < 1e-10);
                if i + 1 < vs.len() {
                    let m = s.value() - i as f64;
                    let c = (s.casimir() - m * (m - 1.0)).sqrt();
                    let lowered = sm.matvec(v);
                    let d = lowered
                        .iter()
                        .zip(&vs[i + 1])
                        .map(|(a, b)| (a - c * b).abs())
                        .fold(0.0, f64::max);
                    assert!(d < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_hamiltonian_is_all_accidental() {
        let n = 4;
        let h = OperatorMatrix::zeros(16, 16);
        let t = decompose(&h, &build_spin_operators(n).unwrap()).unwrap();
        assert_eq!(t.len(), 6);
        let rep = degeneracy_report(&t, 1e-10).unwrap();
        assert_eq!(rep.accidental.len(), 15);
        // two singlets and three triplets give 1 + 3 equal-spin pairs
        assert_eq!(rep.hazard_count(), 4);
    }

    #[test]
    fn symmetry_breaking_is_refused() {
        let ops = build_spin_operators(3).unwrap();
        let h = ops.sx.clone();
        assert!(matches!(decompose(&h, &ops), Err(Error::Symmetry(_))));
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        assert!(degeneracy_report(&two_site(), 0.0).is_err());
    }
}
