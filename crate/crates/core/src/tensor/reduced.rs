use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::spectral::SpectrumTable;
use crate::spin_algebra::{cg_f64, triangle, CGKey, HalfInteger};

use super::SphericalTensorFamily;

/// Probes with `|CG| <= CG_THRESHOLD * max|CG|` are not used for the ratio.
pub const CG_THRESHOLD: f64 = 0.1;

/// Denominator floor for the relative spread of tiny elements.
const SPREAD_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub enum ReductionMode {
    /// Every pair allowed by the triangle rule.
    All,
    /// Only `alpha = alpha'`.
    Diagonal,
    /// Only the listed pairs.
    Pairs(Vec<(usize, usize)>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedElement {
    /// Probe mean; `None` when no probe cleared the CG threshold.
    pub value: Option<f64>,
    /// `(max - min) / max(|mean|, 1e-4)` over the probe ratios.
    pub consistency_spread: f64,
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct ReducedElementTable {
    rank: u32,
    n_sites: usize,
    entries: BTreeMap<(usize, usize), ReducedElement>,
    selection_zero_max: f64,
    forbidden_diagonal: BTreeMap<usize, f64>,
}

impl ReducedElementTable {
    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> Option<&ReducedElement> {
        self.entries.get(&(a, b))
    }

    /// Defined reduced element, if any.
    pub fn value(&self, a: usize, b: usize) -> Option<f64> {
        self.get(a, b).and_then(|e| e.value)
    }

    pub fn diagonal(&self, a: usize) -> Option<f64> {
        self.value(a, a)
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), &ReducedElement)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn max_spread(&self) -> f64 {
        self.entries
            .values()
            .filter(|e| e.value.is_some())
            .map(|e| e.consistency_spread)
            .fold(0.0, f64::max)
    }

    pub fn undefined_count(&self) -> usize {
        self.entries.values().filter(|e| e.value.is_none()).count()
    }

    /// Largest matrix element found where Wigner-Eckart forces a zero:
    /// vanishing CG, triangle-forbidden pairs, or `m != m' + q`.
    pub fn selection_zero_max(&self) -> f64 {
        self.selection_zero_max
    }

    /// `<alpha, s|T_0|alpha, s>` for multiplets with `2s < k`, which must vanish.
    pub fn forbidden_diagonal(&self) -> &BTreeMap<usize, f64> {
        &self.forbidden_diagonal
    }
}

#[derive(Clone, Copy, Debug)]
struct Accumulator {
    sum: f64,
    min: f64,
    max: f64,
    n: usize,
}

impl Default for Accumulator {
    fn default() -> Self {
        Accumulator {
            sum: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            n: 0,
        }
    }
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.n += 1;
    }

    fn finish(&self) -> ReducedElement {
        if self.n == 0 {
            return ReducedElement {
                value: None,
                consistency_spread: 0.0,
                probes: 0,
            };
        }
        let mean = self.sum / self.n as f64;
        ReducedElement {
            value: Some(mean),
            consistency_spread: (self.max - self.min) / mean.abs().max(SPREAD_FLOOR),
            probes: self.n,
        }
    }
}

/// Memoised `max |<s,m|s',m';k,q>|` over all projections.
struct CgScale {
    k: HalfInteger,
    memo: HashMap<(i32, i32), f64>,
}

impl CgScale {
    fn get(&mut self, s: HalfInteger, sp: HalfInteger) -> f64 {
        let k = self.k;
        *self.memo.entry((s.twice(), sp.twice())).or_insert_with(|| {
            let mut best: f64 = 0.0;
            for mp in sp.projections() {
                for q in k.projections() {
                    let m = mp + q;
                    if s.admits(m) {
                        best = best.max(cg_f64(&CGKey::new(s, m, sp, mp, k, q)).abs());
                    }
                }
            }
            best
        })
    }
}

fn real_components(t: &SphericalTensorFamily) -> Result<Vec<CsrMatrix<f64>>> {
    t.components()
        .map(|(q, c)| {
            let scale = c.max_abs().max(1.0);
            c.real_part(1e-14 * scale).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "component q={q} has imaginary entries; only real tensors are supported"
                ))
            })
        })
        .collect()
}

/// Largest entry of `T_q` that changes the up-spin count by anything other than `q`.
fn projection_leak(comp: &CsrMatrix<f64>, q: i32) -> f64 {
    comp.triplets()
        .filter(|&(r, c, _)| (r as u32).count_ones() as i32 - (c as u32).count_ones() as i32 != q)
        .map(|(_, _, v)| v.abs())
        .fold(0.0, f64::max)
}

/// Extracts `<alpha||T||alpha'>` by dividing matrix elements by CG coefficients.
pub fn reduced_elements(
    t: &SphericalTensorFamily,
    table: &SpectrumTable,
    mode: &ReductionMode,
) -> Result<ReducedElementTable> {
    let n = table.n_sites();
    if t.n_sites() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: t.n_sites(),
        });
    }
    let comps = real_components(t)?;
    let k = t.rank_half();
    let mut out = ReducedElementTable {
        rank: t.rank(),
        n_sites: n,
        entries: BTreeMap::new(),
        selection_zero_max: 0.0,
        forbidden_diagonal: BTreeMap::new(),
    };
    for (i, c) in comps.iter().enumerate() {
        let q = i as i32 - t.rank() as i32;
        out.selection_zero_max = out.selection_zero_max.max(projection_leak(c, q));
    }
    let mut scale = CgScale {
        k,
        memo: HashMap::new(),
    };
    match mode {
        ReductionMode::All => all_pairs(&comps, table, k, &mut scale, &mut out),
        ReductionMode::Diagonal => {
            let pairs: Vec<(usize, usize)> = (0..table.len()).map(|a| (a, a)).collect();
            listed_pairs(&comps, table, k, &mut scale, &pairs, &mut out)
        }
        ReductionMode::Pairs(pairs) => {
            if let Some(&(a, b)) = pairs
                .iter()
                .find(|&&(a, b)| a >= table.len() || b >= table.len())
            {
                return Err(Error::InvalidArgument(format!(
                    "pair ({a}, {b}) outside a table of {} multiplets",
                    table.len()
                )));
            }
            listed_pairs(&comps, table, k, &mut scale, pairs, &mut out)
        }
    }
    Ok(out)
}

fn twice_m(n: usize, up: usize) -> i32 {
    2 * up as i32 - n as i32
}

fn all_pairs(
    comps: &[CsrMatrix<f64>],
    table: &SpectrumTable,
    k: HalfInteger,
    scale: &mut CgScale,
    out: &mut ReducedElementTable,
) {
    let n = table.n_sites();
    let len = table.len();
    let basis = table.basis();
    let rank = k.twice() / 2;
    let mut acc = vec![Accumulator::default(); len * len];
    for (i, comp) in comps.iter().enumerate() {
        let q = i as i32 - rank;
        let sources: Vec<usize> = (0..=n)
            .filter(|&u| {
                let target = u as i32 + q;
                target >= 0 && target <= n as i32
            })
            .collect();
        let blocks: Vec<(usize, usize, DMatrix<f64>)> = sources
            .par_iter()
            .map(|&from| {
                let to = (from as i32 + q) as usize;
                let b = basis.block(comp, to, from);
                let bv = b.mul_dense(table.sector(from));
                (to, from, table.sector(to).tr_mul(&bv))
            })
            .collect();
        for (to, from, m) in blocks {
            let rows = table.sector_labels(to);
            let cols = table.sector_labels(from);
            let mp = HalfInteger::from_twice(twice_m(n, from));
            let mq = HalfInteger::from_twice(twice_m(n, to));
            let qh = HalfInteger::from_int(q);
            for (ci, b) in cols.clone().enumerate() {
                let sb = table.spin(b);
                for (ri, a) in rows.clone().enumerate() {
                    let sa = table.spin(a);
                    let x = m[(ri, ci)];
                    if !triangle(sa, sb, k) {
                        out.selection_zero_max = out.selection_zero_max.max(x.abs());
                        if a == b && q == 0 && mq == sa {
                            out.forbidden_diagonal.insert(a, x);
                        }
                        continue;
                    }
                    let cg = cg_f64(&CGKey::new(sa, mq, sb, mp, k, qh));
                    if cg == 0.0 {
                        out.selection_zero_max = out.selection_zero_max.max(x.abs());
                        continue;
                    }
                    if cg.abs() > CG_THRESHOLD * scale.get(sa, sb) {
                        acc[a * len + b].push(x / cg);
                    }
                }
            }
        }
    }
    for a in 0..len {
        for b in 0..len {
            if triangle(table.spin(a), table.spin(b), k) {
                out.entries.insert((a, b), acc[a * len + b].finish());
            }
        }
    }
}

fn listed_pairs(
    comps: &[CsrMatrix<f64>],
    table: &SpectrumTable,
    k: HalfInteger,
    scale: &mut CgScale,
    pairs: &[(usize, usize)],
    out: &mut ReducedElementTable,
) {
    let n = table.n_sites();
    let basis = table.basis();
    let rank = k.twice() / 2;
    let mut blocks: HashMap<(i32, usize), CsrMatrix<f64>> = HashMap::new();
    for q in -rank..=rank {
        for from in 0..=n {
            let to = from as i32 + q;
            if to >= 0 && to <= n as i32 {
                blocks.insert(
                    (q, from),
                    basis.block(&comps[(q + rank) as usize], to as usize, from),
                );
            }
        }
    }
    let block = |q: i32, from: usize| &blocks[&(q, from)];
    let element =
        |blk: &CsrMatrix<f64>, a: usize, m: HalfInteger, b: usize, mp: HalfInteger| -> f64 {
            let va = table.sector_vector(a, m).expect("projection admitted");
            let vb = table.sector_vector(b, mp).expect("projection admitted");
            blk.matvec(vb).iter().zip(va).map(|(x, y)| x * y).sum()
        };
    for &(a, b) in pairs {
        let (sa, sb) = (table.spin(a), table.spin(b));
        if !triangle(sa, sb, k) {
            if a == b {
                let blk = block(0, basis.up_count(sa).expect("valid projection"));
                let x = element(blk, a, sa, a, sa);
                out.selection_zero_max = out.selection_zero_max.max(x.abs());
                out.forbidden_diagonal.insert(a, x);
            }
            continue;
        }
        let threshold = CG_THRESHOLD * scale.get(sa, sb);
        let mut acc = Accumulator::default();
        for mp in sb.projections() {
            for q in -rank..=rank {
                let m = mp + HalfInteger::from_int(q);
                if !sa.admits(m) {
                    continue;
                }
                let cg = cg_f64(&CGKey::new(sa, m, sb, mp, k, HalfInteger::from_int(q)));
                let significant = cg.abs() > threshold;
                if cg != 0.0 && !significant {
                    continue;
                }
                let from = basis.up_count(mp).expect("valid projection");
                let x = element(block(q, from), a, m, b, mp);
                if cg == 0.0 {
                    out.selection_zero_max = out.selection_zero_max.max(x.abs());
                } else {
                    acc.push(x / cg);
                }
            }
        }
        out.entries.insert((a, b), acc.finish());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, build_spin_operators, SpinModelSpec};
    use crate::spectral::decompose;
    use crate::tensor::{build_tensor, TensorKind};

    fn table(n: usize) -> SpectrumTable {
        let spec = SpinModelSpec::default_random(n, 3);
        decompose(
            &build_hamiltonian(&spec).unwrap(),
            &build_spin_operators(n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_calibration() {
        let t = table(6);
        let id = build_tensor(&TensorKind::Identity, 6).unwrap();
        let r = reduced_elements(&id, &t, &ReductionMode::All).unwrap();
        for ((a, b), e) in r.entries() {
            let v = e.value.unwrap_or(0.0);
            if a == b {
                assert!((v - 1.0).abs() < 1e-12);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
        assert!(r.selection_zero_max() < 1e-12);
    }

    #[test]
    fn modes_agree_with_each_other() {
        let t = table(6);
        let q = build_tensor(&TensorKind::Quadrupole { i: 1, j: 3 }, 6).unwrap();
        let all = reduced_elements(&q, &t, &ReductionMode::All).unwrap();
        let diag = reduced_elements(&q, &t, &ReductionMode::Diagonal).unwrap();
        for a in 0..t.len() {
            match (all.diagonal(a), diag.diagonal(a)) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                other => panic!("label {a}: {other:?}"),
            }
        }
        assert_eq!(
            all.forbidden_diagonal().len(),
            diag.forbidden_diagonal().len()
        );
        let pairs = vec![(0, 5), (7, 2), (3, 3)];
        let some = reduced_elements(&q, &t, &ReductionMode::Pairs(pairs.clone())).unwrap();
        for (a, b) in pairs {
            assert_eq!(all.get(a, b).is_some(), some.get(a, b).is_some());
            if let (Some(x), Some(y)) = (all.value(a, b), some.value(a, b)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wigner_eckart_spread_is_tiny() {
        let t = table(6);
        for kind in [
            TensorKind::Dipole { site: 0 },
            TensorKind::Quadrupole { i: 2, j: 3 },
        ] {
            let op = build_tensor(&kind, 6).unwrap();
            let r = reduced_elements(&op, &t, &ReductionMode::All).unwrap();
            assert!(r.max_spread() < 1e-8, "{kind:?}: {}", r.max_spread());
            assert!(r.selection_zero_max() < 1e-12);
            assert_eq!(r.undefined_count(), 0);
        }
    }

    #[test]
    fn out_of_range_pair_is_an_error() {
        let t = table(4);
        let op = build_tensor(&TensorKind::Dipole { site: 0 }, 4).unwrap();
        assert!(reduced_elements(&op, &t, &ReductionMode::Pairs(vec![(0, 99)])).is_err());
        let wrong = build_tensor(&TensorKind::Dipole { site: 0 }, 5).unwrap();
        assert!(reduced_elements(&wrong, &t, &ReductionMode::Diagonal).is_err());
    }
}
