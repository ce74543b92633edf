//! Computational basis of `n` spin-1/2 sites, split into fixed-`S_z` sectors.
//!
//! A basis state is a bit string; bit `j` set means site `j` points up.

use crate::sparse::CsrMatrix;
use crate::spin_algebra::HalfInteger;

#[derive(Clone, Debug)]
pub struct SectorBasis {
    n_sites: usize,
    /// `sectors[u]` lists the states with `u` up spins, ascending.
    sectors: Vec<Vec<u32>>,
    /// Position of each state inside its sector.
    position: Vec<u32>,
}

impl SectorBasis {
    pub fn new(n_sites: usize) -> Self {
        assert!(n_sites <= 30, "bit-string basis limited to 30 sites");
        let dim = 1usize << n_sites;
        let mut sectors = vec![Vec::new(); n_sites + 1];
        let mut position = vec![0u32; dim];
        for state in 0..dim as u32 {
            let u = state.count_ones() as usize;
            position[state as usize] = sectors[u].len() as u32;
            sectors[u].push(state);
        }
        SectorBasis {
            n_sites,
            sectors,
            position,
        }
    }

    #[inline]
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    #[inline]
    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    /// Number of up spins for a doubled projection `2m`.
    pub fn up_count(&self, m: HalfInteger) -> Option<usize> {
        let t = m.twice() + self.n_sites as i32;
        if t < 0 || t % 2 != 0 || t / 2 > self.n_sites as i32 {
            None
        } else {
            Some((t / 2) as usize)
        }
    }

    /// Projection `m` of the sector with `u` up spins.
    pub fn projection(&self, up: usize) -> HalfInteger {
        HalfInteger::from_twice(2 * up as i32 - self.n_sites as i32)
    }

    pub fn sector(&self, up: usize) -> &[u32] {
        &self.sectors[up]
    }

    pub fn sector_dim(&self, up: usize) -> usize {
        self.sectors[up].len()
    }

    #[inline]
    pub fn position(&self, state: u32) -> usize {
        self.position[state as usize] as usize
    }

    /// Restricts a full-space operator to the block mapping sector `from_up` into `to_up`.
    /// Entries leaving the target sector are ignored.
    pub fn block<T: crate::sparse::Entry>(
        &self,
        op: &CsrMatrix<T>,
        to_up: usize,
        from_up: usize,
    ) -> CsrMatrix<T> {
        let rows = &self.sectors[to_up];
        CsrMatrix::from_rows(rows.len(), self.sectors[from_up].len(), |r| {
            op.row(rows[r] as usize)
                .filter(|&(c, _)| (c as u32).count_ones() as usize == from_up)
                .map(|(c, v)| (self.position(c as u32), v))
                .collect::<Vec<_>>()
        })
    }

    /// Scatters a sector vector into the full space.
    pub fn embed<T: Copy + num_traits::Zero>(&self, up: usize, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        for (&state, &x) in self.sectors[up].iter().zip(v) {
            out[state as usize] = x;
        }
        out
    }

    /// Gathers the components of a full-space vector lying in sector `up`.
    pub fn restrict<T: Copy>(&self, up: usize, full: &[T]) -> Vec<T> {
        self.sectors[up].iter().map(|&s| full[s as usize]).collect()
    }
}
