//! Orthonormal highest-weight states built by coupling one spin-1/2 at a time.
//!
//! Each coupling path `1/2 -> s_2 -> ... -> s_N` yields one state `|s, m = s>`.
//! Distinct paths are orthogonal, so the columns come out orthonormal without any
//! factorization.

use nalgebra::DMatrix;

use crate::basis::SectorBasis;

/// Highest-weight states of an `n`-site chain, grouped by doubled spin.
pub(crate) struct HighestWeight {
    /// `by_twice_s[t]` holds the states with `2s = t`, one per column, in the
    /// sector with `(n + t) / 2` up spins. Empty when the parity does not match.
    pub by_twice_s: Vec<DMatrix<f64>>,
}

/// Applies the prefix lowering operator within a sector.
fn lower(basis: &SectorBasis, up: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; basis.sector_dim(up - 1)];
    for (&state, &a) in basis.sector(up).iter().zip(v) {
        if a == 0.0 {
            continue;
        }
        let mut bits = state;
        while bits != 0 {
            let j = bits.trailing_zeros();
            bits &= bits - 1;
            out[basis.position(state ^ (1 << j))] += a;
        }
    }
    out
}

pub(crate) fn build(n_sites: usize) -> HighestWeight {
    assert!(n_sites >= 1);
    // One site: a single doublet |1/2, 1/2> = up.
    let mut states: Vec<Vec<Vec<f64>>> = vec![Vec::new(), vec![vec![1.0]]];
    for n in 1..n_sites {
        let old = SectorBasis::new(n);
        let new = SectorBasis::new(n + 1);
        let mut next: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n + 2];
        let new_bit = 1u32 << n;
        for (t_old, vecs) in states.iter().enumerate() {
            if vecs.is_empty() {
                continue;
            }
            let up_old = (n + t_old) / 2;
            let up_new = up_old + 1;
            // s = s' + 1/2: append an up spin.
            for v in vecs {
                let mut w = vec![0.0; new.sector_dim(up_new)];
                for (&state, &a) in old.sector(up_old).iter().zip(v) {
                    w[new.position(state | new_bit)] = a;
                }
                next[t_old + 1].push(w);
            }
            if t_old == 0 {
                continue;
            }
            // s = s' - 1/2:
            // sqrt(2s'/(2s'+1)) |s',s'> down - sqrt(1/(2s'+1)) |s',s'-1> up
            let a_down = (t_old as f64 / (t_old as f64 + 1.0)).sqrt();
            let a_up = -(1.0 / (t_old as f64 + 1.0)).sqrt();
            let lower_norm = (t_old as f64).sqrt();
            for v in vecs {
                let lowered = lower(&old, up_old, v);
                let mut w = vec![0.0; new.sector_dim(up_old)];
                for (&state, &a) in old.sector(up_old).iter().zip(v) {
                    w[new.position(state)] += a_down * a;
                }
                for (&state, &a) in old.sector(up_old - 1).iter().zip(&lowered) {
                    w[new.position(state | new_bit)] += a_up * a / lower_norm;
                }
                next[t_old - 1].push(w);
            }
        }
        states = next;
    }
    let full = SectorBasis::new(n_sites);
    let by_twice_s = states
        .into_iter()
        .enumerate()
        .map(|(t, vecs)| {
            if vecs.is_empty() {
                return DMatrix::zeros(0, 0);
            }
            let rows = full.sector_dim((n_sites + t) / 2);
            let cols = vecs.len();
            DMatrix::from_iterator(rows, cols, vecs.into_iter().flatten())
        })
        .collect();
    HighestWeight { by_twice_s }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplicities_follow_ballot_numbers() {
        let hw = build(6);
        let mult: Vec<usize> = hw.by_twice_s.iter().map(|m| m.ncols()).collect();
        assert_eq!(mult, vec![5, 0, 9, 0, 5, 0, 1]);
    }

    #[test]
    fn columns_are_orthonormal_and_annihilated_by_raising() {
        let n = 7;
        let hw = build(n);
        let basis = SectorBasis::new(n);
        for (t, v) in hw.by_twice_s.iter().enumerate() {
            if v.ncols() == 0 {
                continue;
            }
            let gram = v.transpose() * v;
            let eye = DMatrix::<f64>::identity(v.ncols(), v.ncols());
            assert!((gram - eye).amax() < 1e-13);
            let up = (n + t) / 2;
            if up == n {
                continue;
            }
            for col in v.column_iter() {
                let mut raised = vec![0.0; basis.sector_dim(up + 1)];
                for (&state, &a) in basis.sector(up).iter().zip(col.iter()) {
                    for j in 0..n {
                        if state & (1 << j) == 0 {
                            raised[basis.position(state | (1 << j))] += a;
                        }
                    }
                }
                assert!(raised.iter().all(|x| x.abs() < 1e-13));
            }
        }
    }
}
