//! The delay operator `C f = ∫_{-1}^0 f dη` on discrete segments.
//!
//! An atom at grid node `θ = -1 + i h` (`i < N`) reads cell `i`, the cell
//! whose left endpoint is `θ`, so its lag is exactly `|θ|`. An atom at `0`
//! reads the head (the coupling `f(0) = x`). The density part is the exact
//! integral of the piecewise-constant density against the piecewise-constant
//! segment.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::DelayMeasure;
use crate::segments::SegmentView;

pub const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomTarget {
    Head,
    Cell(usize),
}

pub fn snap_atom(location: f64, n_cells: usize) -> Result<AtomTarget> {
    if !(-1.0 - SNAP_TOL..=SNAP_TOL).contains(&location) {
        return Err(Error::UnsnappedAtom { location, n_cells });
    }
    let i = ((location + 1.0) * n_cells as f64).round();
    let node = -1.0 + i / n_cells as f64;
    if (node - location).abs() > SNAP_TOL {
        return Err(Error::UnsnappedAtom { location, n_cells });
    }
    let i = i as usize;
    Ok(if i >= n_cells {
        AtomTarget::Head
    } else {
        AtomTarget::Cell(i)
    })
}

/// `η` compiled against a fixed cell grid.
#[derive(Clone, Debug)]
pub struct DelayOperator {
    dim: usize,
    n_cells: usize,
    atoms: Vec<(AtomTarget, DMatrix<f64>)>,
    density: Vec<DMatrix<f64>>,
}

impl DelayOperator {
    pub fn new(eta: &DelayMeasure, n_cells: usize) -> Result<Self> {
        let atoms = eta
            .atoms
            .iter()
            .map(|a| {
                if a.weight.shape() != (eta.dim, eta.dim) {
                    return Err(Error::DimensionMismatch {
                        what: "atom weight",
                        expected: eta.dim,
                        got: a.weight.nrows(),
                    });
                }
                Ok((snap_atom(a.location, n_cells)?, a.weight.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: eta.dim,
            n_cells,
            atoms,
            density: eta.density_on_grid(n_cells)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|(_, w)| w.iter().all(|&v| v == 0.0))
            && self.density.iter().all(|m| m.iter().all(|&v| v == 0.0))
    }

    fn check(&self, tail: &SegmentView<'_>, head: &[f64]) -> Result<()> {
        if tail.dim() != self.dim || head.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "delay operand",
                expected: self.dim,
                got: if tail.dim() != self.dim {
                    tail.dim()
                } else {
                    head.len()
                },
            });
        }
        if tail.n_cells() != self.n_cells {
            return Err(Error::DimensionMismatch {
                what: "segment cells",
                expected: self.n_cells,
                got: tail.n_cells(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, tail: SegmentView<'_>, head: &[f64]) -> Result<Vec<f64>> {
        self.check(&tail, head)?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(tail, head, &mut out);
        Ok(out)
    }

    /// Unchecked hot-loop variant; `out` is overwritten.
    pub fn apply_into(&self, tail: SegmentView<'_>, head: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (target, w) in &self.atoms {
            let v = match target {
                AtomTarget::Head => head,
                AtomTarget::Cell(j) => tail.cell(*j),
            };
            mat_vec_acc(w, v, 1.0, out);
        }
        if !self.density.is_empty() {
            let h = 1.0 / self.n_cells as f64;
            for (j, m) in self.density.iter().enumerate() {
                mat_vec_acc(m, tail.cell(j), h, out);
            }
        }
        debug_assert_eq!(out.len(), d);
    }

    /// `L` with `L·[head; cells] = C(f)` (`d × d(N+1)`, head block first).
    pub fn row_operator(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut l = DMatrix::zeros(d, d * (self.n_cells + 1));
        for (target, w) in &self.atoms {
            let col = match target {
                AtomTarget::Head => 0,
                AtomTarget::Cell(j) => d * (j + 1),
            };
            let mut block = l.view_mut((0, col), (d, d));
            block += w;
        }
        let h = 1.0 / self.n_cells as f64;
        for (j, m) in self.density.iter().enumerate() {
            let mut block = l.view_mut((0, d * (j + 1)), (d, d));
            block += m * h;
        }
        l
    }
}

#[inline]
pub(crate) fn mat_vec_acc(m: &DMatrix<f64>, v: &[f64], scale: f64, out: &mut [f64]) {
    let (r, c) = m.shape();
    for i in 0..r {
        let mut acc = 0.0;
        for j in 0..c {
            acc += m[(i, j)] * v[j];
        }
        out[i] += scale * acc;
    }
}

pub fn apply_delay(eta: &DelayMeasure, f: SegmentView<'_>, head: &[f64]) -> Result<Vec<f64>> {
    DelayOperator::new(eta, f.n_cells())?.apply(f, head)
}

pub fn delay_row_operator(eta: &DelayMeasure, n_cells: usize) -> Result<DMatrix<f64>> {
    Ok(DelayOperator::new(eta, n_cells)?.row_operator())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::total_variation;
    use crate::segments::{euclid, Segment};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn atom_at_minus_one_reads_oldest_cell() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let eta = DelayMeasure::atom(-1.0, m.clone());
        let x = [0.7, -0.3];
        let f = Segment::constant(10, &x);
        let got = apply_delay(&eta, f.view(), &[9.0, 9.0]).unwrap();
        let want = &m * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(got, want.as_slice());
    }

    #[test]
    fn unit_density_integrates_left_samples() {
        for n in [10, 100, 1000] {
            let eta = DelayMeasure::zero(1).with_density(vec![m1(1.0)]);
            let f = Segment::from_fn(1, n, |s| vec![s]);
            let got = apply_delay(&eta, f.view(), &[0.0]).unwrap()[0];
            let h = 1.0 / n as f64;
            assert!((got + 0.5).abs() <= h / 2.0 + 1e-12, "n = {n}: {got}");
        }
    }

    #[test]
    fn atom_at_zero_reads_head() {
        let eta = DelayMeasure::atom(0.0, DMatrix::identity(2, 2));
        let f = Segment::from_cells(2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(
            apply_delay(&eta, f.view(), &[1.5, -2.5]).unwrap(),
            vec![1.5, -2.5]
        );
    }

    #[test]
    fn interior_atom_has_exact_lag() {
        // θ = -0.25 on a 4-cell grid reads the cell starting at -0.25.
        let eta = DelayMeasure::atom(-0.25, m1(1.0));
        let f = Segment::from_cells(1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(apply_delay(&eta, f.view(), &[5.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn unsnapped_atom_is_an_error() {
        let eta = DelayMeasure::atom(-0.3, m1(1.0));
        let f = Segment::zeros(1, 4);
        assert!(matches!(
            apply_delay(&eta, f.view(), &[0.0]),
            Err(Error::UnsnappedAtom { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let eta = DelayMeasure::atom(-1.0, m1(1.0));
        let f = Segment::zeros(2, 4);
        assert!(apply_delay(&eta, f.view(), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn row_operator_examples() {
        let l = delay_row_operator(&DelayMeasure::atom(-1.0, m1(2.0)), 2).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(1, 3, &[0.0, 2.0, 0.0]));
        let l = delay_row_operator(&DelayMeasure::zero(3), 5).unwrap();
        assert_eq!(l, DMatrix::zeros(3, 18));
    }

    fn mixed_measure(rng: &mut impl Rng) -> DelayMeasure {
        let mut r = |d: usize| DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        DelayMeasure::atom(-1.0, r(2))
            .with_atom(0.0, r(2))
            .with_atom(-0.5, r(2))
            .with_density(vec![r(2), r(2), r(2), r(2)])
    }

    #[test]
    fn row_operator_matches_apply_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let eta = mixed_measure(&mut rng);
        let n = 8;
        let op = DelayOperator::new(&eta, n).unwrap();
        let l = op.row_operator();
        for _ in 0..100 {
            let z: Vec<f64> = (0..2 * (n + 1))
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let f = Segment::from_cells(2, z[2..].to_vec()).unwrap();
            let direct = op.apply(f.view(), &z[..2]).unwrap();
            let via_l = &l * nalgebra::DVector::from_column_slice(&z);
            for c in 0..2 {
                assert!((direct[c] - via_l[c]).abs() <= 1e-12 * (1.0 + direct[c].abs()));
            }
        }
        // canonical basis
        for b in 0..2 * (n + 1) {
            let mut z = vec![0.0; 2 * (n + 1)];
            z[b] = 1.0;
            let f = Segment::from_cells(2, z[2..].to_vec()).unwrap();
            let direct = op.apply(f.view(), &z[..2]).unwrap();
            assert_eq!(direct, vec![l[(0, b)], l[(1, b)]]);
        }
    }

    proptest! {
        #[test]
        fn apply_is_linear(seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let eta = mixed_measure(&mut rng);
            let n = 8;
            let mut draw = |len| -> Vec<f64> { (0..len).map(|_| rng.random_range(-3.0..3.0)).collect() };
            let (f1, f2, x1, x2) = (draw(2 * n), draw(2 * n), draw(2), draw(2));
            let comb = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| a * p + b * q).collect() };
            let s1 = Segment::from_cells(2, f1.clone()).unwrap();
            let s2 = Segment::from_cells(2, f2.clone()).unwrap();
            let s12 = Segment::from_cells(2, comb(&f1, &f2)).unwrap();
            let y1 = apply_delay(&eta, s1.view(), &x1).unwrap();
            let y2 = apply_delay(&eta, s2.view(), &x2).unwrap();
            let y12 = apply_delay(&eta, s12.view(), &comb(&x1, &x2)).unwrap();
            for c in 0..2 {
                prop_assert!((y12[c] - (a * y1[c] + b * y2[c])).abs() < 1e-11);
            }
        }

        #[test]
        fn apply_bounded_by_total_variation(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let eta = mixed_measure(&mut rng);
            let n = 8;
            let f = Segment::from_cells(2, (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let y = apply_delay(&eta, f.view(), &x).unwrap();
            let bound = total_variation(&eta) * f.view().sup_norm().max(euclid(&x));
            prop_assert!(euclid(&y) <= bound * (1.0 + 1e-12));
        }
    }
}
