//! The lifted state `Y = [x, f] ∈ R^d × L^p(-1, 0; R^d)`, the discrete
//! generator `𝒜_N`, and two realizations of the semigroup `𝒯(t)`.
//!
//! Lifted vectors are laid out as `[head; cell_0; ...; cell_{N-1}]`.
//! Transport moves values toward `s = -1`: the tail rows of `𝒜_N` are the
//! upwind stencil `(f_{j+1} - f_j)/h` with `f_N := head`. With `dt = h`, one
//! forward Euler step of `𝒜_N` is exactly the shift realization below.

use nalgebra::{DMatrix, DVector};

use crate::delay_op::{mat_vec_acc, DelayOperator};
use crate::error::{Error, Result};
use crate::model::{product_norm, DelayMeasure, Problem};
use crate::segments::{Segment, SegmentPath};

pub const EXPM_SIZE_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedState {
    pub head: Vec<f64>,
    pub tail: Segment,
}

impl LiftedState {
    pub fn new(head: Vec<f64>, tail: Segment) -> Result<Self> {
        if head.len() != tail.dim() {
            return Err(Error::DimensionMismatch {
                what: "lifted head",
                expected: tail.dim(),
                got: head.len(),
            });
        }
        Ok(Self { head, tail })
    }

    pub fn initial(problem: &Problem) -> Self {
        Self {
            head: problem.x0.as_slice().to_vec(),
            tail: problem.f0.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.head.len()
    }

    pub fn n_cells(&self) -> usize {
        self.tail.n_cells()
    }

    /// `π₁`.
    pub fn pi1(&self) -> &[f64] {
        &self.head
    }

    /// `π₂`.
    pub fn pi2(&self) -> &Segment {
        &self.tail
    }

    /// `(π₂ Y)(u)` for a grid point `u ∈ [-1, 0]`; `u = 0` is the head.
    pub fn tail_at(&self, u: f64) -> Result<&[f64]> {
        let n = self.n_cells();
        let m = lag_steps(u, n)?;
        Ok(if m == 0 {
            &self.head
        } else {
            self.tail.cell(n - m)
        })
    }

    pub fn norm(&self, p: f64) -> f64 {
        product_norm(&self.head, self.tail.view(), p)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = self.head.clone();
        v.extend_from_slice(self.tail.as_slice());
        DVector::from_vec(v)
    }

    pub fn from_vector(dim: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() < 2 * dim || !v.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                what: "lifted vector",
                expected: dim,
                got: v.len(),
            });
        }
        Ok(Self {
            head: v.as_slice()[..dim].to_vec(),
            tail: Segment::from_cells(dim, v.as_slice()[dim..].to_vec())?,
        })
    }
}

/// Number of cells `m` with `u = -m h`.
fn lag_steps(u: f64, n_cells: usize) -> Result<usize> {
    let h = 1.0 / n_cells as f64;
    let m = (-u * n_cells as f64).round();
    if !(0.0..=n_cells as f64).contains(&m) || (m * h + u).abs() > 1e-9 {
        return Err(Error::OffGrid { t: u, dt: h });
    }
    Ok(m as usize)
}

fn steps_of(t: f64, n_cells: usize) -> Result<usize> {
    let h = 1.0 / n_cells as f64;
    let k = (t * n_cells as f64).round();
    if k < 0.0 || (k * h - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::OffGrid { t, dt: h });
    }
    Ok(k as usize)
}

#[derive(Clone, Debug)]
pub struct DiscreteGenerator {
    dim: usize,
    n_cells: usize,
    matrix: DMatrix<f64>,
}

impl DiscreteGenerator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// `I + dt 𝒜_N`.
    pub fn euler_step_matrix(&self, dt: f64) -> DMatrix<f64> {
        DMatrix::identity(self.matrix.nrows(), self.matrix.ncols()) + &self.matrix * dt
    }
}

pub fn build_generator(problem: &Problem, n_cells: usize) -> Result<DiscreteGenerator> {
    assemble_generator(&problem.drift, &problem.delay, n_cells)
}

pub fn assemble_generator(
    drift: &DMatrix<f64>,
    eta: &DelayMeasure,
    n_cells: usize,
) -> Result<DiscreteGenerator> {
    let d = drift.nrows();
    if drift.shape() != (d, d) || eta.dim != d {
        return Err(Error::DimensionMismatch {
            what: "generator blocks",
            expected: d,
            got: eta.dim,
        });
    }
    let size = d * (n_cells + 1);
    let mut m = DMatrix::zeros(size, size);
    let l = DelayOperator::new(eta, n_cells)?.row_operator();
    m.view_mut((0, 0), (d, size)).copy_from(&l);
    {
        let mut hb = m.view_mut((0, 0), (d, d));
        hb += drift;
    }
    let inv_h = n_cells as f64;
    for j in 0..n_cells {
        let row = d * (j + 1);
        let next = if j + 1 < n_cells { d * (j + 2) } else { 0 };
        for c in 0..d {
            m[(row + c, row + c)] -= inv_h;
            m[(row + c, next + c)] += inv_h;
        }
    }
    Ok(DiscreteGenerator {
        dim: d,
        n_cells,
        matrix: m,
    })
}

/// Exact-transport realization of `𝒯(t)` with step `dt = h`:
/// `head ← head + dt (A head + C(tail, head))`, `tail ← shift_append(tail, old head)`.
#[derive(Clone, Debug)]
pub struct ShiftSemigroup {
    drift: DMatrix<f64>,
    delay: DelayOperator,
    dt: f64,
}

impl ShiftSemigroup {
    pub fn new(drift: &DMatrix<f64>, eta: &DelayMeasure, n_cells: usize) -> Result<Self> {
        if drift.shape() != (eta.dim, eta.dim) {
            return Err(Error::DimensionMismatch {
                what: "drift",
                expected: eta.dim,
                got: drift.nrows(),
            });
        }
        Ok(Self {
            drift: drift.clone(),
            delay: DelayOperator::new(eta, n_cells)?,
            dt: 1.0 / n_cells as f64,
        })
    }

    pub fn for_problem(problem: &Problem, n_cells: usize) -> Result<Self> {
        Self::new(&problem.drift, &problem.delay, n_cells)
    }

    pub fn dim(&self) -> usize {
        self.delay.dim()
    }

    pub fn n_cells(&self) -> usize {
        self.delay.n_cells()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay(&self) -> &DelayOperator {
        &self.delay
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    /// Deterministic head update; `scratch` holds `C(tail, head)`.
    #[inline]
    pub fn next_head(
        &self,
        head: &[f64],
        tail: crate::segments::SegmentView<'_>,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        self.delay.apply_into(tail, head, scratch);
        mat_vec_acc(&self.drift, head, 1.0, scratch);
        for ((o, h), c) in out.iter_mut().zip(head).zip(scratch.iter()) {
            *o = h + self.dt * c;
        }
    }

    pub fn step(&self, state: &mut LiftedState) {
        let d = self.dim();
        let mut scratch = vec![0.0; d];
        let mut next = vec![0.0; d];
        self.next_head(&state.head, state.tail.view(), &mut scratch, &mut next);
        state
            .tail
            .shift_append_in_place(&state.head)
            .expect("dimensions checked at construction");
        state.head = next;
    }

    /// Heads `π₁𝒯(t_k) y`, `k = 0..=steps`, as a segment path.
    pub fn trajectory(&self, state: &LiftedState, steps: usize) -> Result<SegmentPath> {
        self.check_state(state)?;
        let d = self.dim();
        let mut path = SegmentPath::new(&state.tail, &state.head, self.dt)?;
        let mut scratch = vec![0.0; d];
        let mut next = vec![0.0; d];
        for k in 0..steps {
            self.next_head(path.head(k), path.segment_at(k), &mut scratch, &mut next);
            path.push_head(&next)?;
        }
        Ok(path)
    }

    pub fn evolve(&self, state: &LiftedState, t: f64) -> Result<LiftedState> {
        let n = steps_of(t, self.n_cells())?;
        let path = self.trajectory(state, n)?;
        Ok(LiftedState {
            head: path.last_head().to_vec(),
            tail: path.segment_at(n).to_segment(),
        })
    }

    fn check_state(&self, state: &LiftedState) -> Result<()> {
        if state.dim() != self.dim() || state.n_cells() != self.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "lifted state",
                expected: self.dim() * (self.n_cells() + 1),
                got: state.dim() * (state.n_cells() + 1),
            });
        }
        Ok(())
    }

    /// `r_k = π₁𝒯(t_k)[I, 0]`, `k = 0..=steps`.
    pub fn fundamental_kernel(&self, steps: usize) -> Result<Vec<DMatrix<f64>>> {
        let (d, n) = (self.dim(), self.n_cells());
        let mut r = vec![DMatrix::zeros(d, d); steps + 1];
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let path = self.trajectory(&LiftedState::new(e, Segment::zeros(d, n))?, steps)?;
            for (k, rk) in r.iter_mut().enumerate() {
                for (row, v) in path.head(k).iter().enumerate() {
                    rk[(row, i)] = *v;
                }
            }
        }
        Ok(r)
    }

    /// `G_k ≥ sup_{j ≤ k} ‖𝒯(t_j) y‖ / ‖y‖` over a probe set; `G_0 = 1`.
    ///
    /// Probes are the head unit vectors, constant tails, constant states and
    /// up to 32 normalized single-cell indicators.
    pub fn growth_bound(&self, p: f64, steps: usize) -> Result<Vec<f64>> {
        let (d, n) = (self.dim(), self.n_cells());
        let mut probes = Vec::new();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            probes.push(LiftedState::new(e.clone(), Segment::zeros(d, n))?);
            probes.push(LiftedState::new(vec![0.0; d], Segment::constant(n, &e))?);
            probes.push(LiftedState::new(e.clone(), Segment::constant(n, &e))?);
            let stride = n.div_ceil(32).max(1);
            for j in (0..n).step_by(stride) {
                let mut cells = vec![0.0; d * n];
                cells[j * d + i] = 1.0;
                probes.push(LiftedState::new(
                    vec![0.0; d],
                    Segment::from_cells(d, cells)?,
                )?);
            }
        }
        let mut growth = vec![1.0f64; steps + 1];
        for probe in &probes {
            let norm0 = probe.norm(p);
            let path = self.trajectory(probe, steps)?;
            let mut running = 1.0f64;
            for (k, g) in growth.iter_mut().enumerate() {
                let r = product_norm(path.head(k), path.segment_at(k), p) / norm0;
                running = running.max(r);
                *g = g.max(running);
            }
        }
        Ok(growth)
    }
}

pub fn semigroup_shift(
    state: &LiftedState,
    drift: &DMatrix<f64>,
    eta: &DelayMeasure,
    t: f64,
) -> Result<LiftedState> {
    ShiftSemigroup::new(drift, eta, state.n_cells())?.evolve(state, t)
}

/// `exp(t 𝒜_N) y` by scaling and squaring.
pub fn semigroup_expm(g: &DiscreteGenerator, state: &LiftedState, t: f64) -> Result<LiftedState> {
    let size = g.matrix.nrows();
    if size > EXPM_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: EXPM_SIZE_LIMIT,
        });
    }
    if state.dim() != g.dim || state.n_cells() != g.n_cells {
        return Err(Error::DimensionMismatch {
            what: "lifted state",
            expected: size,
            got: state.dim() * (state.n_cells() + 1),
        });
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let e = (&g.matrix * t).exp();
    LiftedState::from_vector(g.dim, &(e * state.to_vector()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropTCheck {
    /// `(π₂𝒯(t) y)(u)`.
    pub lhs: Vec<f64>,
    /// `π₁𝒯(t + u) y`.
    pub rhs: Vec<f64>,
    pub error: f64,
}

fn propt_args(t: f64, u: f64, n_cells: usize) -> Result<()> {
    steps_of(t, n_cells)?;
    lag_steps(u, n_cells)?;
    steps_of(t + u, n_cells)?;
    if !(t > -u || u == 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need t > -u (t = {t}, u = {u})"
        )));
    }
    Ok(())
}

fn propt_result(lhs: &[f64], rhs: &[f64]) -> PropTCheck {
    let error = lhs
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    PropTCheck {
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
        error,
    }
}

/// Head/tail identity under the shift realization.
pub fn check_propt(
    state: &LiftedState,
    drift: &DMatrix<f64>,
    eta: &DelayMeasure,
    t: f64,
    u: f64,
) -> Result<PropTCheck> {
    propt_args(t, u, state.n_cells())?;
    let sg = ShiftSemigroup::new(drift, eta, state.n_cells())?;
    let at_t = sg.evolve(state, t)?;
    let at_tu = sg.evolve(state, t + u)?;
    Ok(propt_result(at_t.tail_at(u)?, at_tu.pi1()))
}

/// Head/tail identity under the matrix-exponential realization (`O(h)` error).
pub fn check_propt_expm(
    g: &DiscreteGenerator,
    state: &LiftedState,
    t: f64,
    u: f64,
) -> Result<PropTCheck> {
    propt_args(t, u, state.n_cells())?;
    let at_t = semigroup_expm(g, state, t)?;
    let at_tu = semigroup_expm(g, state, t + u)?;
    Ok(propt_result(at_t.tail_at(u)?, at_tu.pi1()))
}
