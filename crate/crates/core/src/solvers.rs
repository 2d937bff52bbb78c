//! Direct Euler–Maruyama, lifted Euler and Picard iteration on the
//! variation-of-constants formula, all driven by the same Brownian path.

use std::fmt;

use nalgebra::DMatrix;

use crate::delay_op::{mat_vec_acc, DelayOperator};
use crate::error::{Error, Result};
use crate::lift::{LiftedState, ShiftSemigroup};
use crate::mc::{map_paths, Execution};
use crate::model::{product_norm, Problem, SolverConfig};
use crate::noise::{sample_brownian, BrownianPath};
use crate::report::{fmt, Table};
use crate::segments::{euclid, Segment, SegmentPath, SegmentView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Direct,
    Lifted,
    Mild,
    /// Heads supplied from outside, e.g. a closed-form solution on the grid.
    Sampled,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Direct => "direct",
            SolverKind::Lifted => "lifted",
            SolverKind::Mild => "mild",
            SolverKind::Sampled => "sampled",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathMeta {
    pub seed: u64,
    pub stream_id: u64,
    pub coarsening: usize,
    pub dt: f64,
    pub n_cells: usize,
}

impl PathMeta {
    fn new(c: &SolverConfig, w: &BrownianPath) -> Self {
        let id = w.id();
        Self {
            seed: id.seed,
            stream_id: id.stream_id,
            coarsening: id.coarsening,
            dt: c.dt,
            n_cells: c.n_cells,
        }
    }
}

/// Heads `X(t_k)`, the shift-consistent segment history, and the recorded
/// noise terms `B(Y(t_k)) ΔW_k`.
#[derive(Clone, Debug)]
pub struct SolutionPath {
    pub solver: SolverKind,
    pub meta: PathMeta,
    segments: SegmentPath,
    /// Cumulative `Σ_{j<k} B_j ΔW_j`, `d` values per grid time.
    noise_sum: Vec<f64>,
    /// `‖B(Y(t_k))‖²_F` for `k < n`.
    noise_hs2: Vec<f64>,
}

impl SolutionPath {
    fn start(solver: SolverKind, meta: PathMeta, f0: &Segment, x0: &[f64]) -> Result<Self> {
        Ok(Self {
            solver,
            meta,
            segments: SegmentPath::new(f0, x0, meta.dt)?,
            noise_sum: vec![0.0; x0.len()],
            noise_hs2: Vec::new(),
        })
    }

    fn record(&mut self, b_dw: &[f64], hs2: f64) {
        let d = b_dw.len();
        let base = self.noise_sum.len() - d;
        for i in 0..d {
            let prev = self.noise_sum[base + i];
            self.noise_sum.push(prev + b_dw[i]);
        }
        self.noise_hs2.push(hs2);
    }

    /// Deterministic path from externally supplied heads `heads[0..=n]`.
    pub fn from_samples(p: &Problem, dt: f64, heads: &[Vec<f64>]) -> Result<Self> {
        let meta = PathMeta {
            seed: 0,
            stream_id: 0,
            coarsening: 1,
            dt,
            n_cells: p.f0.n_cells(),
        };
        let mut s = Self::start(SolverKind::Sampled, meta, &p.f0, &heads[0])?;
        let zero = vec![0.0; p.dim_state];
        for h in &heads[1..] {
            s.segments.push_head(h)?;
            s.record(&zero, 0.0);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.segments.dim()
    }

    pub fn n_steps(&self) -> usize {
        self.segments.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.meta.dt
    }

    pub fn n_cells(&self) -> usize {
        self.meta.n_cells
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.meta.dt
    }

    pub fn head(&self, k: usize) -> &[f64] {
        self.segments.head(k)
    }

    pub fn last_head(&self) -> &[f64] {
        self.segments.last_head()
    }

    pub fn heads(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.segments.heads()
    }

    pub fn segments(&self) -> &SegmentPath {
        &self.segments
    }

    pub fn segment_at(&self, k: usize) -> SegmentView<'_> {
        self.segments.segment_at(k)
    }

    /// `Y(t_k) = [X(t_k), X_{t_k}]`.
    pub fn lifted(&self, k: usize) -> LiftedState {
        LiftedState {
            head: self.head(k).to_vec(),
            tail: self.segment_at(k).to_segment(),
        }
    }

    pub fn lifted_norm(&self, k: usize, p: f64) -> f64 {
        product_norm(self.head(k), self.segment_at(k), p)
    }

    /// `Σ_{j<k} B(Y(t_j)) ΔW_j`.
    pub fn noise_integral(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.noise_sum[k * d..(k + 1) * d]
    }

    /// `B(Y(t_k)) ΔW_k`.
    pub fn noise_increment(&self, k: usize) -> Vec<f64> {
        let (a, b) = (self.noise_integral(k), self.noise_integral(k + 1));
        b.iter().zip(a).map(|(x, y)| x - y).collect()
    }

    /// `‖B(Y(t_k))‖²_F`.
    pub fn noise_hs2(&self, k: usize) -> f64 {
        self.noise_hs2[k]
    }
}

fn check_inputs(p: &Problem, c: &SolverConfig, w: &BrownianPath) -> Result<usize> {
    let n = check_problem(p, c)?;
    check_path(p, c, w, n)?;
    Ok(n)
}

fn check_problem(p: &Problem, c: &SolverConfig) -> Result<usize> {
    let n = c.steps_for(p.horizon)?;
    let d = p.dim_state;
    if (c.dt * c.n_cells as f64 - 1.0).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "dt ≠ 1/N (dt = {}, N = {})",
            c.dt, c.n_cells
        )));
    }
    if p.f0.n_cells() != c.n_cells {
        return Err(Error::GridMismatch(format!(
            "initial segment has {} cells, config has N = {}",
            p.f0.n_cells(),
            c.n_cells
        )));
    }
    for (what, got) in [
        ("drift", p.drift.nrows()),
        ("drift", p.drift.ncols()),
        ("delay measure", p.delay.dim),
        ("x0", p.x0.len()),
        ("f0", p.f0.dim()),
        ("noise state dimension", p.noise.dim_state()),
    ] {
        if got != d {
            return Err(Error::DimensionMismatch {
                what,
                expected: d,
                got,
            });
        }
    }
    Ok(n)
}

fn check_path(p: &Problem, c: &SolverConfig, w: &BrownianPath, n: usize) -> Result<()> {
    if p.noise.dim_noise() != p.dim_noise || w.dim() != p.dim_noise {
        return Err(Error::DimensionMismatch {
            what: "noise dimension",
            expected: p.dim_noise,
            got: w.dim(),
        });
    }
    if (w.dt() - c.dt).abs() > 1e-12 * c.dt {
        return Err(Error::GridMismatch(format!(
            "brownian path has dt = {}, config has dt = {}",
            w.dt(),
            c.dt
        )));
    }
    if w.n_steps() < n {
        return Err(Error::GridMismatch(format!(
            "brownian path has {} steps, horizon needs {n}",
            w.n_steps()
        )));
    }
    Ok(())
}

/// `out = B(head, tail) ΔW`; returns `‖B‖²_F`.
#[inline]
fn noise_term(
    p: &Problem,
    head: &[f64],
    tail: SegmentView<'_>,
    dw: &[f64],
    bm: &mut DMatrix<f64>,
    out: &mut [f64],
) -> f64 {
    p.noise.eval_into(head, tail, bm);
    out.fill(0.0);
    mat_vec_acc(bm, dw, 1.0, out);
    bm.norm_squared()
}

/// `X_{k+1} = X_k + dt (A X_k + C(X_{t_k})) + B(X_k, X_{t_k}) ΔW_k` on a buffer seeded with `f₀`.
pub fn solve_direct(p: &Problem, c: &SolverConfig, w: &BrownianPath) -> Result<SolutionPath> {
    let n = check_inputs(p, c, w)?;
    let delay = DelayOperator::new(&p.delay, c.n_cells)?;
    let d = p.dim_state;
    let mut sol = SolutionPath::start(
        SolverKind::Direct,
        PathMeta::new(c, w),
        &p.f0,
        p.x0.as_slice(),
    )?;
    let noisy = !p.noise.is_zero();
    let mut drift = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut b_dw = vec![0.0; d];
    let mut bm = DMatrix::zeros(d, p.dim_noise);
    for k in 0..n {
        let head = sol.segments.head(k);
        let seg = sol.segments.segment_at(k);
        delay.apply_into(seg, head, &mut drift);
        mat_vec_acc(&p.drift, head, 1.0, &mut drift);
        for i in 0..d {
            next[i] = head[i] + c.dt * drift[i];
        }
        let hs2 = if noisy {
            let hs2 = noise_term(p, head, seg, w.increment(k), &mut bm, &mut b_dw);
            for i in 0..d {
                next[i] += b_dw[i];
            }
            hs2
        } else {
            0.0
        };
        sol.segments.push_head(&next)?;
        sol.record(&b_dw, hs2);
    }
    Ok(sol)
}

/// Euler on the lifted state: drift and noise enter the head only, the tail is
/// transported exactly.
pub fn solve_lifted(p: &Problem, c: &SolverConfig, w: &BrownianPath) -> Result<SolutionPath> {
    solve_lifted_recording(p, c, w, 0).map(|(s, _)| s)
}

/// As [`solve_lifted`], also returning the lifted state every `stride` steps
/// (`stride = 0` records nothing).
pub fn solve_lifted_recording(
    p: &Problem,
    c: &SolverConfig,
    w: &BrownianPath,
    stride: usize,
) -> Result<(SolutionPath, Vec<(usize, LiftedState)>)> {
    let n = check_inputs(p, c, w)?;
    let sg = ShiftSemigroup::for_problem(p, c.n_cells)?;
    let d = p.dim_state;
    let mut state = LiftedState::initial(p);
    let mut sol = SolutionPath::start(SolverKind::Lifted, PathMeta::new(c, w), &p.f0, &state.head)?;
    let mut snapshots = Vec::new();
    if stride > 0 {
        snapshots.push((0, state.clone()));
    }
    let noisy = !p.noise.is_zero();
    let mut scratch = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut b_dw = vec![0.0; d];
    let mut bm = DMatrix::zeros(d, p.dim_noise);
    for k in 0..n {
        sg.next_head(&state.head, state.tail.view(), &mut scratch, &mut next);
        let hs2 = if noisy {
            let hs2 = noise_term(
                p,
                &state.head,
                state.tail.view(),
                w.increment(k),
                &mut bm,
                &mut b_dw,
            );
            for i in 0..d {
                next[i] += b_dw[i];
            }
            hs2
        } else {
            0.0
        };
        state.tail.shift_append_in_place(&state.head)?;
        std::mem::swap(&mut state.head, &mut next);
        debug_assert_eq!(state.tail.cell(c.n_cells - 1), &next[..]);
        sol.segments.push_head(&state.head)?;
        sol.record(&b_dw, hs2);
        if stride > 0 && (k + 1) % stride == 0 {
            snapshots.push((k + 1, state.clone()));
        }
    }
    Ok((sol, snapshots))
}

/// Initial iterate for the Picard map.
#[derive(Clone, Debug, PartialEq)]
pub enum PicardStart {
    /// The deterministic flow `π₁𝒯(t) Y₀`.
    Deterministic,
    /// `Z₀(t) ≡ x` after the initial time.
    Constant(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub start: PicardStart,
    /// Disable the automatic split into contraction windows.
    pub single_window: bool,
}

impl PicardOptions {
    pub fn new(max_iter: usize, tol: f64) -> Self {
        Self {
            max_iter,
            tol,
            start: PicardStart::Deterministic,
            single_window: false,
        }
    }

    pub fn with_start(mut self, start: PicardStart) -> Self {
        self.start = start;
        self
    }

    pub fn single_window(mut self) -> Self {
        self.single_window = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardWindow {
    pub start_step: usize,
    pub end_step: usize,
    pub iterations: usize,
    /// `d_n = sup_t ‖Z_{n+1}(t) - Z_n(t)‖` over the window.
    pub distances: Vec<f64>,
    /// `K √T* M_{T*}` for the window length `T*`.
    pub envelope: f64,
    /// Distances below this are rounding noise and carry no ratio information.
    pub noise_floor: f64,
}

impl PicardWindow {
    fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.distances
            .windows(2)
            .filter(|w| w[0] > self.noise_floor && w[1] > self.noise_floor)
            .map(|w| w[1] / w[0])
    }

    /// `max_n d_{n+1} / d_n`.
    pub fn empirical_ratio(&self) -> Option<f64> {
        self.ratios().reduce(f64::max)
    }

    /// `(d_last / d_0)^{1/(len-1)}` over the distances above the noise floor.
    pub fn geometric_ratio(&self) -> Option<f64> {
        let above: Vec<f64> = self
            .distances
            .iter()
            .copied()
            .take_while(|&x| x > self.noise_floor)
            .collect();
        if above.len() < 2 {
            return None;
        }
        Some((above[above.len() - 1] / above[0]).powf(1.0 / (above.len() - 1) as f64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardReport {
    pub windows: Vec<PicardWindow>,
    pub lipschitz: f64,
    /// Estimated `M_T` over the full horizon.
    pub growth: f64,
}

impl PicardReport {
    /// Largest iteration count over the windows.
    pub fn iterations(&self) -> usize {
        self.windows.iter().map(|w| w.iterations).max().unwrap_or(0)
    }

    pub fn total_iterations(&self) -> usize {
        self.windows.iter().map(|w| w.iterations).sum()
    }

    pub fn empirical_ratio(&self) -> Option<f64> {
        self.windows
            .iter()
            .filter_map(|w| w.empirical_ratio())
            .reduce(f64::max)
    }

    pub fn envelope(&self) -> f64 {
        self.windows.iter().map(|w| w.envelope).fold(0.0, f64::max)
    }
}

/// Kernel and deterministic flow for the variation-of-constants map.
struct MildMap<'a> {
    p: &'a Problem,
    sg: ShiftSemigroup,
    kernel: Vec<DMatrix<f64>>,
    n_steps: usize,
}

impl<'a> MildMap<'a> {
    fn new(p: &'a Problem, c: &SolverConfig) -> Result<Self> {
        let n_steps = check_problem(p, c)?;
        let sg = ShiftSemigroup::for_problem(p, c.n_cells)?;
        let kernel = if p.noise.is_zero() {
            Vec::new()
        } else {
            sg.fundamental_kernel(n_steps)?
        };
        Ok(Self {
            p,
            sg,
            kernel,
            n_steps,
        })
    }

    fn flow_from(&self, z: &SegmentPath, a: usize, steps: usize) -> Result<SegmentPath> {
        let y = LiftedState {
            head: z.head(a).to_vec(),
            tail: z.segment_at(a).to_segment(),
        };
        self.sg.trajectory(&y, steps)
    }

    /// Overwrites heads `a+1..=b` of `z` with the start iterate.
    fn seed_window(
        &self,
        z: &mut SegmentPath,
        a: usize,
        b: usize,
        start: &PicardStart,
    ) -> Result<()> {
        match start {
            PicardStart::Deterministic => {
                let flow = self.flow_from(z, a, b - a)?;
                for k in a + 1..=b {
                    z.head_mut(k).copy_from_slice(flow.head(k - a));
                }
            }
            PicardStart::Constant(x) => {
                if x.len() != self.p.dim_state {
                    return Err(Error::DimensionMismatch {
                        what: "picard start",
                        expected: self.p.dim_state,
                        got: x.len(),
                    });
                }
                for k in a + 1..=b {
                    z.head_mut(k).copy_from_slice(x);
                }
            }
        }
        Ok(())
    }

    /// `Z(t_k) = π₁𝒯(t_k - t_a) Y(t_a) + Σ_{a≤j<k} r_{k-1-j} B(Z(t_j)) ΔW_j` for `k ∈ (a, b]`.
    fn apply(&self, z: &SegmentPath, w: &BrownianPath, a: usize, b: usize) -> Result<SegmentPath> {
        let d = self.p.dim_state;
        let flow = self.flow_from(z, a, b - a)?;
        let mut out = z.clone();
        for k in a + 1..=b {
            out.head_mut(k).copy_from_slice(flow.head(k - a));
        }
        if self.kernel.is_empty() {
            return Ok(out);
        }
        let mut bm = DMatrix::zeros(d, self.p.dim_noise);
        let mut forcing = vec![0.0; d * (b - a)];
        for j in a..b {
            noise_term(
                self.p,
                z.head(j),
                z.segment_at(j),
                w.increment(j),
                &mut bm,
                &mut forcing[(j - a) * d..(j - a + 1) * d],
            );
        }
        for k in a + 1..=b {
            let acc = out.head_mut(k);
            for j in a..k {
                mat_vec_acc(
                    &self.kernel[k - 1 - j],
                    &forcing[(j - a) * d..(j - a + 1) * d],
                    1.0,
                    acc,
                );
            }
        }
        Ok(out)
    }
}

/// `‖Z₁(t_k) - Z₀(t_k)‖` in the lifted norm for `k ∈ [a, b]`, given that the
/// two iterates agree up to step `a`.
fn lifted_distance_profile(
    z1: &SegmentPath,
    z0: &SegmentPath,
    a: usize,
    b: usize,
    p: f64,
) -> Vec<f64> {
    let n_cells = z1.n_cells();
    let h = 1.0 / n_cells as f64;
    let diffs: Vec<Vec<f64>> = (a..=b)
        .map(|k| {
            z1.head(k)
                .iter()
                .zip(z0.head(k))
                .map(|(x, y)| x - y)
                .collect()
        })
        .collect();
    // prefix[i] = Σ_{j<i} |Δ_{a+j}|^p
    let mut prefix = Vec::with_capacity(diffs.len() + 1);
    prefix.push(0.0);
    for dv in &diffs {
        let last = *prefix.last().expect("nonempty");
        prefix.push(last + euclid(dv).powf(p));
    }
    (0..diffs.len())
        .map(|i| {
            let lo = i.saturating_sub(n_cells);
            let tail = (h * (prefix[i] - prefix[lo]).max(0.0)).powf(1.0 / p);
            euclid(&diffs[i]).hypot(tail)
        })
        .collect()
}

fn window_steps(k: f64, growth: &[f64], dt: f64, n: usize) -> usize {
    if k == 0.0 {
        return n;
    }
    (1..=n)
        .take_while(|&s| k * (s as f64 * dt).sqrt() * growth[s] <= 0.5)
        .last()
        .unwrap_or(1)
}

/// Picard iteration with the default options: deterministic start, automatic windows.
pub fn solve_mild_picard(
    p: &Problem,
    c: &SolverConfig,
    w: &BrownianPath,
    max_iter: usize,
    tol: f64,
) -> Result<(SolutionPath, PicardReport)> {
    solve_mild_picard_with(p, c, w, &PicardOptions::new(max_iter, tol))
}

pub fn solve_mild_picard_with(
    p: &Problem,
    c: &SolverConfig,
    w: &BrownianPath,
    opts: &PicardOptions,
) -> Result<(SolutionPath, PicardReport)> {
    MildSolver::new(p, c)?.solve(w, opts)
}

/// Picard solver with the kernel and growth bound of one `(problem, grid)`
/// computed once, so that many paths can share them.
pub struct MildSolver<'a> {
    map: MildMap<'a>,
    config: SolverConfig,
    growth: Vec<f64>,
}

impl<'a> MildSolver<'a> {
    pub fn new(p: &'a Problem, c: &SolverConfig) -> Result<Self> {
        let map = MildMap::new(p, c)?;
        let growth = if p.noise.lipschitz() > 0.0 {
            map.sg.growth_bound(p.p, map.n_steps)?
        } else {
            vec![1.0; map.n_steps + 1]
        };
        Ok(Self {
            map,
            config: c.clone(),
            growth,
        })
    }

    pub fn solve(
        &self,
        w: &BrownianPath,
        opts: &PicardOptions,
    ) -> Result<(SolutionPath, PicardReport)> {
        if opts.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        let (map, c, growth) = (&self.map, &self.config, &self.growth);
        let p = map.p;
        let n = map.n_steps;
        check_path(p, c, w, n)?;
        let k_lip = p.noise.lipschitz();
        let len = if opts.single_window {
            n
        } else {
            window_steps(k_lip, growth, c.dt, n)
        };

        let mut z = SegmentPath::new(&p.f0, p.x0.as_slice(), c.dt)?;
        for _ in 0..n {
            z.push_head(p.x0.as_slice())?;
        }
        let mut windows = Vec::new();
        let mut a = 0;
        while a < n {
            let b = (a + len).min(n);
            map.seed_window(&mut z, a, b, &opts.start)?;
            let scale = (a..=b).map(|k| euclid(z.head(k))).fold(1.0, f64::max);
            let mut distances = Vec::new();
            let mut converged = false;
            for _ in 0..opts.max_iter {
                let next = map.apply(&z, w, a, b)?;
                let dn = lifted_distance_profile(&next, &z, a, b, p.p)
                    .into_iter()
                    .fold(0.0, f64::max);
                distances.push(dn);
                z = next;
                if dn < opts.tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NotConverged {
                    iterations: opts.max_iter,
                    distance: *distances.last().expect("max_iter ≥ 1"),
                });
            }
            let steps = b - a;
            windows.push(PicardWindow {
                start_step: a,
                end_step: b,
                iterations: distances.len(),
                distances,
                envelope: k_lip * (steps as f64 * c.dt).sqrt() * growth[steps],
                noise_floor: 1e3 * f64::EPSILON * scale,
            });
            a = b;
        }

        let mut sol = SolutionPath::start(
            SolverKind::Mild,
            PathMeta::new(c, w),
            &p.f0,
            p.x0.as_slice(),
        )?;
        let d = p.dim_state;
        let mut bm = DMatrix::zeros(d, p.dim_noise);
        let mut b_dw = vec![0.0; d];
        let noisy = !p.noise.is_zero();
        for k in 0..n {
            let hs2 = if noisy {
                noise_term(
                    p,
                    z.head(k),
                    z.segment_at(k),
                    w.increment(k),
                    &mut bm,
                    &mut b_dw,
                )
            } else {
                0.0
            };
            sol.segments.push_head(z.head(k + 1))?;
            sol.record(&b_dw, hs2);
        }
        Ok((
            sol,
            PicardReport {
                windows,
                lipschitz: k_lip,
                growth: growth[n],
            },
        ))
    }
}

/// Pointwise lifted distances `‖Z_{i+1}(t_k) - Z_i(t_k)‖`, `i < iterations`,
/// over the whole horizon as a single window.
pub fn picard_distance_profile(
    p: &Problem,
    c: &SolverConfig,
    w: &BrownianPath,
    start: &PicardStart,
    iterations: usize,
) -> Result<Vec<Vec<f64>>> {
    let map = MildMap::new(p, c)?;
    let n = map.n_steps;
    check_path(p, c, w, n)?;
    let mut z = SegmentPath::new(&p.f0, p.x0.as_slice(), c.dt)?;
    for _ in 0..n {
        z.push_head(p.x0.as_slice())?;
    }
    map.seed_window(&mut z, 0, n, start)?;
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let next = map.apply(&z, w, 0, n)?;
        out.push(lifted_distance_profile(&next, &z, 0, n, p.p));
        z = next;
    }
    Ok(out)
}

/// Iterate distances in `L^∞(0,T; L²(Ω))`: `sup_t (E‖Z_{n+1}(t) - Z_n(t)‖²)^{1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PicardStudy {
    pub distances: Vec<f64>,
    pub envelope: f64,
    pub paths: usize,
}

impl PicardStudy {
    pub fn ratios(&self) -> Vec<f64> {
        self.distances
            .windows(2)
            .filter(|w| w[0] > 1e-13 && w[1] > 1e-13)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios().into_iter().reduce(f64::max)
    }
}

pub fn picard_contraction_study(
    p: &Problem,
    c: &SolverConfig,
    start: &PicardStart,
    iterations: usize,
    exec: Execution,
) -> Result<PicardStudy> {
    let n = c.steps_for(p.horizon)?;
    let profiles = map_paths(c.mc_paths, exec, |i| {
        let w = sample_brownian(p.dim_noise, c.dt, n, c.seed, i as u64)?;
        picard_distance_profile(p, c, &w, start, iterations)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![vec![0.0; n + 1]; iterations];
    for prof in &profiles {
        for (s, row) in sums.iter_mut().zip(prof) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v * v;
            }
        }
    }
    let paths = profiles.len().max(1) as f64;
    let distances = sums
        .iter()
        .map(|s| s.iter().map(|v| (v / paths).sqrt()).fold(0.0, f64::max))
        .collect();
    let sg = ShiftSemigroup::for_problem(p, c.n_cells)?;
    let growth = sg.growth_bound(p.p, n)?;
    Ok(PicardStudy {
        distances,
        envelope: p.noise.lipschitz() * p.horizon.sqrt() * growth[n],
        paths: profiles.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathComparison {
    pub sup_error: f64,
    /// `(Σ_k dt |e_k|²)^{1/2}` over `k = 1..=n`.
    pub l2_error: f64,
    /// `sup_error / max(sup_k |a_k|, 1e-300)`.
    pub relative_sup_error: f64,
    pub per_time: Vec<f64>,
}

fn comparison_from(per_time: Vec<f64>, scale: f64, dt: f64) -> PathComparison {
    let sup_error = per_time.iter().copied().fold(0.0, f64::max);
    let l2_error = (per_time.iter().skip(1).map(|e| dt * e * e).sum::<f64>()).sqrt();
    PathComparison {
        sup_error,
        l2_error,
        relative_sup_error: sup_error / scale.max(1e-300),
        per_time,
    }
}

/// Head errors between two solutions on the same grid and Brownian path.
pub fn compare_paths(a: &SolutionPath, b: &SolutionPath) -> Result<PathComparison> {
    let (ma, mb) = (a.meta, b.meta);
    if ma != mb || a.n_steps() != b.n_steps() || a.dim() != b.dim() {
        return Err(Error::GridMismatch(format!(
            "cannot compare {} path (dt = {}, N = {}, steps = {}, stream {}) with {} path (dt = {}, N = {}, steps = {}, stream {})",
            a.solver,
            ma.dt,
            ma.n_cells,
            a.n_steps(),
            ma.stream_id,
            b.solver,
            mb.dt,
            mb.n_cells,
            b.n_steps(),
            mb.stream_id
        )));
    }
    let per_time: Vec<f64> = a
        .heads()
        .zip(b.heads())
        .map(|(x, y)| distance(x, y))
        .collect();
    let scale = a.heads().map(euclid).fold(0.0, f64::max);
    Ok(comparison_from(per_time, scale, ma.dt))
}

/// Head errors of `coarse` against `fine` at the coarse grid times, for paths
/// driven by the same Brownian path at two resolutions.
pub fn compare_on_coarse_grid(
    fine: &SolutionPath,
    coarse: &SolutionPath,
) -> Result<PathComparison> {
    let ratio = coarse.dt() / fine.dt();
    let factor = ratio.round() as usize;
    let same_source =
        fine.meta.seed == coarse.meta.seed && fine.meta.stream_id == coarse.meta.stream_id;
    if factor == 0
        || (ratio - factor as f64).abs() > 1e-9
        || coarse.n_steps() * factor != fine.n_steps()
        || !same_source
    {
        return Err(Error::GridMismatch(format!(
            "coarse path (dt = {}, steps = {}) is not a coarsening of fine path (dt = {}, steps = {})",
            coarse.dt(),
            coarse.n_steps(),
            fine.dt(),
            fine.n_steps()
        )));
    }
    let per_time: Vec<f64> = (0..=coarse.n_steps())
        .map(|k| distance(fine.head(k * factor), coarse.head(k)))
        .collect();
    let scale = fine.heads().map(euclid).fold(0.0, f64::max);
    Ok(comparison_from(per_time, scale, coarse.dt()))
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    /// `|X(t_k) - x₀ - A∫X - C∫X_s - ∫B dW|` at each grid time.
    pub per_step: Vec<f64>,
    pub sup: f64,
}

/// Residual of the integrated equation with left-point time quadrature and
/// the recorded Itô sums.
pub fn reconstruct_generalized_strong(path: &SolutionPath, p: &Problem) -> Result<Residual> {
    let (d, nc, dt) = (path.dim(), path.n_cells(), path.dt());
    if (dt * nc as f64 - 1.0).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "dt ≠ 1/N (dt = {dt}, N = {nc})"
        )));
    }
    let delay = DelayOperator::new(&p.delay, nc)?;
    let x0 = path.head(0);
    let mut g_head = vec![0.0; d];
    let mut g_cells = vec![0.0; d * nc];
    let mut r = vec![0.0; d];
    let mut per_step = Vec::with_capacity(path.n_steps() + 1);
    for k in 0..=path.n_steps() {
        delay.apply_into(SegmentView::new(d, &g_cells)?, &g_head, &mut r);
        mat_vec_acc(&p.drift, &g_head, 1.0, &mut r);
        let noise = path.noise_integral(k);
        let x = path.head(k);
        let res: Vec<f64> = (0..d).map(|i| x[i] - x0[i] - r[i] - noise[i]).collect();
        per_step.push(euclid(&res));
        if k < path.n_steps() {
            for (gi, v) in g_cells.iter_mut().zip(path.segment_at(k).as_slice()) {
                *gi += dt * v;
            }
            for (gi, v) in g_head.iter_mut().zip(x) {
                *gi += dt * v;
            }
        }
    }
    let sup = per_step.iter().copied().fold(0.0, f64::max);
    Ok(Residual { per_step, sup })
}

/// Runs `f` on direct solutions driven by streams `0..paths`.
pub fn map_direct_paths<T, F>(
    p: &Problem,
    c: &SolverConfig,
    paths: usize,
    exec: Execution,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&SolutionPath) -> T + Sync + Send,
{
    let n = c.steps_for(p.horizon)?;
    map_paths(paths, exec, |i| {
        let w = sample_brownian(p.dim_noise, c.dt, n, c.seed, i as u64)?;
        solve_direct(p, c, &w).map(|s| f(&s))
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub q: f64,
    /// `sup_t E‖Y(t)‖^q` over `mc_paths` paths.
    pub sup_moment: f64,
    /// Same over `2 mc_paths` paths.
    pub sup_moment_doubled: f64,
    pub stable: bool,
}

pub fn moment_bounds(
    p: &Problem,
    c: &SolverConfig,
    qs: &[f64],
    exec: Execution,
) -> Result<Vec<MomentReport>> {
    let norms = map_direct_paths(p, c, 2 * c.mc_paths, exec, |s| {
        (0..=s.n_steps())
            .map(|k| s.lifted_norm(k, p.p))
            .collect::<Vec<f64>>()
    })?;
    let sup_mean = |rows: &[Vec<f64>], q: f64| {
        let n = rows[0].len();
        (0..n)
            .map(|k| rows.iter().map(|r| r[k].powf(q)).sum::<f64>() / rows.len() as f64)
            .fold(0.0, f64::max)
    };
    Ok(qs
        .iter()
        .map(|&q| {
            let a = sup_mean(&norms[..c.mc_paths], q);
            let b = sup_mean(&norms, q);
            MomentReport {
                q,
                sup_moment: a,
                sup_moment_doubled: b,
                stable: a.is_finite() && b.is_finite() && (b - a).abs() <= 0.25 * a.max(b),
            }
        })
        .collect())
}

/// `(t, head_1..head_d)`.
pub fn trajectory_table(path: &SolutionPath) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim()).map(|i| format!("head_{i}")));
    let mut t = Table::new(&header);
    for (k, h) in path.heads().enumerate() {
        let mut row = vec![fmt(path.time(k))];
        row.extend(h.iter().map(|&v| fmt(v)));
        t.push_row(row);
    }
    t
}

/// `(t, err_direct_lifted, err_direct_mild)`.
pub fn comparison_table(
    direct: &SolutionPath,
    lifted: &SolutionPath,
    mild: &SolutionPath,
) -> Result<Table> {
    let dl = compare_paths(direct, lifted)?;
    let dm = compare_paths(direct, mild)?;
    let mut t = Table::new(&["t", "err_direct_lifted", "err_direct_mild"]);
    for k in 0..=direct.n_steps() {
        t.push_row(vec![
            fmt(direct.time(k)),
            fmt(dl.per_time[k]),
            fmt(dm.per_time[k]),
        ]);
    }
    Ok(t)
}
