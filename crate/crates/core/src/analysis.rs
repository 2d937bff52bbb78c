//! Path diagnostics: factorization of the stochastic convolution, continuity
//! moduli, realized quadratic variation, and the stationary covariance under
//! additive noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lift::{assemble_generator, LiftedState, ShiftSemigroup, EXPM_SIZE_LIMIT};
use crate::mc::{map_paths, Execution, RunningStats};
use crate::model::{Problem, SolverConfig};
use crate::noise::{check_alpha, power_cell_integral, sample_brownian, BrownianPath};
use crate::report::{fmt, McCheck, Table};
use crate::segments::{euclid, Segment};
use crate::solvers::{
    compare_on_coarse_grid, solve_direct, MildSolver, PicardOptions, SolutionPath,
};

/// `r(t_k) = π₁𝒯(t_k)[e_i, 0]` as `d × d` matrices, `k = 0..=T/dt`, with `dt = 1/N`
/// taken from the initial segment grid.
pub fn fundamental_solution(p: &Problem, horizon: f64) -> Result<Vec<DMatrix<f64>>> {
    let n_cells = p.f0.n_cells();
    let c = SolverConfig::aligned(n_cells);
    let steps = if horizon == 0.0 {
        0
    } else {
        c.steps_for(horizon)?
    };
    ShiftSemigroup::for_problem(p, n_cells)?.fundamental_kernel(steps)
}

/// Rows `(t, r_11, r_12, ..., r_dd)` in row-major entry order.
pub fn fundamental_table(r: &[DMatrix<f64>], dt: f64) -> Table {
    let d = r.first().map_or(0, |m| m.nrows());
    let mut header = vec!["t".to_string()];
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("r_{i}{j}"));
        }
    }
    let mut t = Table::new(&header);
    for (k, m) in r.iter().enumerate() {
        let mut row = vec![fmt(k as f64 * dt)];
        for i in 0..d {
            for j in 0..d {
                row.push(fmt(m[(i, j)]));
            }
        }
        t.push_row(row);
    }
    t
}

/// Head of `π₁(solve_direct - 𝒯(t)Y₀)` against the discrete convolution
/// `Σ r(t - t_{k+1}) B ΔW_k` for additive noise; returns the sup difference.
pub fn mild_representation_error(p: &Problem, c: &SolverConfig, w: &BrownianPath) -> Result<f64> {
    let b = p
        .noise
        .as_additive()
        .ok_or_else(|| {
            Error::InvalidParameter("mild representation check needs additive noise".into())
        })?
        .clone();
    let path = solve_direct(p, c, w)?;
    let n = path.n_steps();
    let sg = ShiftSemigroup::for_problem(p, c.n_cells)?;
    let flow = sg.trajectory(&LiftedState::initial(p), n)?;
    let r = sg.fundamental_kernel(n)?;
    let inc: Vec<DVector<f64>> = (0..n)
        .map(|j| &b * DVector::from_column_slice(w.increment(j)))
        .collect();
    let mut worst = 0.0f64;
    for k in 0..=n {
        let mut conv = DVector::zeros(p.dim_state);
        for j in 0..k {
            conv += &r[k - 1 - j] * &inc[j];
        }
        let err = (0..p.dim_state)
            .map(|i| (path.head(k)[i] - flow.head(k)[i] - conv[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Lifted semigroup data shared by every path on one grid:
/// `G_m = 𝒯(t_m)[I, 0]` and `P_m = π₁𝒯(t_m)`.
#[derive(Clone, Debug)]
pub struct FactorizationKernel {
    d: usize,
    n_steps: usize,
    dt: f64,
    columns: Vec<DMatrix<f64>>,
    rows: Vec<DMatrix<f64>>,
}

impl FactorizationKernel {
    pub fn new(p: &Problem, n_cells: usize, n_steps: usize) -> Result<Self> {
        let d = p.dim_state;
        let size = d * (n_cells + 1);
        if size > EXPM_SIZE_LIMIT {
            return Err(Error::SizeGuard {
                size,
                limit: EXPM_SIZE_LIMIT,
            });
        }
        let dt = 1.0 / n_cells as f64;
        let sg = ShiftSemigroup::for_problem(p, n_cells)?;
        let mut columns = vec![DMatrix::zeros(size, d); n_steps + 1];
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let path = sg.trajectory(&LiftedState::new(e, Segment::zeros(d, n_cells))?, n_steps)?;
            for (m, g) in columns.iter_mut().enumerate() {
                for (r, v) in path
                    .head(m)
                    .iter()
                    .chain(path.segment_at(m).as_slice())
                    .enumerate()
                {
                    g[(r, i)] = *v;
                }
            }
        }
        let step = assemble_generator(&p.drift, &p.delay, n_cells)?.euler_step_matrix(dt);
        let mut rows = Vec::with_capacity(n_steps + 1);
        let mut pm = DMatrix::zeros(d, size);
        pm.view_mut((0, 0), (d, d)).fill_with_identity();
        rows.push(pm.clone());
        for _ in 0..n_steps {
            pm = &pm * &step;
            rows.push(pm.clone());
        }
        Ok(Self {
            d,
            n_steps,
            dt,
            columns,
            rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizationReport {
    pub alpha: f64,
    pub dt: f64,
    /// `sup_k |π₁Ψ₂(t_k) - (sin πα/π) π₁(R_α Ψ₁)(t_k)|`.
    pub sup_error: f64,
    /// `sup_k |π₁Ψ₂(t_k)|`.
    pub psi2_sup: f64,
}

fn check_factorization_alpha(alpha: f64, q: f64) -> Result<()> {
    if !(q > 2.0) {
        return Err(Error::InvalidParameter(format!(
            "moment order q = {q} must exceed 2"
        )));
    }
    check_alpha(alpha, 1.0 / q, 0.5)
}

/// Factorization check on a solution path already computed on the kernel grid.
pub fn factorization_on_path(
    kernel: &FactorizationKernel,
    path: &SolutionPath,
    alpha: f64,
    q: f64,
) -> Result<FactorizationReport> {
    check_factorization_alpha(alpha, q)?;
    let (d, n, dt) = (kernel.d, kernel.n_steps, kernel.dt);
    if path.n_steps() != n || path.dim() != d || (path.dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::GridMismatch(format!(
            "path (dt = {}, steps = {}) does not match kernel (dt = {dt}, steps = {n})",
            path.dt(),
            path.n_steps()
        )));
    }
    let b: Vec<DVector<f64>> = (0..n)
        .map(|j| DVector::from_vec(path.noise_increment(j)))
        .collect();
    // cell averages of (t_l - u)^{-α} over [0, dt], and cell integrals of (t_l - u)^{α-1}
    let omega: Vec<f64> = (0..=n)
        .map(|l| {
            if l == 0 {
                0.0
            } else {
                power_cell_integral(l as f64 * dt, 0.0, dt, alpha) / dt
            }
        })
        .collect();
    let rho: Vec<f64> = (0..=n)
        .map(|l| {
            if l == 0 {
                0.0
            } else {
                power_cell_integral(l as f64 * dt, 0.0, dt, 1.0 - alpha)
            }
        })
        .collect();
    let size = kernel.columns[0].nrows();
    let psi1: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut acc = DVector::zeros(size);
            for j in 0..i {
                acc.gemv(omega[i - j], &kernel.columns[i - 1 - j], &b[j], 1.0);
            }
            acc
        })
        .collect();
    let c_alpha = (PI * alpha).sin() / PI;
    let mut sup_error = 0.0f64;
    let mut psi2_sup = 0.0f64;
    for k in 1..=n {
        let mut psi2 = DVector::zeros(d);
        for j in 0..k {
            psi2 += kernel.columns[k - 1 - j].rows(0, d) * &b[j];
        }
        let mut rec = DVector::zeros(d);
        for i in 0..k {
            rec.gemv(rho[k - i], &kernel.rows[k - i], &psi1[i], 1.0);
        }
        sup_error = sup_error.max((&psi2 - rec * c_alpha).norm());
        psi2_sup = psi2_sup.max(psi2.norm());
    }
    Ok(FactorizationReport {
        alpha,
        dt,
        sup_error,
        psi2_sup,
    })
}

/// `Ψ₂ = (sin πα/π) R_α Ψ₁` on one path, with `Ψ₁` and `R_α` built from exact
/// cell integrals of the singular weights.
pub fn factorization_check(
    p: &Problem,
    c: &SolverConfig,
    w: &BrownianPath,
    alpha: f64,
    q: f64,
) -> Result<FactorizationReport> {
    check_factorization_alpha(alpha, q)?;
    let path = solve_direct(p, c, w)?;
    let kernel = FactorizationKernel::new(p, c.n_cells, path.n_steps())?;
    factorization_on_path(&kernel, &path, alpha, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRow {
    pub n_cells: usize,
    pub dt: f64,
    /// Free parameter of the row (α for factorization, q for continuity).
    pub parameter: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl RefinementRow {
    fn from_samples(n_cells: usize, parameter: f64, samples: &[f64], rms: bool) -> Self {
        let s: RunningStats = samples
            .iter()
            .map(|&e| if rms { e * e } else { e })
            .collect();
        let (estimate, std_error) = if rms {
            let r = s.mean().sqrt();
            (
                r,
                if r > 0.0 {
                    s.std_error() / (2.0 * r)
                } else {
                    0.0
                },
            )
        } else {
            (s.mean(), s.std_error())
        };
        Self {
            n_cells,
            dt: 1.0 / n_cells as f64,
            parameter,
            estimate,
            std_error,
            paths: samples.len(),
        }
    }
}

/// Fine increments at the largest resolution, coarsened for the others.
fn coupled_hierarchy(
    p: &Problem,
    cells: &[usize],
    seed: u64,
    stream: u64,
) -> Result<Vec<BrownianPath>> {
    let fine_n = *cells
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("no resolutions given".into()))?;
    let fine_c = SolverConfig::aligned(fine_n);
    let fine = sample_brownian(
        p.dim_noise,
        fine_c.dt,
        fine_c.steps_for(p.horizon)?,
        seed,
        stream,
    )?;
    cells
        .iter()
        .map(|&n| {
            if fine_n % n != 0 {
                return Err(Error::GridMismatch(format!(
                    "{n} cells do not divide {fine_n}"
                )));
            }
            fine.coarsen(fine_n / n)
        })
        .collect()
}

/// RMS over paths of the factorization sup-error for each `(α, N)`, on a
/// coupled Brownian hierarchy.
pub fn factorization_study(
    p: &Problem,
    alphas: &[f64],
    q: f64,
    cells: &[usize],
    paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RefinementRow>> {
    for &a in alphas {
        check_factorization_alpha(a, q)?;
    }
    let problems = cells
        .iter()
        .map(|&n| p.at_resolution(n))
        .collect::<Result<Vec<_>>>()?;
    let kernels = problems
        .iter()
        .zip(cells)
        .map(|(pn, &n)| {
            FactorizationKernel::new(pn, n, SolverConfig::aligned(n).steps_for(p.horizon)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_path = map_paths(paths, exec, |i| -> Result<Vec<f64>> {
        let ws = coupled_hierarchy(p, cells, seed, i as u64)?;
        let mut errs = Vec::with_capacity(cells.len() * alphas.len());
        for ((pn, &n), (w, kernel)) in problems.iter().zip(cells).zip(ws.iter().zip(&kernels)) {
            let path = solve_direct(pn, &SolverConfig::aligned(n), w)?;
            for &a in alphas {
                errs.push(factorization_on_path(kernel, &path, a, q)?.sup_error);
            }
        }
        Ok(errs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (ai, &a) in alphas.iter().enumerate() {
        for (ci, &n) in cells.iter().enumerate() {
            let samples: Vec<f64> = per_path.iter().map(|e| e[ci * alphas.len() + ai]).collect();
            rows.push(RefinementRow::from_samples(n, a, &samples, true));
        }
    }
    Ok(rows)
}

/// `(N, dt, <name>, estimate, std_error, paths)`.
pub fn refinement_table(rows: &[RefinementRow], parameter_name: &str) -> Table {
    let mut t = Table::new(&["N", "dt", parameter_name, "estimate", "std_error", "paths"]);
    for r in rows {
        t.push_row(vec![
            r.n_cells.to_string(),
            fmt(r.dt),
            fmt(r.parameter),
            fmt(r.estimate),
            fmt(r.std_error),
            r.paths.to_string(),
        ]);
    }
    t
}

/// `max_k |X(t_{k+1}) - X(t_k)|`.
pub fn max_increment(path: &SolutionPath) -> f64 {
    (0..path.n_steps())
        .map(|k| {
            path.head(k + 1)
                .iter()
                .zip(path.head(k))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// `E max_k |X(t_{k+1}) - X(t_k)|^q` over a set of paths on one grid.
pub fn continuity_modulus(paths: &[SolutionPath], q: f64) -> Result<RefinementRow> {
    if !(q > 2.0) {
        return Err(Error::InvalidParameter(format!(
            "moment order q = {q} must exceed 2"
        )));
    }
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidParameter("no paths".into()))?;
    let samples: Vec<f64> = paths.iter().map(|s| max_increment(s).powf(q)).collect();
    Ok(RefinementRow::from_samples(
        first.n_cells(),
        q,
        &samples,
        false,
    ))
}

/// Continuity moduli across resolutions on a coupled hierarchy.
pub fn continuity_study(
    p: &Problem,
    q: f64,
    cells: &[usize],
    paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RefinementRow>> {
    if !(q > 2.0) {
        return Err(Error::InvalidParameter(format!(
            "moment order q = {q} must exceed 2"
        )));
    }
    let problems = cells
        .iter()
        .map(|&n| p.at_resolution(n))
        .collect::<Result<Vec<_>>>()?;
    let per_path = map_paths(paths, exec, |i| -> Result<Vec<f64>> {
        let ws = coupled_hierarchy(p, cells, seed, i as u64)?;
        problems
            .iter()
            .zip(cells)
            .zip(&ws)
            .map(|((pn, &n), w)| {
                Ok(max_increment(&solve_direct(pn, &SolverConfig::aligned(n), w)?).powf(q))
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(ci, &n)| {
            let samples: Vec<f64> = per_path.iter().map(|e| e[ci]).collect();
            RefinementRow::from_samples(n, q, &samples, false)
        })
        .collect())
}

/// RMS over paths of the sup head error of direct solutions at each of `cells`
/// against a converged Picard solution on `reference_cells`, all driven by one
/// coupled Brownian hierarchy.
pub fn strong_error_study(
    p: &Problem,
    cells: &[usize],
    reference_cells: usize,
    paths: usize,
    seed: u64,
    tol: f64,
    exec: Execution,
) -> Result<Vec<RefinementRow>> {
    if cells.is_empty() || cells.iter().any(|&n| n >= reference_cells) {
        return Err(Error::InvalidParameter(format!(
            "every resolution must be coarser than the {reference_cells}-cell reference"
        )));
    }
    let mut all = cells.to_vec();
    all.push(reference_cells);
    let problems = all.iter().map(|&n| p.at_resolution(n)).collect::<Result<Vec<_>>>()?;
    let reference_config = SolverConfig::aligned(reference_cells).with_seed(seed);
    let reference = MildSolver::new(&problems[cells.len()], &reference_config)?;
    let opts = PicardOptions::new(500, tol);
    let per_path = map_paths(paths, exec, |i| -> Result<Vec<f64>> {
        let ws = coupled_hierarchy(p, &all, seed, i as u64)?;
        let (fine, _) = reference.solve(&ws[cells.len()], &opts)?;
        problems
            .iter()
            .zip(cells)
            .zip(&ws)
            .map(|((pn, &n), w)| {
                let coarse = solve_direct(pn, &SolverConfig::aligned(n).with_seed(seed), w)?;
                Ok(compare_on_coarse_grid(&fine, &coarse)?.sup_error)
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(ci, &n)| {
            let samples: Vec<f64> = per_path.iter().map(|e| e[ci]).collect();
            RefinementRow::from_samples(n, reference_cells as f64, &samples, true)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QvVerdict {
    /// Zero realized variation: the path may be of bounded variation.
    Deterministic,
    /// Positive realized variation: no classical strong solution.
    Rough,
}

impl std::fmt::Display for QvVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QvVerdict::Deterministic => "deterministic",
            QvVerdict::Rough => "rough",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QvReport {
    /// `Σ_k |B(Y_k) ΔW_k|²`.
    pub qv: f64,
    /// `Σ_k dt ‖B(Y_k)‖²_F`.
    pub quadrature: f64,
    pub verdict: QvVerdict,
}

pub fn quadratic_variation_diag(path: &SolutionPath) -> QvReport {
    let n = path.n_steps();
    let qv: f64 = (0..n)
        .map(|k| euclid(&path.noise_increment(k)).powi(2))
        .sum();
    let quadrature: f64 = (0..n).map(|k| path.dt() * path.noise_hs2(k)).sum();
    QvReport {
        qv,
        quadrature,
        verdict: if qv == 0.0 {
            QvVerdict::Deterministic
        } else {
            QvVerdict::Rough
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QvStudy {
    pub mean_qv: f64,
    pub qv_std_error: f64,
    pub mean_quadrature: f64,
    /// Standard error of the paired difference `qv - quadrature`.
    pub diff_std_error: f64,
    pub max_qv: f64,
    pub paths: usize,
}

impl QvStudy {
    pub fn consistent(&self) -> bool {
        (self.mean_qv - self.mean_quadrature).abs() <= 3.0 * self.diff_std_error
    }
}

pub fn qv_study(p: &Problem, c: &SolverConfig, exec: Execution) -> Result<QvStudy> {
    let reports =
        crate::solvers::map_direct_paths(p, c, c.mc_paths, exec, quadratic_variation_diag)?;
    let qv: RunningStats = reports.iter().map(|r| r.qv).collect();
    let quad: RunningStats = reports.iter().map(|r| r.quadrature).collect();
    let diff: RunningStats = reports.iter().map(|r| r.qv - r.quadrature).collect();
    Ok(QvStudy {
        mean_qv: qv.mean(),
        qv_std_error: qv.std_error(),
        mean_quadrature: quad.mean(),
        diff_std_error: diff.std_error(),
        max_qv: reports.iter().map(|r| r.qv).fold(0.0, f64::max),
        paths: reports.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryCovariance {
    pub q: DMatrix<f64>,
    /// `‖π₁𝒯(t_max)[b, 0]‖² / (2λ)` with `λ` the observed decay rate.
    pub tail_bound: f64,
    pub decay_rate: f64,
}

/// `Q∞ ≈ Σ_k dt (π₁𝒯(t_k)[b,0])(π₁𝒯(t_k)[b,0])ᵀ` over `[0, t_max)`.
pub fn stationary_covariance(
    p: &Problem,
    t_max: f64,
    quad_dt: f64,
) -> Result<StationaryCovariance> {
    let b = p.noise.as_additive().ok_or_else(|| {
        Error::InvalidParameter("stationary covariance needs additive noise".into())
    })?;
    let d = p.dim_state;
    if b.iter().all(|&v| v == 0.0) {
        return Ok(StationaryCovariance {
            q: DMatrix::zeros(d, d),
            tail_bound: 0.0,
            decay_rate: f64::INFINITY,
        });
    }
    let n_cells = (1.0 / quad_dt).round() as usize;
    if n_cells == 0 || (n_cells as f64 * quad_dt - 1.0).abs() > 1e-9 {
        return Err(Error::GridMismatch(format!(
            "quad_dt = {quad_dt} is not 1/N"
        )));
    }
    let c = SolverConfig::aligned(n_cells);
    let n = c.steps_for(t_max)?;
    let r = ShiftSemigroup::for_problem(p, n_cells)?.fundamental_kernel(n)?;
    let g: Vec<DMatrix<f64>> = r.iter().map(|rk| rk * b).collect();
    let norms: Vec<f64> = g.iter().map(|m| m.norm()).collect();
    let peak = norms.iter().copied().fold(0.0, f64::max);
    let late = norms[n - n / 10..].iter().copied().fold(0.0, f64::max);
    if late > 1e-6 * peak {
        return Err(Error::NoDecay {
            t_max,
            residual: late / peak,
        });
    }
    let mut q = DMatrix::zeros(d, d);
    for gk in &g[..n] {
        q += gk * gk.transpose() * c.dt;
    }
    let (mid, end) = (
        norms[n / 2].max(f64::MIN_POSITIVE),
        norms[n].max(f64::MIN_POSITIVE),
    );
    let decay_rate = ((mid / end).ln() / (t_max - n as f64 / 2.0 * c.dt)).max(f64::MIN_POSITIVE);
    Ok(StationaryCovariance {
        q,
        tail_bound: norms[n].powi(2) / (2.0 * decay_rate),
        decay_rate,
    })
}

/// Solves `A Q + Q Aᵀ + S = 0` through the Kronecker system.
pub fn lyapunov_solution(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(s.as_slice());
    let x = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("Lyapunov system is singular".into()))?;
    Ok(DMatrix::from_column_slice(d, d, x.as_slice()))
}

/// Empirical covariance of `X(T)` over `c.mc_paths` direct paths against `Q`,
/// entrywise; `pass` iff every entry is within 3 standard errors.
pub fn ergodic_covariance_check(
    p: &Problem,
    c: &SolverConfig,
    q: &DMatrix<f64>,
    exec: Execution,
) -> Result<Vec<McCheck>> {
    let d = p.dim_state;
    let finals =
        crate::solvers::map_direct_paths(p, c, c.mc_paths, exec, |s| s.last_head().to_vec())?;
    let paths = finals.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|i| finals.iter().map(|x| x[i]).sum::<f64>() / paths)
        .collect();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let prods: RunningStats = finals
                .iter()
                .map(|x| (x[i] - mean[i]) * (x[j] - mean[j]))
                .collect();
            let est = prods.mean() * paths / (paths - 1.0);
            let se = prods.std_error();
            out.push(McCheck::new(
                format!("stationary_cov_{}{}", i + 1, j + 1),
                est,
                se,
                (est - q[(i, j)]).abs() <= 3.0 * se,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{scalar, unit_delay};
    use crate::model::{DelayMeasure, NoiseField};
    use approx::assert_relative_eq;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn brownian(p: &Problem, c: &SolverConfig, stream: u64) -> BrownianPath {
        sample_brownian(
            p.dim_noise,
            c.dt,
            c.steps_for(p.horizon).unwrap(),
            c.seed,
            stream,
        )
        .unwrap()
    }

    #[test]
    fn fundamental_solution_examples() {
        let n = 1000;
        let p = unit_delay(n, 2.0, NoiseField::zero(1, 1));
        let r = fundamental_solution(&p, 2.0).unwrap();
        let dt = 1.0 / n as f64;
        assert_eq!(r[0], m1(1.0));
        // zero history: x ≡ 1 on [0, 1], then x' = -1
        assert_eq!(r[n][(0, 0)], 1.0);
        assert!(r[2 * n][(0, 0)].abs() <= 2.0 * dt);
        // unit history as well: the method-of-steps values
        let flow = ShiftSemigroup::for_problem(&p, n)
            .unwrap()
            .trajectory(&LiftedState::initial(&p), 2 * n)
            .unwrap();
        assert!(flow.head(n)[0].abs() <= 2.0 * dt);
        assert!((flow.head(2 * n)[0] + 0.5).abs() <= 5.0 * dt);

        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 0.3, -0.2, -0.8]);
        let q = Problem {
            dim_state: 2,
            dim_noise: 1,
            drift: a.clone(),
            delay: DelayMeasure::zero(2),
            noise: NoiseField::zero(2, 1),
            p: 2.0,
            x0: DVector::zeros(2),
            f0: Segment::zeros(2, n),
            horizon: 1.0,
        };
        let r = fundamental_solution(&q, 1.0).unwrap();
        assert!((&r[n] - a.exp()).norm() <= 2.0 * dt);
        assert_eq!(
            fundamental_solution(&q, 0.0).unwrap(),
            vec![DMatrix::identity(2, 2)]
        );
    }

    #[test]
    fn mild_representation_holds_pathwise() {
        let p = scalar(
            20,
            -0.4,
            DelayMeasure::atom(-1.0, m1(0.6)),
            NoiseField::additive(m1(0.8)),
            2.0,
        );
        let c = SolverConfig::aligned(20);
        let err = mild_representation_error(&p, &c, &brownian(&p, &c, 3)).unwrap();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn factorization_zero_noise() {
        let p = scalar(
            20,
            -0.4,
            DelayMeasure::atom(-1.0, m1(0.6)),
            NoiseField::zero(1, 1),
            1.0,
        );
        let c = SolverConfig::aligned(20);
        let r = factorization_check(&p, &c, &brownian(&p, &c, 0), 0.3, 4.0).unwrap();
        assert_eq!(r.sup_error, 0.0);
        assert_eq!(r.psi2_sup, 0.0);
    }

    #[test]
    fn factorization_alpha_range() {
        let p = scalar(
            10,
            -0.4,
            DelayMeasure::zero(1),
            NoiseField::additive(m1(1.0)),
            1.0,
        );
        let c = SolverConfig::aligned(10);
        let w = brownian(&p, &c, 0);
        assert!(factorization_check(&p, &c, &w, 0.2, 4.0).is_err());
        assert!(factorization_check(&p, &c, &w, 0.5, 4.0).is_err());
        assert!(factorization_check(&p, &c, &w, 0.3, 2.0).is_err());
        assert!(factorization_check(&p, &c, &w, 0.3, 4.0).is_ok());
    }

    #[test]
    fn factorization_deterministic_constant_weights() {
        // With b_j = 1 and η = 0, A = 0 the reconstruction weight for the
        // increment at lag l tends to 1 as the grid refines.
        for alpha in [0.26, 0.35, 0.45] {
            let n = 400;
            let dt = 1.0 / n as f64;
            let l = n;
            let c_alpha = (PI * alpha).sin() / PI;
            let mut acc = 0.0;
            for i in 1..l {
                let rho = power_cell_integral((l - i) as f64 * dt, 0.0, dt, 1.0 - alpha);
                let omega = power_cell_integral(i as f64 * dt, 0.0, dt, alpha) / dt;
                acc += rho * omega;
            }
            assert!(
                (c_alpha * acc - 1.0).abs() < 0.05,
                "alpha {alpha}: {}",
                c_alpha * acc
            );
        }
    }

    #[test]
    fn factorization_error_shrinks_under_refinement() {
        let p = scalar(
            50,
            -0.5,
            DelayMeasure::atom(-1.0, m1(0.3)),
            NoiseField::additive(m1(1.0)),
            1.0,
        );
        let rows =
            factorization_study(&p, &[0.3], 4.0, &[25, 50, 100], 16, 7, Execution::default())
                .unwrap();
        assert!(rows[2].estimate < rows[0].estimate, "{rows:?}");
    }

    #[test]
    fn strong_error_halves_when_dt_is_quartered() {
        let p = scalar(
            16,
            -1.0,
            DelayMeasure::atom(-1.0, m1(0.5)),
            NoiseField::scalar_multiplicative(0.8),
            1.0,
        );
        let rows = strong_error_study(&p, &[16, 64], 256, 200, 3, 1e-11, Execution::default())
            .unwrap();
        let ratio = rows[1].estimate / rows[0].estimate;
        assert!((0.35..=0.65).contains(&ratio), "{rows:?}");
        assert!(strong_error_study(&p, &[256], 256, 1, 0, 1e-11, Execution::default()).is_err());
    }

    #[test]
    fn continuity_examples() {
        let frozen = scalar(20, 0.0, DelayMeasure::zero(1), NoiseField::zero(1, 1), 1.0);
        let c = SolverConfig::aligned(20);
        let s = solve_direct(&frozen, &c, &brownian(&frozen, &c, 0)).unwrap();
        assert_eq!(max_increment(&s), 0.0);
        assert!(continuity_modulus(std::slice::from_ref(&s), 2.0).is_err());
        assert_eq!(continuity_modulus(&[s], 3.0).unwrap().estimate, 0.0);

        let smooth = scalar(20, -1.0, DelayMeasure::zero(1), NoiseField::zero(1, 1), 1.0);
        let inc: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&n| {
                let pn = smooth.at_resolution(n).unwrap();
                let cn = SolverConfig::aligned(n);
                max_increment(&solve_direct(&pn, &cn, &brownian(&pn, &cn, 0)).unwrap())
            })
            .collect();
        assert!((inc[1] / inc[0] - 0.5).abs() < 0.05 && (inc[2] / inc[1] - 0.5).abs() < 0.05);

        let noisy = scalar(
            16,
            -1.0,
            DelayMeasure::zero(1),
            NoiseField::additive(m1(1.0)),
            1.0,
        );
        let rows =
            continuity_study(&noisy, 4.0, &[16, 64, 256], 200, 1, Execution::default()).unwrap();
        assert!(rows[0].estimate > rows[1].estimate && rows[1].estimate > rows[2].estimate);
    }

    #[test]
    fn qv_examples() {
        let c = SolverConfig::aligned(50).with_paths(2000);
        let zero = scalar(50, -0.3, DelayMeasure::zero(1), NoiseField::zero(1, 1), 1.0);
        let s = solve_direct(&zero, &c, &brownian(&zero, &c, 0)).unwrap();
        let r = quadratic_variation_diag(&s);
        assert_eq!((r.qv, r.verdict), (0.0, QvVerdict::Deterministic));

        let additive = scalar(
            50,
            -0.3,
            DelayMeasure::zero(1),
            NoiseField::additive(m1(0.5)),
            1.0,
        );
        let st = qv_study(&additive, &c, Execution::default()).unwrap();
        assert!((st.mean_qv - 0.25).abs() <= 3.0 * st.qv_std_error);
        assert_relative_eq!(st.mean_quadrature, 0.25, epsilon = 1e-12);

        let mult = scalar(
            50,
            -0.5,
            DelayMeasure::zero(1),
            NoiseField::scalar_multiplicative(1.0),
            1.0,
        );
        let st = qv_study(&mult, &c, Execution::default()).unwrap();
        assert!(st.consistent(), "{st:?}");
    }

    #[test]
    fn stationary_ou_matches_closed_form_and_lyapunov() {
        let (a, sigma) = (-1.0, 0.7);
        let p = scalar(
            1000,
            a,
            DelayMeasure::zero(1),
            NoiseField::additive(m1(sigma)),
            1.0,
        );
        let st = stationary_covariance(&p, 20.0, 1e-3).unwrap();
        let exact = sigma * sigma / (2.0 * a.abs());
        assert!(((st.q[(0, 0)] - exact) / exact).abs() <= 1e-3);
        assert!(st.tail_bound < 1e-12);
        assert!((st.decay_rate - 1.0).abs() < 0.01);

        let a2 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.3, -0.6]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.2, 0.3]);
        let p2 = Problem {
            dim_state: 2,
            dim_noise: 2,
            drift: a2.clone(),
            delay: DelayMeasure::zero(2),
            noise: NoiseField::additive(b.clone()),
            p: 2.0,
            x0: DVector::zeros(2),
            f0: Segment::zeros(2, 1000),
            horizon: 1.0,
        };
        let st = stationary_covariance(&p2, 30.0, 1e-3).unwrap();
        let lyap = lyapunov_solution(&a2, &(&b * b.transpose())).unwrap();
        assert!((&st.q - &lyap).norm() <= 2e-3 * lyap.norm());
    }

    #[test]
    fn stationary_errors_and_zero_noise() {
        let p = scalar(
            10,
            -1.0,
            DelayMeasure::zero(1),
            NoiseField::additive(m1(0.0)),
            1.0,
        );
        assert_eq!(stationary_covariance(&p, 5.0, 0.1).unwrap().q, m1(0.0));
        let unstable = scalar(
            10,
            0.1,
            DelayMeasure::zero(1),
            NoiseField::additive(m1(1.0)),
            1.0,
        );
        assert!(matches!(
            stationary_covariance(&unstable, 5.0, 0.1),
            Err(Error::NoDecay { .. })
        ));
        let mult = scalar(
            10,
            -1.0,
            DelayMeasure::zero(1),
            NoiseField::scalar_multiplicative(1.0),
            1.0,
        );
        assert!(matches!(
            stationary_covariance(&mult, 5.0, 0.1),
            Err(Error::InvalidParameter(_))
        ));
    }
}
