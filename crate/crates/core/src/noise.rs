//! Truncated cylindrical Brownian motion, Itô sums of adapted step processes,
//! and γ-norms (Hilbert–Schmidt norms in finite dimensions).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mc::{map_paths, Execution, RunningStats};
use crate::report::McCheck;

/// Identifies the RNG stream a path was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PathId {
    pub seed: u64,
    pub stream_id: u64,
    /// Number of fine increments merged into one step (1 for a raw path).
    pub coarsening: usize,
}

/// Increments `ΔW_k ~ N(0, dt I_m)` of an `m`-dimensional Brownian motion.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    m: usize,
    dt: f64,
    n_steps: usize,
    increments: Vec<f64>,
    id: PathId,
}

/// ChaCha8 keyed by `seed` with `stream_id` selecting an independent stream.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn sample_brownian(
    m: usize,
    dt: f64,
    n_steps: usize,
    seed: u64,
    stream_id: u64,
) -> Result<BrownianPath> {
    if m == 0 || n_steps == 0 || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "brownian path needs m, n_steps, dt > 0 (got {m}, {n_steps}, {dt})"
        )));
    }
    let mut rng = stream_rng(seed, stream_id);
    let sd = dt.sqrt();
    let increments = (0..m * n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    Ok(BrownianPath {
        m,
        dt,
        n_steps,
        increments,
        id: PathId {
            seed,
            stream_id,
            coarsening: 1,
        },
    })
}

impl BrownianPath {
    pub fn from_increments(m: usize, dt: f64, increments: Vec<f64>, id: PathId) -> Result<Self> {
        if m == 0 || !increments.len().is_multiple_of(m) {
            return Err(Error::DimensionMismatch {
                what: "brownian increments",
                expected: m,
                got: increments.len(),
            });
        }
        Ok(Self {
            m,
            dt,
            n_steps: increments.len() / m,
            increments,
            id,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn id(&self) -> PathId {
        self.id
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.m..(k + 1) * self.m]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_k)` for `k = 0..=n_steps`.
    pub fn values(&self) -> Vec<Vec<f64>> {
        let mut w = vec![0.0; self.m];
        let mut out = Vec::with_capacity(self.n_steps + 1);
        out.push(w.clone());
        for k in 0..self.n_steps {
            for (wi, dw) in w.iter_mut().zip(self.increment(k)) {
                *wi += dw;
            }
            out.push(w.clone());
        }
        out
    }

    /// Same Brownian motion observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "{} steps cannot be coarsened by {factor}",
                self.n_steps
            )));
        }
        let n = self.n_steps / factor;
        let mut inc = vec![0.0; n * self.m];
        for k in 0..self.n_steps {
            let c = k / factor;
            for i in 0..self.m {
                inc[c * self.m + i] += self.increments[k * self.m + i];
            }
        }
        Ok(BrownianPath {
            m: self.m,
            dt: self.dt * factor as f64,
            n_steps: n,
            increments: inc,
            id: PathId {
                coarsening: self.id.coarsening * factor,
                ..self.id
            },
        })
    }

    /// First `n` increments.
    pub fn truncate(&self, n: usize) -> BrownianPath {
        let n = n.min(self.n_steps);
        BrownianPath {
            m: self.m,
            dt: self.dt,
            n_steps: n,
            increments: self.increments[..n * self.m].to_vec(),
            id: self.id,
        }
    }
}

/// The increments strictly before step `k`; all an adapted integrand may see.
#[derive(Clone, Copy, Debug)]
pub struct Past<'a> {
    m: usize,
    dt: f64,
    increments: &'a [f64],
}

impl<'a> Past<'a> {
    pub fn steps(&self) -> usize {
        self.increments.len() / self.m
    }

    pub fn increment(&self, j: usize) -> &'a [f64] {
        &self.increments[j * self.m..(j + 1) * self.m]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `W(t_k)`.
    pub fn current(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.m];
        for c in self.increments.chunks_exact(self.m) {
            for (wi, dw) in w.iter_mut().zip(c) {
                *wi += dw;
            }
        }
        w
    }
}

/// Grid step process `Φ_k ∈ R^{d×m}`, constant on `[t_k, t_{k+1})`.
///
/// Only deterministic and explicitly adapted constructors exist: an adapted
/// process is built from a [`Past`] view at every step, so it cannot depend on
/// `ΔW_k` or later increments.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProcess {
    d: usize,
    m: usize,
    values: Vec<DMatrix<f64>>,
    adapted_to: Option<PathId>,
}

impl StepProcess {
    pub fn deterministic(
        d: usize,
        m: usize,
        n_steps: usize,
        mut f: impl FnMut(usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        let values: Vec<DMatrix<f64>> = (0..n_steps).map(&mut f).collect();
        Self::check_shapes(d, m, &values)?;
        Ok(Self {
            d,
            m,
            values,
            adapted_to: None,
        })
    }

    pub fn adapted(
        w: &BrownianPath,
        d: usize,
        mut f: impl FnMut(usize, Past<'_>) -> DMatrix<f64>,
    ) -> Result<Self> {
        let m = w.dim();
        let values: Vec<DMatrix<f64>> = (0..w.n_steps())
            .map(|k| {
                f(
                    k,
                    Past {
                        m,
                        dt: w.dt(),
                        increments: &w.increments[..k * m],
                    },
                )
            })
            .collect();
        Self::check_shapes(d, m, &values)?;
        Ok(Self {
            d,
            m,
            values,
            adapted_to: Some(w.id()),
        })
    }

    fn check_shapes(d: usize, m: usize, values: &[DMatrix<f64>]) -> Result<()> {
        for v in values {
            if v.shape() != (d, m) {
                return Err(Error::DimensionMismatch {
                    what: "step process value",
                    expected: d * m,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn zeros(d: usize, m: usize, n_steps: usize) -> Self {
        Self {
            d,
            m,
            values: vec![DMatrix::zeros(d, m); n_steps],
            adapted_to: None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.m)
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn adapted_to(&self) -> Option<PathId> {
        self.adapted_to
    }

    pub fn scale(&self, lambda: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * lambda).collect(),
            ..self.clone()
        }
    }

    /// `A Φ`.
    pub fn left_mul(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                what: "operator columns",
                expected: self.d,
                got: a.ncols(),
            });
        }
        Ok(Self {
            d: a.nrows(),
            m: self.m,
            values: self.values.iter().map(|v| a * v).collect(),
            adapted_to: self.adapted_to,
        })
    }

    /// `Σ_s μ_s Φ_s`.
    pub fn combination(family: &[StepProcess], weights: &[f64]) -> Result<Self> {
        let first = family
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty integrand family".into()))?;
        if family.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "fubini weights",
                expected: family.len(),
                got: weights.len(),
            });
        }
        let mut values = vec![DMatrix::zeros(first.d, first.m); first.n_steps()];
        let mut adapted_to = None;
        for (phi, &mu) in family.iter().zip(weights) {
            if phi.dims() != first.dims() || phi.n_steps() != first.n_steps() {
                return Err(Error::DimensionMismatch {
                    what: "family member",
                    expected: first.n_steps(),
                    got: phi.n_steps(),
                });
            }
            match (adapted_to, phi.adapted_to) {
                (Some(a), Some(b)) if a != b => return Err(Error::NotAdapted),
                (None, Some(b)) => adapted_to = Some(b),
                _ => {}
            }
            for (acc, v) in values.iter_mut().zip(&phi.values) {
                *acc += v * mu;
            }
        }
        Ok(Self {
            d: first.d,
            m: first.m,
            values,
            adapted_to,
        })
    }
}

/// Cumulative left-point Itô sums `Σ_{j<k} Φ_j ΔW_j`, `k = 0..=n`.
pub fn ito_integral(phi: &StepProcess, w: &BrownianPath) -> Result<Vec<DVector<f64>>> {
    if phi.m != w.dim() {
        return Err(Error::DimensionMismatch {
            what: "noise dimension",
            expected: w.dim(),
            got: phi.m,
        });
    }
    if phi.n_steps() != w.n_steps() {
        return Err(Error::DimensionMismatch {
            what: "integration steps",
            expected: w.n_steps(),
            got: phi.n_steps(),
        });
    }
    if let Some(id) = phi.adapted_to {
        if id != w.id() {
            return Err(Error::NotAdapted);
        }
    }
    let mut acc = DVector::zeros(phi.d);
    let mut out = Vec::with_capacity(phi.n_steps() + 1);
    out.push(acc.clone());
    for (k, v) in phi.values.iter().enumerate() {
        let dw = DVector::from_column_slice(w.increment(k));
        acc += v * dw;
        out.push(acc.clone());
    }
    Ok(out)
}

/// `(Σ_k dt ‖Φ_k‖²_F)^{1/2}`.
pub fn gamma_norm(phi: &StepProcess, dt: f64) -> f64 {
    phi.values
        .iter()
        .map(|v| dt * v.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// γ-norm from its definition `E‖Σ_j γ_j R_Φ h_j‖²` over a random orthonormal
/// system `(h_j)` of the step-function space, estimated with `samples`
/// Gaussian sums. Returns `(estimate, std_error)` of the norm.
pub fn gamma_norm_gaussian_sum(
    phi: &StepProcess,
    dt: f64,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let (d, m, n) = (phi.d, phi.m, phi.n_steps());
    let dim = n * m;
    let mut rng = stream_rng(seed, 0x6761_6d6d_61);
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    // columns of R: R h_j = Σ_k √dt Φ_k q_j[k*m..(k+1)*m]
    let r_cols: Vec<DVector<f64>> = (0..dim)
        .map(|j| {
            let mut col = DVector::zeros(d);
            for k in 0..n {
                let qk = q.view((k * m, j), (m, 1));
                col += &phi.values[k] * qk * dt.sqrt();
            }
            col
        })
        .collect();
    let stats: RunningStats = (0..samples)
        .map(|_| {
            let mut s = DVector::zeros(d);
            for c in &r_cols {
                let z: f64 = StandardNormal.sample(&mut rng);
                s += c * z;
            }
            s.norm_squared()
        })
        .collect();
    let est = stats.mean().sqrt();
    let se = if est > 0.0 {
        stats.std_error() / (2.0 * est)
    } else {
        0.0
    };
    (est, se)
}

pub(crate) fn check_alpha(alpha: f64, lo: f64, hi: f64) -> Result<()> {
    if !(alpha > lo && alpha < hi) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must lie in ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// `∫_a^b (s - u)^{-γ} du` for `a < b ≤ s`, `γ < 1`.
pub(crate) fn power_cell_integral(s: f64, a: f64, b: f64, gamma: f64) -> f64 {
    let e = 1.0 - gamma;
    (((s - a).max(0.0)).powf(e) - ((s - b).max(0.0)).powf(e)) / e
}

/// `(Σ_{t_k < s} ∫_{t_k}^{t_{k+1}} (s-u)^{-2α} du · ‖Φ_k‖²_F)^{1/2}`.
pub fn weighted_gamma_norm(phi: &StepProcess, s: f64, alpha: f64, dt: f64) -> Result<f64> {
    check_alpha(alpha, 0.0, 0.5)?;
    let k_end = (s / dt).round();
    if k_end < 0.0 || (k_end * dt - s).abs() > 1e-9 * s.max(1.0) {
        return Err(Error::OffGrid { t: s, dt });
    }
    let k_end = k_end as usize;
    if k_end > phi.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "s = {s} beyond the process horizon"
        )));
    }
    let sum: f64 = (0..k_end)
        .map(|k| {
            let w = power_cell_integral(s, k as f64 * dt, (k + 1) as f64 * dt, 2.0 * alpha);
            w * phi.values[k].norm_squared()
        })
        .sum();
    Ok(sum.sqrt())
}

/// An integrand constructed per Brownian path.
#[derive(Clone)]
pub struct IntegrandFamily {
    pub name: String,
    pub d: usize,
    pub m: usize,
    build: Arc<dyn Fn(&BrownianPath) -> StepProcess + Send + Sync>,
}

impl IntegrandFamily {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        m: usize,
        build: impl Fn(&BrownianPath) -> StepProcess + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            d,
            m,
            build: Arc::new(build),
        }
    }

    pub fn deterministic(name: impl Into<String>, phi: StepProcess) -> Self {
        let (d, m) = phi.dims();
        Self::new(name, d, m, move |_| phi.clone())
    }

    pub fn build(&self, w: &BrownianPath) -> StepProcess {
        (self.build)(w)
    }
}

/// Grid on which the Monte Carlo checks draw paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub paths: usize,
    pub seed: u64,
}

/// `E‖∫Φ dW‖² = E‖Φ‖²_γ`: estimate of the ratio with the paired-difference
/// standard error; passes iff `|ratio - 1| ≤ 3 SE`.
pub fn check_ito_isometry(
    families: &[IntegrandFamily],
    grid: McGrid,
    exec: Execution,
) -> Result<Vec<McCheck>> {
    families
        .iter()
        .enumerate()
        .map(|(fi, fam)| {
            let samples = map_paths(grid.paths, exec, |i| -> Result<(f64, f64)> {
                let w = sample_brownian(
                    fam.m,
                    grid.dt,
                    grid.n_steps,
                    grid.seed,
                    (fi as u64) << 32 | i as u64,
                )?;
                let phi = fam.build(&w);
                let integral = ito_integral(&phi, &w)?;
                let last = integral.last().expect("nonempty");
                Ok((last.norm_squared(), gamma_norm(&phi, grid.dt).powi(2)))
            });
            let mut num = RunningStats::new();
            let mut den = RunningStats::new();
            let mut diff = RunningStats::new();
            for s in samples {
                let (a, b) = s?;
                num.push(a);
                den.push(b);
                diff.push(a - b);
            }
            let g = den.mean();
            if g == 0.0 {
                return Ok(McCheck::new(
                    format!("ito_isometry/{}", fam.name),
                    0.0,
                    0.0,
                    num.mean() == 0.0,
                ));
            }
            let ratio = num.mean() / g;
            let err = diff.mean() / g;
            let se = diff.std_error() / g;
            Ok(McCheck::new(
                format!("ito_isometry/{}", fam.name),
                ratio,
                se,
                err.abs() <= 3.0 * se,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BdgReport {
    pub ratio: f64,
    pub std_error: f64,
    pub ratio_doubled: f64,
    pub std_error_doubled: f64,
    pub degenerate: bool,
    pub stable: bool,
}

impl BdgReport {
    pub fn pass(&self) -> bool {
        self.degenerate || (self.ratio.is_finite() && self.stable)
    }
}

/// Empirical constant in `E sup_s‖∫_0^s Φ dW‖^p ≲ E‖Φ‖^p_γ` with `paths` and
/// `2·paths` samples.
pub fn check_bdg_one_sided(
    fam: &IntegrandFamily,
    p: f64,
    grid: McGrid,
    exec: Execution,
) -> Result<BdgReport> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be positive")));
    }
    let samples = map_paths(2 * grid.paths, exec, |i| -> Result<(f64, f64)> {
        let w = sample_brownian(fam.m, grid.dt, grid.n_steps, grid.seed, i as u64)?;
        let phi = fam.build(&w);
        let integral = ito_integral(&phi, &w)?;
        let sup = integral.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok((sup.powf(p), gamma_norm(&phi, grid.dt).powf(p)))
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let estimate = |s: &[(f64, f64)]| -> (f64, f64) {
        let num: RunningStats = s.iter().map(|x| x.0).collect();
        let den: RunningStats = s.iter().map(|x| x.1).collect();
        if den.mean() == 0.0 {
            return (0.0, 0.0);
        }
        (num.mean() / den.mean(), num.std_error() / den.mean())
    };
    let (ratio, se) = estimate(&samples[..grid.paths]);
    let (ratio2, se2) = estimate(&samples);
    let degenerate = samples.iter().all(|s| s.1 == 0.0);
    let stable = (ratio - ratio2).abs() <= 3.0 * se.hypot(se2) + 1e-12;
    Ok(BdgReport {
        ratio,
        std_error: se,
        ratio_doubled: ratio2,
        std_error_doubled: se2,
        degenerate,
        stable,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapCheck {
    pub lhs: DVector<f64>,
    pub rhs: DVector<f64>,
    /// `‖lhs - rhs‖ / max(‖lhs‖, ‖rhs‖)`, `0` when both vanish.
    pub error: f64,
}

fn swap(lhs: DVector<f64>, rhs: DVector<f64>) -> SwapCheck {
    let scale = lhs.norm().max(rhs.norm());
    let error = if scale == 0.0 {
        0.0
    } else {
        (&lhs - &rhs).norm() / scale
    };
    SwapCheck { lhs, rhs, error }
}

/// `A ∫Φ dW` against `∫ AΦ dW`.
pub fn check_closed_operator_swap(
    a: &DMatrix<f64>,
    phi: &StepProcess,
    w: &BrownianPath,
) -> Result<SwapCheck> {
    let inner = ito_integral(phi, w)?;
    let lhs = a * inner.last().expect("nonempty");
    let rhs = ito_integral(&phi.left_mul(a)?, w)?.pop().expect("nonempty");
    Ok(swap(lhs, rhs))
}

/// `Σ_s μ_s ∫Φ_s dW` against `∫(Σ_s μ_s Φ_s) dW`.
pub fn check_fubini_swap(
    family: &[StepProcess],
    weights: &[f64],
    w: &BrownianPath,
) -> Result<SwapCheck> {
    let combined = StepProcess::combination(family, weights)?;
    let mut lhs = DVector::zeros(combined.dims().0);
    for (phi, &mu) in family.iter().zip(weights) {
        lhs += ito_integral(phi, w)?.pop().expect("nonempty") * mu;
    }
    let rhs = ito_integral(&combined, w)?.pop().expect("nonempty");
    Ok(swap(lhs, rhs))
}
