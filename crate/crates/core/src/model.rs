//! Problem instances: drift, delay measure, noise field, initial data, and
//! the discrete solver configuration.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delay_op::{snap_atom, SNAP_TOL};
use crate::error::{Error, Result};
use crate::segments::{euclid, Segment, SegmentView};

/// Point mass `weight · δ_location` of the delay measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: DMatrix<f64>,
}

/// Bounded-variation delay measure `η`: finitely many atoms plus a
/// piecewise-constant matrix density on a uniform partition of `[-1, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayMeasure {
    pub dim: usize,
    pub atoms: Vec<Atom>,
    /// Density pieces, oldest first; empty means no density.
    pub density: Vec<DMatrix<f64>>,
}

impl DelayMeasure {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            atoms: Vec::new(),
            density: Vec::new(),
        }
    }

    pub fn atom(location: f64, weight: DMatrix<f64>) -> Self {
        Self {
            dim: weight.nrows(),
            atoms: vec![Atom { location, weight }],
            density: Vec::new(),
        }
    }

    pub fn with_atom(mut self, location: f64, weight: DMatrix<f64>) -> Self {
        self.atoms.push(Atom { location, weight });
        self
    }

    pub fn with_density(mut self, pieces: Vec<DMatrix<f64>>) -> Self {
        self.density = pieces;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.atoms
            .iter()
            .all(|a| a.weight.iter().all(|&w| w == 0.0))
            && self.density.iter().all(|m| m.iter().all(|&w| w == 0.0))
    }

    /// Density values on an `n_cells` grid (one matrix per cell).
    pub fn density_on_grid(&self, n_cells: usize) -> Result<Vec<DMatrix<f64>>> {
        if self.density.is_empty() {
            return Ok(Vec::new());
        }
        let pieces = self.density.len();
        if !n_cells.is_multiple_of(pieces) {
            return Err(Error::DensityResolution { pieces, n_cells });
        }
        let rep = n_cells / pieces;
        Ok(self
            .density
            .iter()
            .flat_map(|m| std::iter::repeat_n(m.clone(), rep))
            .collect())
    }

    pub fn scale(&self, lambda: f64) -> Self {
        Self {
            dim: self.dim,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location,
                    weight: &a.weight * lambda,
                })
                .collect(),
            density: self.density.iter().map(|m| m * lambda).collect(),
        }
    }
}

/// `Σ_i ‖M_i‖_F + ∫ ‖density‖_F` (Frobenius norms).
pub fn total_variation(eta: &DelayMeasure) -> f64 {
    let atoms: f64 = eta.atoms.iter().map(|a| a.weight.norm()).sum();
    let width = if eta.density.is_empty() {
        0.0
    } else {
        1.0 / eta.density.len() as f64
    };
    let density: f64 = eta.density.iter().map(|m| width * m.norm()).sum();
    atoms + density
}

pub type NoiseFn = dyn Fn(&[f64], SegmentView<'_>) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub enum NoiseMap {
    /// `B ≡ b`.
    Additive(DMatrix<f64>),
    /// Column `j` of `B(x, f)` is `base_j + head_gain[j]·x + tail_gain[j]·∫f`.
    Linear {
        base: DMatrix<f64>,
        head_gain: Vec<DMatrix<f64>>,
        tail_gain: Vec<DMatrix<f64>>,
    },
    Custom(Arc<NoiseFn>),
}

impl fmt::Debug for NoiseMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseMap::Additive(b) => f.debug_tuple("Additive").field(b).finish(),
            NoiseMap::Linear { base, .. } => f.debug_struct("Linear").field("base", base).finish(),
            NoiseMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Lipschitz noise field `B : R^d × L^p(-1,0;R^d) → R^{d×m}`.
#[derive(Clone, Debug)]
pub struct NoiseField {
    map: NoiseMap,
    dim_state: usize,
    dim_noise: usize,
    lipschitz: f64,
}

impl NoiseField {
    pub fn zero(dim_state: usize, dim_noise: usize) -> Self {
        Self::additive(DMatrix::zeros(dim_state, dim_noise))
    }

    pub fn additive(b: DMatrix<f64>) -> Self {
        Self {
            dim_state: b.nrows(),
            dim_noise: b.ncols(),
            map: NoiseMap::Additive(b),
            lipschitz: 0.0,
        }
    }

    /// Linear field with the Lipschitz constant
    /// `sqrt(Σ_j ‖G_j‖²_F + ‖H_j‖²_F)` for the product norm `(|x|² + ‖f‖²_{L^p})^{1/2}`.
    pub fn linear(
        base: DMatrix<f64>,
        head_gain: Vec<DMatrix<f64>>,
        tail_gain: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let (d, m) = base.shape();
        let check = |gains: &[DMatrix<f64>], what: &'static str| -> Result<()> {
            if !gains.is_empty() && gains.len() != m {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: m,
                    got: gains.len(),
                });
            }
            for g in gains {
                if g.shape() != (d, d) {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: d,
                        got: g.nrows(),
                    });
                }
            }
            Ok(())
        };
        check(&head_gain, "noise head gain")?;
        check(&tail_gain, "noise tail gain")?;
        let k2: f64 = head_gain
            .iter()
            .chain(tail_gain.iter())
            .map(|g| g.norm_squared())
            .sum();
        Ok(Self {
            dim_state: d,
            dim_noise: m,
            map: NoiseMap::Linear {
                base,
                head_gain,
                tail_gain,
            },
            lipschitz: k2.sqrt(),
        })
    }

    /// Scalar multiplicative field `B(x, f) = σ x`.
    pub fn scalar_multiplicative(sigma: f64) -> Self {
        Self::linear(
            DMatrix::zeros(1, 1),
            vec![DMatrix::from_element(1, 1, sigma)],
            Vec::new(),
        )
        .expect("1x1 shapes are consistent")
    }

    pub fn custom(dim_state: usize, dim_noise: usize, lipschitz: f64, map: Arc<NoiseFn>) -> Self {
        Self {
            map: NoiseMap::Custom(map),
            dim_state,
            dim_noise,
            lipschitz,
        }
    }

    /// Overrides the Lipschitz constant (user-declared).
    pub fn with_lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = k;
        self
    }

    pub fn map(&self) -> &NoiseMap {
        &self.map
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `B` as a constant matrix when it does not depend on the state.
    pub fn as_additive(&self) -> Option<&DMatrix<f64>> {
        match &self.map {
            NoiseMap::Additive(b) => Some(b),
            NoiseMap::Linear {
                base,
                head_gain,
                tail_gain,
            } if head_gain
                .iter()
                .chain(tail_gain)
                .all(|g| g.iter().all(|&v| v == 0.0)) =>
            {
                Some(base)
            }
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self.as_additive() {
            Some(b) => b.iter().all(|&v| v == 0.0),
            None => false,
        }
    }

    pub fn eval(&self, head: &[f64], tail: SegmentView<'_>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim_state, self.dim_noise);
        self.eval_into(head, tail, &mut out);
        out
    }

    pub fn eval_into(&self, head: &[f64], tail: SegmentView<'_>, out: &mut DMatrix<f64>) {
        match &self.map {
            NoiseMap::Additive(b) => out.copy_from(b),
            NoiseMap::Linear {
                base,
                head_gain,
                tail_gain,
            } => {
                out.copy_from(base);
                let d = self.dim_state;
                for (j, g) in head_gain.iter().enumerate() {
                    for r in 0..d {
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += g[(r, c)] * head[c];
                        }
                        out[(r, j)] += acc;
                    }
                }
                if !tail_gain.is_empty() {
                    let mean = tail.integral();
                    for (j, g) in tail_gain.iter().enumerate() {
                        for r in 0..d {
                            let mut acc = 0.0;
                            for c in 0..d {
                                acc += g[(r, c)] * mean[c];
                            }
                            out[(r, j)] += acc;
                        }
                    }
                }
            }
            NoiseMap::Custom(f) => out.copy_from(&f(head, tail)),
        }
    }

    /// `‖B(0)‖_F` on an `n_cells` grid.
    pub fn base_norm(&self, n_cells: usize) -> f64 {
        let zero = Segment::zeros(self.dim_state, n_cells);
        self.eval(&vec![0.0; self.dim_state], zero.view()).norm()
    }
}

/// Product-space norm `(|x|² + ‖f‖²_{L^p})^{1/2}` on `R^d × L^p(-1,0;R^d)`.
pub fn product_norm(head: &[f64], tail: SegmentView<'_>, p: f64) -> f64 {
    euclid(head).hypot(tail.lp_norm(p))
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub dim_state: usize,
    pub dim_noise: usize,
    pub drift: DMatrix<f64>,
    pub delay: DelayMeasure,
    pub noise: NoiseField,
    pub p: f64,
    pub x0: DVector<f64>,
    pub f0: Segment,
    pub horizon: f64,
}

impl Problem {
    /// Same problem with the initial segment represented on `n_cells` cells.
    pub fn at_resolution(&self, n_cells: usize) -> Result<Problem> {
        let mut out = self.clone();
        out.f0 = self.f0.at_resolution(n_cells)?;
        Ok(out)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_noise(mut self, noise: NoiseField) -> Self {
        self.dim_noise = noise.dim_noise();
        self.noise = noise;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub n_cells: usize,
    pub dt: f64,
    pub seed: u64,
    pub mc_paths: usize,
    pub tolerance: f64,
}

impl SolverConfig {
    /// Config with `dt = 1/n_cells`.
    pub fn aligned(n_cells: usize) -> Self {
        Self {
            n_cells,
            dt: 1.0 / n_cells as f64,
            seed: 0,
            mc_paths: 1000,
            tolerance: 1e-10,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_paths(mut self, paths: usize) -> Self {
        self.mc_paths = paths;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        let k = (horizon / self.dt).round();
        if k < 1.0 || (k * self.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::OffGrid {
                t: horizon,
                dt: self.dt,
            });
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    /// Sorted, deduplicated.
    pub violations: Vec<Violation>,
    /// Non-fatal findings, e.g. a failed Lipschitz spot check.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.0.contains(needle))
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msg: Vec<String> = self.violations.into_iter().map(|v| v.0).collect();
            Err(Error::InvalidParameter(msg.join("; ")))
        }
    }
}

/// Checks every standing assumption of the discrete setting.
pub fn validate_problem(p: &Problem, c: &SolverConfig) -> ValidationReport {
    let mut v = Vec::new();
    let mut bad = |s: String| v.push(Violation(s));
    let (d, m) = (p.dim_state, p.dim_noise);

    if d == 0 {
        bad("dim_state must be positive".into());
    }
    if m == 0 {
        bad("dim_noise must be positive".into());
    }
    if p.drift.shape() != (d, d) {
        bad(format!(
            "drift has shape {:?}, expected ({d}, {d})",
            p.drift.shape()
        ));
    }
    if p.delay.dim != d {
        bad(format!(
            "delay measure has dimension {}, expected {d}",
            p.delay.dim
        ));
    }
    for a in &p.delay.atoms {
        if !(-1.0..=0.0).contains(&a.location) {
            bad(format!("atom outside [−1,0]: θ = {}", a.location));
        } else if c.n_cells > 0 && snap_atom(a.location, c.n_cells).is_err() {
            bad(format!(
                "atom at θ = {} is farther than {SNAP_TOL:e} from the {}-cell grid",
                a.location, c.n_cells
            ));
        }
        if a.weight.shape() != (d, d) {
            bad(format!("atom weight at θ = {} has wrong shape", a.location));
        }
    }
    if !p.delay.density.is_empty() {
        if !c.n_cells.is_multiple_of(p.delay.density.len()) {
            bad(format!(
                "density with {} pieces does not refine to {} cells",
                p.delay.density.len(),
                c.n_cells
            ));
        }
        if p.delay.density.iter().any(|m| m.shape() != (d, d)) {
            bad("density piece has wrong shape".into());
        }
    }
    if p.noise.dim_state() != d || p.noise.dim_noise() != m {
        bad(format!(
            "noise field maps into {}x{} matrices, expected {d}x{m}",
            p.noise.dim_state(),
            p.noise.dim_noise()
        ));
    }
    if !(p.noise.lipschitz() >= 0.0) {
        bad("lipschitz constant must be nonnegative".into());
    }
    if !(p.p >= 1.0 && p.p.is_finite()) {
        bad(format!("p = {} must lie in [1, ∞)", p.p));
    }
    if p.x0.len() != d {
        bad(format!("x0 has length {}, expected {d}", p.x0.len()));
    }
    if p.f0.dim() != d {
        bad(format!("f0 has dimension {}, expected {d}", p.f0.dim()));
    }
    if p.f0.n_cells() != c.n_cells {
        bad(format!(
            "f0 has {} cells, solver grid has {}",
            p.f0.n_cells(),
            c.n_cells
        ));
    }
    if !(p.horizon > 0.0 && p.horizon.is_finite()) {
        bad(format!("horizon {} must be positive", p.horizon));
    }
    if c.n_cells == 0 {
        bad("n_cells must be positive".into());
    }
    if !(c.dt > 0.0) {
        bad("dt must be positive".into());
    } else {
        if c.n_cells > 0 && (c.dt * c.n_cells as f64 - 1.0).abs() > 1e-9 {
            bad(format!("dt ≠ 1/N (dt = {}, N = {})", c.dt, c.n_cells));
        }
        if p.horizon > 0.0 && c.steps_for(p.horizon).is_err() {
            bad(format!(
                "horizon {} is not a multiple of dt = {}",
                p.horizon, c.dt
            ));
        }
    }
    if c.mc_paths == 0 {
        bad("mc_paths must be positive".into());
    }
    if !(c.tolerance > 0.0) {
        bad("tolerance must be positive".into());
    }

    v.sort();
    v.dedup();

    let mut warnings = Vec::new();
    if v.is_empty() {
        if let Some(w) = lipschitz_spot_check(p, c, 64) {
            warnings.push(w);
        }
    }
    ValidationReport {
        violations: v,
        warnings,
    }
}

/// Largest sampled ratio `‖B(y₁) − B(y₂)‖_F / ‖y₁ − y₂‖` over random pairs.
pub fn sampled_lipschitz_ratio(p: &Problem, n_cells: usize, samples: usize, seed: u64) -> f64 {
    let d = p.dim_state;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c69_7073_6368_6b00);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let x1 = draw(d);
        let x2 = draw(d);
        let f1 = Segment::from_cells(d, draw(d * n_cells)).expect("shape");
        let f2 = Segment::from_cells(d, draw(d * n_cells)).expect("shape");
        let db = (p.noise.eval(&x1, f1.view()) - p.noise.eval(&x2, f2.view())).norm();
        let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let df = Segment::from_cells(
            d,
            f1.as_slice()
                .iter()
                .zip(f2.as_slice())
                .map(|(a, b)| a - b)
                .collect(),
        )
        .expect("shape");
        let dy = product_norm(&dx, df.view(), p.p);
        if dy > 0.0 {
            worst = worst.max(db / dy);
        }
    }
    worst
}

fn lipschitz_spot_check(p: &Problem, c: &SolverConfig, samples: usize) -> Option<String> {
    let ratio = sampled_lipschitz_ratio(p, c.n_cells, samples, c.seed);
    (ratio > p.noise.lipschitz() * (1.0 + 1e-9) + 1e-12).then(|| {
        format!(
            "declared Lipschitz constant {} is below a sampled ratio {ratio}",
            p.noise.lipschitz()
        )
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// `x'(t) = -x(t-1)`, `x ≡ 1` on `[-1, 0]`, optional noise.
    pub fn unit_delay(n_cells: usize, horizon: f64, noise: NoiseField) -> Problem {
        Problem {
            dim_state: 1,
            dim_noise: noise.dim_noise(),
            drift: DMatrix::zeros(1, 1),
            delay: DelayMeasure::atom(-1.0, DMatrix::from_element(1, 1, -1.0)),
            noise,
            p: 2.0,
            x0: DVector::from_element(1, 1.0),
            f0: Segment::constant(n_cells, &[1.0]),
            horizon,
        }
    }

    pub fn scalar(
        n_cells: usize,
        a: f64,
        eta: DelayMeasure,
        noise: NoiseField,
        horizon: f64,
    ) -> Problem {
        Problem {
            dim_state: 1,
            dim_noise: noise.dim_noise(),
            drift: DMatrix::from_element(1, 1, a),
            delay: eta,
            noise,
            p: 2.0,
            x0: DVector::from_element(1, 1.0),
            f0: Segment::constant(n_cells, &[1.0]),
            horizon,
        }
    }
}
