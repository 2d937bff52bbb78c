//! History segments `x_t(s) = x(t + s)`, `s ∈ [-1, 0]`.
//!
//! A segment is piecewise constant on a uniform grid of `N` cells of width
//! `h = 1/N`. Cell `j` (0-based) covers `[-1 + j h, -1 + (j+1) h)` and stores
//! the value at its left endpoint; cell `N - 1` is the newest, adjacent to
//! `s = 0`. The head value `x(t)` itself is kept outside the segment.

use crate::error::{Error, Result};

/// Borrowed view of a segment (`n_cells * dim` values, cell-major).
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    dim: usize,
    values: &'a [f64],
}

impl<'a> SegmentView<'a> {
    pub fn new(dim: usize, values: &'a [f64]) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                what: "segment values",
                expected: dim,
                got: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.n_cells() as f64
    }

    pub fn cell(&self, j: usize) -> &'a [f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.values
    }

    /// `(Σ_j h ‖f_j‖₂^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let h = self.cell_width();
        let sum: f64 = self
            .values
            .chunks_exact(self.dim)
            .map(|c| euclid(c).powf(p))
            .sum();
        (h * sum).powf(1.0 / p)
    }

    /// `∫_{-1}^0 f(s) ds`.
    pub fn integral(&self) -> Vec<f64> {
        let h = self.cell_width();
        let mut out = vec![0.0; self.dim];
        for c in self.values.chunks_exact(self.dim) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += h * v;
            }
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .map(euclid)
            .fold(0.0, f64::max)
    }

    pub fn to_segment(&self) -> Segment {
        Segment {
            dim: self.dim,
            values: self.values.to_vec(),
        }
    }
}

/// Owned piecewise-constant representative of an `L^p(-1, 0; R^d)` function.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    dim: usize,
    values: Vec<f64>,
}

impl Segment {
    pub fn from_cells(dim: usize, values: Vec<f64>) -> Result<Self> {
        SegmentView::new(dim, &values)?;
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize, n_cells: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * n_cells],
        }
    }

    pub fn constant(n_cells: usize, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(n_cells * value.len());
        for _ in 0..n_cells {
            values.extend_from_slice(value);
        }
        Self {
            dim: value.len(),
            values,
        }
    }

    /// Samples `f` at the left endpoint of every cell.
    pub fn from_fn(dim: usize, n_cells: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Self {
        let h = 1.0 / n_cells as f64;
        let mut values = Vec::with_capacity(dim * n_cells);
        for j in 0..n_cells {
            let v = f(-1.0 + j as f64 * h);
            assert_eq!(v.len(), dim, "segment sample has wrong dimension");
            values.extend(v);
        }
        Self { dim, values }
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView {
            dim: self.dim,
            values: &self.values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn cell(&self, j: usize) -> &[f64] {
        self.view().cell(j)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.view().lp_norm(p)
    }

    /// Same function on a grid `factor` times finer (each cell replicated).
    pub fn refine(&self, factor: usize) -> Segment {
        let mut values = Vec::with_capacity(self.values.len() * factor);
        for c in self.values.chunks_exact(self.dim) {
            for _ in 0..factor {
                values.extend_from_slice(c);
            }
        }
        Segment {
            dim: self.dim,
            values,
        }
    }

    /// Piecewise-constant refinement, or left-endpoint subsampling when
    /// `n_cells` divides the current resolution.
    pub fn at_resolution(&self, n_cells: usize) -> Result<Segment> {
        let own = self.n_cells();
        if n_cells != 0 && n_cells.is_multiple_of(own) {
            return Ok(self.refine(n_cells / own));
        }
        if n_cells != 0 && own.is_multiple_of(n_cells) {
            let step = own / n_cells;
            let d = self.dim;
            let values = (0..n_cells)
                .flat_map(|j| self.cell(j * step).to_vec())
                .collect();
            return Ok(Segment { dim: d, values });
        }
        Err(Error::GridMismatch(format!(
            "segment with {own} cells cannot be resampled to {n_cells} cells"
        )))
    }

    /// Drops the oldest cell, shifts the rest toward `s = -1` and stores `head`
    /// in the newest cell.
    pub fn shift_append(&self, head: &[f64]) -> Result<Segment> {
        let mut out = self.clone();
        out.shift_append_in_place(head)?;
        Ok(out)
    }

    pub fn shift_append_in_place(&mut self, head: &[f64]) -> Result<()> {
        if head.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "head",
                expected: self.dim,
                got: head.len(),
            });
        }
        self.values.rotate_left(self.dim);
        let n = self.values.len();
        self.values[n - self.dim..].copy_from_slice(head);
        Ok(())
    }

    pub fn scale(&self, lambda: f64) -> Segment {
        Segment {
            dim: self.dim,
            values: self.values.iter().map(|v| lambda * v).collect(),
        }
    }
}

pub fn shift_append(f: &Segment, head: &[f64]) -> Result<Segment> {
    f.shift_append(head)
}

pub fn lp_norm(f: &Segment, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "p = {p} must lie in [1, inf)"
        )));
    }
    Ok(f.lp_norm(p))
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Head trajectory on the time grid together with the initial segment.
///
/// Stored as one contiguous buffer `[f0 cells..., X_0, X_1, ...]`, so the
/// segment at step `k` is the window of `N` blocks starting at block `k`.
/// Consecutive segments are related by one `shift_append` by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPath {
    dim: usize,
    n_cells: usize,
    dt: f64,
    data: Vec<f64>,
}

impl SegmentPath {
    pub fn new(f0: &Segment, x0: &[f64], dt: f64) -> Result<Self> {
        if x0.len() != f0.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial head",
                expected: f0.dim(),
                got: x0.len(),
            });
        }
        let mut data = f0.as_slice().to_vec();
        data.extend_from_slice(x0);
        Ok(Self {
            dim: f0.dim(),
            n_cells: f0.n_cells(),
            dt,
            data,
        })
    }

    /// Builds a path from an explicit head trajectory `heads[0..=n]`.
    pub fn from_heads(f0: &Segment, heads: &[Vec<f64>], dt: f64) -> Result<Self> {
        let mut path = Self::new(f0, &heads[0], dt)?;
        for h in &heads[1..] {
            path.push_head(h)?;
        }
        Ok(path)
    }

    pub fn push_head(&mut self, head: &[f64]) -> Result<()> {
        if head.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "head",
                expected: self.dim,
                got: head.len(),
            });
        }
        self.data.extend_from_slice(head);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of completed time steps.
    pub fn n_steps(&self) -> usize {
        self.data.len() / self.dim - self.n_cells - 1
    }

    pub fn head(&self, k: usize) -> &[f64] {
        let b = self.n_cells + k;
        &self.data[b * self.dim..(b + 1) * self.dim]
    }

    pub fn heads(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data[self.n_cells * self.dim..].chunks_exact(self.dim)
    }

    pub(crate) fn head_mut(&mut self, k: usize) -> &mut [f64] {
        let b = self.n_cells + k;
        &mut self.data[b * self.dim..(b + 1) * self.dim]
    }

    pub fn last_head(&self) -> &[f64] {
        &self.data[self.data.len() - self.dim..]
    }

    pub fn segment_at(&self, k: usize) -> SegmentView<'_> {
        SegmentView {
            dim: self.dim,
            values: &self.data[k * self.dim..(k + self.n_cells) * self.dim],
        }
    }

    /// Value `x(t_k + s)` for every stored index; negative steps reach into `f0`.
    pub fn value_at_step(&self, k: isize) -> &[f64] {
        let b = (self.n_cells as isize + k) as usize;
        &self.data[b * self.dim..(b + 1) * self.dim]
    }

    pub fn step_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || (k * self.dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        let k = k as usize;
        if k > self.n_steps() {
            return Err(Error::InvalidParameter(format!(
                "time {t} is beyond the path horizon {}",
                self.n_steps() as f64 * self.dt
            )));
        }
        Ok(k)
    }
}

/// `∫_0^t x_s ds` evaluated on the segment grid.
#[derive(Clone, Debug)]
pub struct SegmentIntegral {
    /// `g(0) = ∫_0^t x(s) ds`.
    pub head: Vec<f64>,
    /// `g(u_j) = ∫_0^t x(s + u_j) ds` at the cell left endpoints.
    pub values: Segment,
    /// Forward-difference weak derivative of `g`.
    pub derivative: Segment,
    pub in_w1p: bool,
}

/// Left-point quadrature of `s ↦ x_s` over `[0, t]`, with the derivative
/// computed by forward differences of `g` (closing with `g(0)` at the newest cell).
pub fn time_integral_of_segments(path: &SegmentPath, t: f64) -> Result<SegmentIntegral> {
    let n = path.step_of(t)?;
    let (d, nc, dt) = (path.dim(), path.n_cells(), path.dt());
    let h = 1.0 / nc as f64;
    if (dt - h).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "dt = {dt} differs from h = {h}"
        )));
    }
    let mut g = vec![0.0; nc * d];
    let mut g_head = vec![0.0; d];
    for k in 0..n {
        let seg = path.segment_at(k);
        for (gi, v) in g.iter_mut().zip(seg.as_slice()) {
            *gi += dt * v;
        }
        for (gi, v) in g_head.iter_mut().zip(path.head(k)) {
            *gi += dt * v;
        }
    }
    let mut der = vec![0.0; nc * d];
    for j in 0..nc {
        for c in 0..d {
            let next = if j + 1 < nc {
                g[(j + 1) * d + c]
            } else {
                g_head[c]
            };
            der[j * d + c] = (next - g[j * d + c]) / h;
        }
    }
    let in_w1p = der.iter().all(|v| v.is_finite());
    Ok(SegmentIntegral {
        head: g_head,
        values: Segment { dim: d, values: g },
        derivative: Segment {
            dim: d,
            values: der,
        },
        in_w1p,
    })
}

/// Both sides of
/// `(∫_0^t ‖X_s‖²_{L^p})^{1/2} ≤ ‖f₀‖_{L^p} + t^{1/(p∧2)} (∫_0^t ‖X(u)‖^{p∨2})^{1/(p∨2)}`
/// with left-point quadrature in time.
pub fn segment_l2_in_time_bound(path: &SegmentPath, t: f64, p: f64) -> Result<(f64, f64)> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "p = {p} must lie in [1, inf)"
        )));
    }
    let n = path.step_of(t)?;
    let dt = path.dt();
    let lhs = (0..n)
        .map(|k| dt * path.segment_at(k).lp_norm(p).powi(2))
        .sum::<f64>()
        .sqrt();
    let r = p.max(2.0);
    let head_part = (0..n)
        .map(|k| dt * euclid(path.head(k)).powf(r))
        .sum::<f64>()
        .powf(1.0 / r);
    let rhs = path.segment_at(0).lp_norm(p) + t.powf(1.0 / p.min(2.0)) * head_part;
    Ok((lhs, rhs))
}
