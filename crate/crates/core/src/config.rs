//! TOML problem files.
//!
//! ```toml
//! [problem]
//! dim_state = 1
//! dim_noise = 1
//! drift = [-1.0]          # row-major d × d
//! p = 2.0
//! x0 = [1.0]
//! f0 = [1.0]              # d values (constant) or N·d values, cell-major
//! horizon = 2.0
//!
//! [noise]
//! kind = "linear"         # "additive" or "linear"
//! base = [0.1]            # row-major d × m
//! head_gain = [[0.3]]     # one row-major d × d matrix per noise column
//! tail_gain = [[0.0]]     # same shape, acts on ∫ f
//! # lipschitz = 0.3       # optional override of the computed constant
//!
//! [delay.atoms]
//! locations = [-1.0]
//! weights = [[0.5]]       # one row-major d × d matrix per atom
//!
//! [delay.density]
//! values = [[0.2], [0.1]] # piece-wise constant on a uniform grid of [-1, 0]
//!
//! [solver]
//! n_cells = 100
//! dt = 0.01
//! seed = 42
//! mc_paths = 1000
//! tolerance = 1e-10
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{DelayMeasure, NoiseField, Problem, SolverConfig};
use crate::segments::Segment;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub delay: DelaySection,
    pub solver: SolverSection,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dim_state: usize,
    pub dim_noise: usize,
    pub drift: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    pub x0: Vec<f64>,
    pub f0: Vec<f64>,
    pub horizon: f64,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Additive,
    Linear,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub base: Vec<f64>,
    #[serde(default)]
    pub head_gain: Vec<Vec<f64>>,
    #[serde(default)]
    pub tail_gain: Vec<Vec<f64>>,
    pub lipschitz: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    #[serde(default)]
    pub atoms: Option<AtomsSection>,
    #[serde(default)]
    pub density: Option<DensitySection>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AtomsSection {
    pub locations: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub n_cells: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub mc_paths: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_paths() -> usize {
    1000
}

fn default_tolerance() -> f64 {
    1e-10
}

fn matrix(what: &str, rows: usize, cols: usize, values: &[f64]) -> Result<DMatrix<f64>> {
    if values.len() != rows * cols {
        return Err(Error::Config(format!(
            "{what}: expected {rows}×{cols} = {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, values))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds the problem and solver settings; the problem's initial segment is
    /// put on the solver's `n_cells` grid.
    pub fn build(&self) -> Result<(Problem, SolverConfig)> {
        let pr = &self.problem;
        let (d, m) = (pr.dim_state, pr.dim_noise);
        if d == 0 || m == 0 {
            return Err(Error::Config(
                "dim_state and dim_noise must be positive".into(),
            ));
        }
        let s = &self.solver;
        if s.n_cells == 0 {
            return Err(Error::Config("n_cells must be positive".into()));
        }
        let drift = matrix("problem.drift", d, d, &pr.drift)?;
        if pr.x0.len() != d {
            return Err(Error::Config(format!(
                "problem.x0: expected {d} values, got {}",
                pr.x0.len()
            )));
        }
        let f0 = if pr.f0.len() == d {
            Segment::constant(s.n_cells, &pr.f0)
        } else if !pr.f0.is_empty() && pr.f0.len().is_multiple_of(d) {
            Segment::from_cells(d, pr.f0.clone())?
                .at_resolution(s.n_cells)
                .map_err(|e| Error::Config(format!("problem.f0: {e}")))?
        } else {
            return Err(Error::Config(format!(
                "problem.f0: expected {d} or a multiple of {d} values, got {}",
                pr.f0.len()
            )));
        };

        let mut delay = DelayMeasure::zero(d);
        if let Some(atoms) = &self.delay.atoms {
            if atoms.locations.len() != atoms.weights.len() {
                return Err(Error::Config(format!(
                    "delay.atoms: {} locations but {} weights",
                    atoms.locations.len(),
                    atoms.weights.len()
                )));
            }
            for (i, (&loc, w)) in atoms.locations.iter().zip(&atoms.weights).enumerate() {
                delay =
                    delay.with_atom(loc, matrix(&format!("delay.atoms.weights[{i}]"), d, d, w)?);
            }
        }
        if let Some(density) = &self.delay.density {
            let pieces = density
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| matrix(&format!("delay.density.values[{i}]"), d, d, v))
                .collect::<Result<Vec<_>>>()?;
            delay = delay.with_density(pieces);
        }

        let noise = match &self.noise {
            None => NoiseField::zero(d, m),
            Some(ns) => {
                let base = matrix("noise.base", d, m, &ns.base)?;
                let field = match ns.kind {
                    NoiseKind::Additive => {
                        if !ns.head_gain.is_empty() || !ns.tail_gain.is_empty() {
                            return Err(Error::Config("additive noise takes no gains".into()));
                        }
                        NoiseField::additive(base)
                    }
                    NoiseKind::Linear => {
                        let gains = |what: &str, list: &[Vec<f64>]| -> Result<Vec<DMatrix<f64>>> {
                            if !list.is_empty() && list.len() != m {
                                return Err(Error::Config(format!(
                                    "{what}: expected {m} matrices, got {}",
                                    list.len()
                                )));
                            }
                            list.iter()
                                .enumerate()
                                .map(|(j, v)| matrix(&format!("{what}[{j}]"), d, d, v))
                                .collect()
                        };
                        NoiseField::linear(
                            base,
                            gains("noise.head_gain", &ns.head_gain)?,
                            gains("noise.tail_gain", &ns.tail_gain)?,
                        )?
                    }
                };
                match ns.lipschitz {
                    Some(k) => field.with_lipschitz(k),
                    None => field,
                }
            }
        };

        let problem = Problem {
            dim_state: d,
            dim_noise: m,
            drift,
            delay,
            noise,
            p: pr.p,
            x0: DVector::from_vec(pr.x0.clone()),
            f0,
            horizon: pr.horizon,
        };
        let config = SolverConfig {
            n_cells: s.n_cells,
            dt: s.dt,
            seed: s.seed,
            mc_paths: s.mc_paths,
            tolerance: s.tolerance,
        };
        Ok((problem, config))
    }
}
