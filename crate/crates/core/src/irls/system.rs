//! The x-step: minimise the weighted surrogate over the scattering field with
//! the patch quadratics held fixed. Its normal equations are
//!
//! ```text
//! (W + γ₁ I + γ₂ (F−I)ᵀ(F−I) + γ₃ ∇ᵀ∇) x = W x̃ + γ₁ q
//! ```
//!
//! where `q` is the piecewise quadratic surface `U a_k` of every patch.

use rayon::prelude::*;

use super::cg::{pcg, CgReport};
use super::SolverConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::priors::{PatchGrid, QuadCoeffs};

/// Matrix-free operator for the x-step normal equations.
pub(crate) struct WlsOperator<'a> {
    rows: usize,
    cols: usize,
    weights: &'a [f64],
    mirror: &'a [Option<usize>],
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
}

impl<'a> WlsOperator<'a> {
    pub(crate) fn new(
        rows: usize,
        cols: usize,
        weights: &'a [f64],
        mirror: &'a [Option<usize>],
        cfg: &SolverConfig,
    ) -> Self {
        Self {
            rows,
            cols,
            weights,
            mirror,
            gamma1: cfg.gamma1,
            gamma2: cfg.gamma2,
            gamma3: cfg.gamma3,
        }
    }

    #[inline]
    fn paired(&self, r: usize) -> Option<usize> {
        self.mirror[r].filter(|&m| m != r)
    }

    pub(crate) fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (rows, cols) = (self.rows, self.cols);
        y.par_chunks_mut(cols).enumerate().for_each(|(r, out)| {
            let base = r * cols;
            let mirror = self.paired(r).map(|m| m * cols);
            for c in 0..cols {
                let i = base + c;
                let xi = x[i];
                let mut v = (self.weights[i] + self.gamma1) * xi;
                if let Some(mb) = mirror {
                    v += self.gamma2 * 2.0 * (xi - x[mb + c]);
                }
                let mut lap = 0.0;
                if c > 0 {
                    lap += xi - x[i - 1];
                }
                if c + 1 < cols {
                    lap += xi - x[i + 1];
                }
                if r > 0 {
                    lap += xi - x[i - cols];
                }
                if r + 1 < rows {
                    lap += xi - x[i + cols];
                }
                out[c] = v + self.gamma3 * lap;
            }
        });
    }

    pub(crate) fn diagonal(&self) -> Vec<f64> {
        let (rows, cols) = (self.rows, self.cols);
        let mut d = vec![0.0; rows * cols];
        d.par_chunks_mut(cols).enumerate().for_each(|(r, out)| {
            let sym = if self.paired(r).is_some() {
                2.0 * self.gamma2
            } else {
                0.0
            };
            let vert = (r > 0) as usize + (r + 1 < rows) as usize;
            for (c, o) in out.iter_mut().enumerate() {
                let deg = vert + (c > 0) as usize + (c + 1 < cols) as usize;
                *o = self.weights[r * cols + c] + self.gamma1 + sym + self.gamma3 * deg as f64;
            }
        });
        d
    }
}

/// Result of one x-step.
#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub x: Grid<f64>,
    pub report: CgReport,
}

pub(crate) fn default_linear_iter_cap(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).max(10)
}

/// Minimises the surrogate over `x` for fixed pixel weights and patch
/// quadratics. `init` seeds the iterative solver; `x_tilde` is used when it
/// is `None`.
pub fn solve_wls(
    x_tilde: &Grid<f64>,
    weights: &Grid<f64>,
    coeffs: &[QuadCoeffs],
    cfg: &SolverConfig,
    init: Option<&Grid<f64>>,
) -> Result<WlsSolution> {
    let (rows, cols) = x_tilde.shape();
    x_tilde.ensure_same_shape(weights)?;
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::invalid("weights must lie in [0, 1]"));
    }
    cfg.flip.validate(rows)?;
    let patches = PatchGrid::new(rows, cols, cfg.patch_rows, cfg.patch_cols)?;
    let mirror = cfg.flip.mirror_table(rows);
    let surface = patches.evaluate(coeffs)?;
    solve_with(x_tilde, weights, &surface, &mirror, cfg, init)
}

pub(crate) fn solve_with(
    x_tilde: &Grid<f64>,
    weights: &Grid<f64>,
    surface: &Grid<f64>,
    mirror: &[Option<usize>],
    cfg: &SolverConfig,
    init: Option<&Grid<f64>>,
) -> Result<WlsSolution> {
    let (rows, cols) = x_tilde.shape();
    let op = WlsOperator::new(rows, cols, weights.as_slice(), mirror, cfg);
    let rhs: Vec<f64> = weights
        .iter()
        .zip(x_tilde.iter())
        .zip(surface.iter())
        .map(|((w, xt), q)| w * xt + cfg.gamma1 * q)
        .collect();
    let mut x = match init {
        Some(g) => {
            x_tilde.ensure_same_shape(g)?;
            g.as_slice().to_vec()
        }
        None => x_tilde.as_slice().to_vec(),
    };
    let cap = cfg
        .max_linear_iters
        .unwrap_or_else(|| default_linear_iter_cap(rows * cols));
    let report = pcg(
        |v, out| op.apply(v, out),
        &op.diagonal(),
        &rhs,
        &mut x,
        cfg.linear_solver_tol,
        cap,
    )?;
    Ok(WlsSolution {
        x: Grid::from_vec(rows, cols, x)?,
        report,
    })
}
