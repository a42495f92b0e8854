//! Coarse-to-fine robust estimation of the scattering field.
//!
//! The observed image `x̃` is modelled as a smooth scattering field plus
//! outliers (pixels that also carry a direct reflection). The field is
//! estimated by minimising a Tukey-biweight data term together with three
//! quadratic priors, using iteratively reweighted least squares:
//!
//! * coarse level: one robust residual per patch (`‖x_k − x̃_k‖`), giving
//!   patch-constant weights;
//! * fine level: one robust residual per pixel, initialised from the coarse
//!   result.
//!
//! Each outer iteration solves the weighted surrogate for `x`, refits the
//! patch quadratics, then recomputes the weights. The robust scale is the MAD
//! of the first iteration's residuals and stays fixed afterwards. Low final
//! weights mark the object region.

mod cg;
mod system;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use cg::{pcg, CgReport};
pub use system::{solve_wls, WlsSolution};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::priors::{gradient_penalty, symmetry_penalty, FlipOperator, PatchGrid, QuadCoeffs};
use crate::recon::ObjectMask;

/// Consistency constant of the MAD for Gaussian residuals.
pub const MAD_CONSTANT: f64 = 0.6745;

/// Residuals below this magnitude get weight 1 (the limit of `ρ'(r)/r`).
const WEIGHT_GUARD: f64 = 1e-12;

pub const PROFILE_AMPLITUDE_KINECT16: &str = "amplitude-kinect16";
pub const PROFILE_PHASE_KINECT16: &str = "phase-kinect16";

/// Hyperparameters of the estimator. The `gamma*` values are the weights of
/// the quadratic-patch, symmetry and smoothness priors in the weighted
/// surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub c_coarse: f64,
    pub c_fine: f64,
    pub patch_rows: usize,
    pub patch_cols: usize,
    #[serde(flatten)]
    pub flip: FlipOperator,
    pub max_outer_iters: usize,
    pub convergence_tol: f64,
    pub linear_solver_tol: f64,
    /// Defaults to `10·√N` when absent.
    #[serde(default)]
    pub max_linear_iters: Option<usize>,
    pub mask_threshold: f64,
    /// Fit the patch quadratics without the robust weights.
    #[serde(default = "default_true")]
    pub plain_patch_fit: bool,
    /// Clamp the final field to be non-negative (amplitude images).
    #[serde(default)]
    pub clamp_nonnegative: bool,
}

fn default_true() -> bool {
    true
}

impl SolverConfig {
    /// Amplitude images from a 424x512 sensor at 16 MHz.
    pub fn amplitude_kinect16() -> Self {
        Self {
            gamma1: 0.1,
            gamma2: 0.1,
            gamma3: 10.0,
            c_coarse: 4.0,
            c_fine: 7.0,
            patch_rows: 4,
            patch_cols: 4,
            flip: FlipOperator::new(200, 24),
            max_outer_iters: 50,
            convergence_tol: 1e-4,
            linear_solver_tol: 1e-6,
            max_linear_iters: None,
            mask_threshold: 0.5,
            plain_patch_fit: true,
            clamp_nonnegative: true,
        }
    }

    /// Phase images from a 424x512 sensor at 16 MHz.
    pub fn phase_kinect16() -> Self {
        Self {
            gamma1: 0.01,
            gamma2: 0.1,
            gamma3: 50.0,
            c_coarse: 2.0,
            c_fine: 3.0,
            clamp_nonnegative: false,
            ..Self::amplitude_kinect16()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            PROFILE_AMPLITUDE_KINECT16 => Ok(Self::amplitude_kinect16()),
            PROFILE_PHASE_KINECT16 => Ok(Self::phase_kinect16()),
            other => Err(Error::invalid(format!(
                "unknown profile {other:?} (expected {PROFILE_AMPLITUDE_KINECT16} or {PROFILE_PHASE_KINECT16})"
            ))),
        }
    }

    /// Parses a JSON document. An optional `"profile"` key selects the base
    /// profile (amplitude by default); every other key overrides a field.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        let Value::Object(mut overrides) = doc else {
            return Err(Error::Format("solver config must be a JSON object".into()));
        };
        let base = match overrides.remove("profile") {
            Some(Value::String(name)) => Self::profile(&name)?,
            Some(_) => return Err(Error::Format("\"profile\" must be a string".into())),
            None => Self::amplitude_kinect16(),
        };
        Self::with_overrides(base, overrides)
    }

    /// Applies field overrides given as a JSON object.
    pub fn with_overrides(base: Self, overrides: serde_json::Map<String, Value>) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(&base)? else {
            unreachable!("config serialises to an object");
        };
        merged.extend(overrides);
        let cfg: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::invalid(format!("solver setting: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be non-negative, got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        nonneg("gamma1", self.gamma1)?;
        nonneg("gamma2", self.gamma2)?;
        nonneg("gamma3", self.gamma3)?;
        positive("c_coarse", self.c_coarse)?;
        positive("c_fine", self.c_fine)?;
        positive("convergence_tol", self.convergence_tol)?;
        positive("linear_solver_tol", self.linear_solver_tol)?;
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be at least 1"));
        }
        if self.max_linear_iters == Some(0) {
            return Err(Error::invalid("max_linear_iters must be at least 1"));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::invalid("mask_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Tukey's biweight loss.
pub fn tukey_rho(r: f64, c: f64) -> f64 {
    let c2 = c * c;
    if r.abs() >= c {
        c2 / 6.0
    } else {
        let t = 1.0 - (r / c).powi(2);
        c2 / 6.0 * (1.0 - t * t * t)
    }
}

/// IRLS weight `ρ'(r)/r` of Tukey's biweight, in `[0, 1]`.
pub fn tukey_weight(r: f64, c: f64) -> f64 {
    if r.abs() < WEIGHT_GUARD {
        return 1.0;
    }
    if r.abs() >= c {
        return 0.0;
    }
    let t = 1.0 - (r / c).powi(2);
    t * t
}

/// Median of `|r_i|` divided by 0.6745, never below `floor`.
pub fn mad_scale(residuals: &[f64], floor: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::invalid("MAD of an empty residual set"));
    }
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    if abs.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("residuals contain NaN"));
    }
    abs.sort_by(|a, b| a.total_cmp(b));
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    Ok((median / MAD_CONSTANT).max(floor))
}

/// Scale floor used when residuals are degenerate.
pub fn scale_floor(x_tilde: &Grid<f64>) -> f64 {
    1e-6 * (x_tilde.max_abs() + 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    Pixel,
}

/// Estimated scattering component of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringField {
    pub values: Grid<f64>,
}

/// IRLS weights in `[0, 1]`; patch-constant at the coarse level.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub weights: Grid<f64>,
    pub level: Level,
}

/// Solver state after a level has finished.
#[derive(Debug, Clone)]
pub struct IrlsState {
    pub x: Grid<f64>,
    pub coeffs: Vec<QuadCoeffs>,
    pub weights: WeightField,
    pub sigma: f64,
    /// True objective after every outer iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Conjugate-gradient iterations of every x-step.
    pub linear_iterations: Vec<usize>,
}

/// What one outer iteration did; passed to observers.
#[derive(Debug)]
pub struct IterationTrace<'a> {
    pub level: Level,
    pub iteration: usize,
    /// Pixel weights and patch quadratics the x-step was solved with.
    pub weights_in: &'a Grid<f64>,
    pub coeffs_in: &'a [QuadCoeffs],
    pub x: &'a Grid<f64>,
    pub report: CgReport,
    pub objective: f64,
}

/// Robust objective with the Tukey loss:
/// `Σ ρ(e/σ) + (γ₁ Σ‖U a_k − x_k‖² + γ₂‖Fx − x‖² + γ₃‖∇x‖²) / (2σ²)`
/// where `e` are pixel residuals (`Level::Pixel`) or patch residual norms
/// (`Level::Patch`).
pub fn objective(
    level: Level,
    x_tilde: &Grid<f64>,
    x: &Grid<f64>,
    coeffs: &[QuadCoeffs],
    sigma: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let (rows, cols) = x_tilde.shape();
    let patches = PatchGrid::new(rows, cols, cfg.patch_rows, cfg.patch_cols)?;
    Ok(Problem::new(x_tilde, cfg, patches)?.objective(level, x, coeffs, sigma))
}

struct Problem<'a> {
    x_tilde: &'a Grid<f64>,
    cfg: &'a SolverConfig,
    patches: PatchGrid,
    mirror: Vec<Option<usize>>,
    floor: f64,
}

impl<'a> Problem<'a> {
    fn new(x_tilde: &'a Grid<f64>, cfg: &'a SolverConfig, patches: PatchGrid) -> Result<Self> {
        cfg.validate()?;
        cfg.flip.validate(x_tilde.rows())?;
        if !x_tilde.is_finite() {
            return Err(Error::invalid("input image contains non-finite values"));
        }
        Ok(Self {
            x_tilde,
            cfg,
            mirror: cfg.flip.mirror_table(x_tilde.rows()),
            floor: scale_floor(x_tilde),
            patches,
        })
    }

    fn c(&self, level: Level) -> f64 {
        match level {
            Level::Patch => self.cfg.c_coarse,
            Level::Pixel => self.cfg.c_fine,
        }
    }

    fn pixel_residuals(&self, x: &Grid<f64>) -> Vec<f64> {
        x.iter().zip(self.x_tilde.iter()).map(|(a, b)| a - b).collect()
    }

    fn patch_residuals(&self, x: &Grid<f64>) -> Vec<f64> {
        self.patches
            .bases()
            .iter()
            .map(|b| {
                b.pixels()
                    .map(|(r, c)| {
                        let d = x[(r, c)] - self.x_tilde[(r, c)];
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    fn residuals(&self, level: Level, x: &Grid<f64>) -> Vec<f64> {
        match level {
            Level::Patch => self.patch_residuals(x),
            Level::Pixel => self.pixel_residuals(x),
        }
    }

    fn prior_energy(&self, x: &Grid<f64>, coeffs: &[QuadCoeffs]) -> f64 {
        let cfg = self.cfg;
        let quad = self
            .patches
            .quadratic_penalty(x, coeffs)
            .expect("shapes fixed by the problem");
        cfg.gamma1 * quad + cfg.gamma2 * symmetry_penalty(x, &cfg.flip) + cfg.gamma3 * gradient_penalty(x)
    }

    fn objective(&self, level: Level, x: &Grid<f64>, coeffs: &[QuadCoeffs], sigma: f64) -> f64 {
        let c = self.c(level);
        let data: f64 = self
            .residuals(level, x)
            .iter()
            .map(|e| tukey_rho(e / sigma, c))
            .sum();
        data + self.prior_energy(x, coeffs) / (2.0 * sigma * sigma)
    }

    fn pixel_weights(&self, level: Level, residuals: &[f64], sigma: f64) -> Grid<f64> {
        let c = self.c(level);
        let (rows, cols) = self.x_tilde.shape();
        match level {
            Level::Pixel => Grid::from_vec(
                rows,
                cols,
                residuals.iter().map(|e| tukey_weight(e / sigma, c)).collect(),
            )
            .expect("one residual per pixel"),
            Level::Patch => {
                let wk: Vec<f64> = residuals.iter().map(|e| tukey_weight(e / sigma, c)).collect();
                let mut w = Grid::zeros(rows, cols);
                for (b, wv) in self.patches.bases().iter().zip(&wk) {
                    for (r, cc) in b.pixels() {
                        w[(r, cc)] = *wv;
                    }
                }
                w
            }
        }
    }

    fn fit(&self, x: &Grid<f64>, weights: &Grid<f64>) -> Result<Vec<QuadCoeffs>> {
        if self.cfg.plain_patch_fit {
            return self.patches.fit_all(x, None);
        }
        // a patch whose weights vanish falls back to the plain fit
        let weighted = self.patches.fit_all(x, Some(weights));
        match weighted {
            Ok(a) => Ok(a),
            Err(Error::SingularFit { .. }) => {
                let plain = self.patches.fit_all(x, None)?;
                Ok((0..self.patches.len())
                    .map(|k| {
                        let values = self.patches.extract(x, k);
                        let w = self.patches.extract(weights, k);
                        crate::priors::fit_patch_quadratic(&values, self.patches.basis(k), Some(&w))
                            .unwrap_or(plain[k])
                    })
                    .collect())
            }
            Err(e) => Err(e),
        }
    }

    fn run(
        &self,
        level: Level,
        mut x: Grid<f64>,
        mut coeffs: Vec<QuadCoeffs>,
        mut weights: Grid<f64>,
        observer: &mut dyn FnMut(&IterationTrace),
    ) -> Result<IrlsState> {
        let cfg = self.cfg;
        let mut sigma: Option<f64> = None;
        let mut history = Vec::new();
        let mut linear_iterations = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let surface_of = |a: &[QuadCoeffs]| self.patches.evaluate(a);

        for it in 1..=cfg.max_outer_iters {
            iterations = it;
            let surface = surface_of(&coeffs)?;
            let sol = system::solve_with(self.x_tilde, &weights, &surface, &self.mirror, cfg, Some(&x))?;
            linear_iterations.push(sol.report.iterations);
            let new_coeffs = self.fit(&sol.x, &weights)?;
            let residuals = self.residuals(level, &sol.x);
            let s = match sigma {
                Some(s) => s,
                None => {
                    let s = mad_scale(&residuals, self.floor)?;
                    sigma = Some(s);
                    s
                }
            };
            let new_weights = self.pixel_weights(level, &residuals, s);
            let obj = self.objective(level, &sol.x, &new_coeffs, s);
            observer(&IterationTrace {
                level,
                iteration: it,
                weights_in: &weights,
                coeffs_in: &coeffs,
                x: &sol.x,
                report: sol.report,
                objective: obj,
            });
            x = sol.x;
            coeffs = new_coeffs;
            weights = new_weights;
            let prev = history.last().copied();
            history.push(obj);
            if let Some(p) = prev {
                let denom = p.abs().max(f64::MIN_POSITIVE);
                if ((p - obj) / denom).abs() < cfg.convergence_tol {
                    converged = true;
                    break;
                }
            }
        }

        Ok(IrlsState {
            x,
            coeffs,
            weights: WeightField { weights, level },
            sigma: sigma.expect("at least one iteration runs"),
            objective_history: history,
            iterations,
            converged,
            linear_iterations,
        })
    }
}

fn problem<'a>(x_tilde: &'a Grid<f64>, cfg: &'a SolverConfig) -> Result<Problem<'a>> {
    let (rows, cols) = x_tilde.shape();
    let patches = PatchGrid::new(rows, cols, cfg.patch_rows, cfg.patch_cols)?;
    Problem::new(x_tilde, cfg, patches)
}

/// Coarse level: patch-wise robust residuals, starting from unit weights and
/// unweighted patch fits of the observation.
pub fn run_coarse(x_tilde: &Grid<f64>, cfg: &SolverConfig) -> Result<IrlsState> {
    run_coarse_observed(x_tilde, cfg, &mut |_| {})
}

pub fn run_coarse_observed(
    x_tilde: &Grid<f64>,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationTrace),
) -> Result<IrlsState> {
    let p = problem(x_tilde, cfg)?;
    let coeffs = p.patches.fit_all(x_tilde, None)?;
    let (rows, cols) = x_tilde.shape();
    p.run(
        Level::Patch,
        x_tilde.clone(),
        coeffs,
        Grid::filled(rows, cols, 1.0),
        observer,
    )
}

/// Fine level: pixel-wise robust residuals, initialised with the weights,
/// field and quadratics of a coarse run on the same image.
pub fn run_fine(x_tilde: &Grid<f64>, init: &IrlsState, cfg: &SolverConfig) -> Result<IrlsState> {
    run_fine_observed(x_tilde, init, cfg, &mut |_| {})
}

pub fn run_fine_observed(
    x_tilde: &Grid<f64>,
    init: &IrlsState,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&IterationTrace),
) -> Result<IrlsState> {
    let p = problem(x_tilde, cfg)?;
    x_tilde.ensure_same_shape(&init.x)?;
    if init.coeffs.len() != p.patches.len() {
        return Err(Error::invalid("initial state has a different patch layout"));
    }
    p.run(
        Level::Pixel,
        init.x.clone(),
        init.coeffs.clone(),
        init.weights.weights.clone(),
        observer,
    )
}

/// Object pixels are those whose weight falls below `threshold`.
pub fn binarize_weights(w: &WeightField, threshold: f64) -> ObjectMask {
    ObjectMask {
        mask: w.weights.map(|&v| v < threshold),
    }
}

/// Result of running both levels on one image.
#[derive(Debug, Clone)]
pub struct DomainEstimate {
    pub coarse: IrlsState,
    pub fine: IrlsState,
    pub scattering: ScatteringField,
    pub weights: WeightField,
    pub mask: ObjectMask,
}

/// Full coarse-to-fine estimate for one domain (amplitude or phase).
pub fn estimate_scattering(x_tilde: &Grid<f64>, cfg: &SolverConfig) -> Result<DomainEstimate> {
    let coarse = run_coarse(x_tilde, cfg)?;
    let fine = run_fine(x_tilde, &coarse, cfg)?;
    let mut values = fine.x.clone();
    if cfg.clamp_nonnegative {
        values.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let weights = fine.weights.clone();
    let mask = binarize_weights(&weights, cfg.mask_threshold);
    Ok(DomainEstimate {
        coarse,
        fine,
        scattering: ScatteringField { values },
        weights,
        mask,
    })
}
