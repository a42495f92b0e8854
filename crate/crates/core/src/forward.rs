//! Single-scattering forward model and synthetic foggy scenes.
//!
//! The backscatter phasor at depth `z` is
//!
//! ```text
//! α_s(z) e^{jφ_s(z)} = ∫_{z0}^{z} β P(π) e^{−2βt} e^{j 4πf t / c} / t² dt
//! ```
//!
//! and the direct return of a surface with reflectance `I` at depth `z` is
//! `(I / z²) e^{−2βz} e^{j 4πf z / c}`. Synthetic images add a direct
//! component per object pixel to a per-pixel scattering field that does not
//! depend on depth.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::irls::ScatteringField;
use crate::phasor::{polar, CameraModel, DepthImage, PhasorImage};
use crate::recon::ObjectMask;

/// Integration stops here regardless of the requested depth.
pub const MAX_INTEGRATION_DEPTH_MM: f64 = 20_000.0;

/// Default step of the quadrature in `ln z`.
pub const DEFAULT_LOG_STEP: f64 = 1e-3;

/// Henyey-Greenstein phase function, normalised over the sphere.
pub fn hg_phase(theta: f64, g: f64) -> f64 {
    let g2 = g * g;
    (1.0 - g2) / (4.0 * PI * (1.0 + g2 - 2.0 * g * theta.cos()).powf(1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumParams {
    /// Scattering coefficient in 1/mm.
    pub beta: f64,
    /// HG anisotropy.
    pub g: f64,
    /// Start of the scattering integral, mm.
    pub z0: f64,
    /// Depth past which backscatter is treated as saturated, mm.
    #[serde(default = "default_z_saturate")]
    pub z_saturate: f64,
}

fn default_z_saturate() -> f64 {
    1000.0
}

impl MediumParams {
    /// Fog as used for the measurement-range study: β = 3.2e-4 /mm, g = 0.9,
    /// z0 = 10 mm, saturation at 1 m.
    pub fn fog() -> Self {
        Self {
            beta: 3.2e-4,
            g: 0.9,
            z0: 10.0,
            z_saturate: 1000.0,
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.g > -1.0 && self.g < 1.0) {
            return Err(Error::invalid(format!("g must lie in (-1, 1), got {}", self.g)));
        }
        if !(self.z0.is_finite() && self.z0 > 0.0) {
            return Err(Error::invalid(format!("z0 must be > 0, got {}", self.z0)));
        }
        if !(self.z_saturate.is_finite() && self.z_saturate > self.z0) {
            return Err(Error::invalid("z_saturate must exceed z0"));
        }
        Ok(())
    }
}

/// Backscatter phasor accumulated between `z0` and `z`.
pub fn scattering_phasor(z: f64, medium: &MediumParams, cam: &CameraModel) -> Result<Complex<f64>> {
    scattering_phasor_with_step(z, medium, cam, DEFAULT_LOG_STEP)
}

/// As [`scattering_phasor`] with an explicit quadrature step in `ln z`.
///
/// The `1/t²` factor varies by orders of magnitude near `z0`, so the
/// integral is taken over `s = ln t`, where the integrand
/// `β P(π) e^{−2βt} e^{jkt} / t` is smooth, with composite Simpson.
pub fn scattering_phasor_with_step(
    z: f64,
    medium: &MediumParams,
    cam: &CameraModel,
    log_step: f64,
) -> Result<Complex<f64>> {
    medium.validate()?;
    if !(z.is_finite() && z >= medium.z0) {
        return Err(Error::OutOfRange(format!(
            "depth {z} mm is before the integration start {} mm",
            medium.z0
        )));
    }
    if !(log_step > 0.0) {
        return Err(Error::invalid("quadrature step must be positive"));
    }
    let upper = z.min(MAX_INTEGRATION_DEPTH_MM);
    if medium.beta == 0.0 || upper <= medium.z0 {
        return Ok(Complex::new(0.0, 0.0));
    }
    Ok(log_simpson(medium.z0, upper, medium, cam, log_step))
}

/// Backscatter phasor at every depth of an increasing grid, accumulated
/// interval by interval so the cost does not grow with the number of
/// samples.
pub fn scattering_curve(zs: &[f64], medium: &MediumParams, cam: &CameraModel) -> Result<Vec<Complex<f64>>> {
    medium.validate()?;
    if zs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("depth grid must be strictly increasing"));
    }
    if let Some(&z) = zs.first() {
        if !(z.is_finite() && z >= medium.z0) {
            return Err(Error::OutOfRange(format!(
                "depth {z} mm is before the integration start {} mm",
                medium.z0
            )));
        }
    }
    let mut out = Vec::with_capacity(zs.len());
    let mut acc = Complex::new(0.0, 0.0);
    let mut from = medium.z0;
    for &z in zs {
        let to = z.min(MAX_INTEGRATION_DEPTH_MM);
        if to > from {
            acc += log_simpson(from, to, medium, cam, DEFAULT_LOG_STEP);
            from = to;
        }
        out.push(acc);
    }
    Ok(out)
}

fn log_simpson(a: f64, b: f64, medium: &MediumParams, cam: &CameraModel, log_step: f64) -> Complex<f64> {
    let (s0, s1) = (a.ln(), b.ln());
    let n = ((((s1 - s0) / log_step).ceil() as usize).max(2) + 1) & !1;
    let h = (s1 - s0) / n as f64;
    let amp = medium.beta * hg_phase(PI, medium.g);
    let k = cam.wavenumber_per_mm();
    let two_beta = 2.0 * medium.beta;
    let f = |s: f64| {
        let t = s.exp();
        Complex::from_polar(amp * (-two_beta * t).exp() / t, k * t)
    };
    let mut sum = f(s0) + f(s1);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += f(s0 + i as f64 * h) * w;
    }
    sum * (h / 3.0)
}

/// Direct return from a surface of reflectance `reflectance` at depth `z`.
pub fn direct_phasor(
    z: f64,
    reflectance: f64,
    medium: &MediumParams,
    cam: &CameraModel,
) -> Result<Complex<f64>> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::OutOfRange(format!("depth {z} mm must be positive")));
    }
    if !(reflectance.is_finite() && reflectance >= 0.0) {
        return Err(Error::invalid("reflectance must be non-negative"));
    }
    let amp = reflectance / (z * z) * (-2.0 * medium.beta * z).exp();
    Ok(Complex::from_polar(amp, cam.wavenumber_per_mm() * z))
}

/// One calibration pixel: amplitude without fog, direct amplitude with fog
/// and distance to the calibration target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub clean_amplitude: f64,
    pub foggy_direct_amplitude: f64,
    pub distance_mm: f64,
}

/// Scattering coefficient as the mean of per-pixel log-attenuation
/// estimates `(ln α̂ − ln α_d) / (2d)`.
pub fn estimate_beta(samples: &[CalibrationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    let mut sum = 0.0;
    for s in samples {
        if !(s.clean_amplitude > 0.0 && s.foggy_direct_amplitude > 0.0) {
            return Err(Error::invalid("calibration amplitudes must be positive"));
        }
        if !(s.distance_mm > 0.0 && s.distance_mm.is_finite()) {
            return Err(Error::invalid("calibration distances must be positive"));
        }
        sum += (s.clean_amplitude.ln() - s.foggy_direct_amplitude.ln()) / (2.0 * s.distance_mm);
    }
    Ok(sum / samples.len() as f64)
}

/// Spatial modulation applied to the saturated scattering phasor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Uniform,
    /// `1 + row_coeff·((r − center_row)/rows)² + col_coeff·((c − center_col)/cols)²`.
    /// Exactly quadratic, so it satisfies the patch prior everywhere.
    Quadratic {
        center_row: f64,
        center_col: f64,
        row_coeff: f64,
        col_coeff: f64,
    },
    /// `floor + (1 − floor)·exp(−½((r−r0)/σr)² − ½((c−c0)/σc)²)`. Only
    /// approximately quadratic per patch.
    Gaussian {
        center_row: f64,
        center_col: f64,
        sigma_rows: f64,
        sigma_cols: f64,
        floor: f64,
    },
}

impl Profile {
    /// Radial amplitude falloff centred on `flip_row`.
    pub fn default_amplitude(rows: usize, cols: usize, flip_row: usize) -> Self {
        let _ = rows;
        Profile::Quadratic {
            center_row: flip_row as f64,
            center_col: (cols as f64 - 1.0) / 2.0,
            row_coeff: -0.6,
            col_coeff: -0.8,
        }
    }

    /// Phase that grows away from `flip_row`, constant along rows.
    pub fn default_phase(rows: usize, cols: usize, flip_row: usize) -> Self {
        let _ = (rows, cols);
        Profile::Quadratic {
            center_row: flip_row as f64,
            center_col: 0.0,
            row_coeff: 0.8,
            col_coeff: 0.0,
        }
    }

    pub fn value(&self, r: usize, c: usize, rows: usize, cols: usize) -> f64 {
        let (r, c) = (r as f64, c as f64);
        match *self {
            Profile::Uniform => 1.0,
            Profile::Quadratic {
                center_row,
                center_col,
                row_coeff,
                col_coeff,
            } => {
                let dr = (r - center_row) / rows as f64;
                let dc = (c - center_col) / cols as f64;
                1.0 + row_coeff * dr * dr + col_coeff * dc * dc
            }
            Profile::Gaussian {
                center_row,
                center_col,
                sigma_rows,
                sigma_cols,
                floor,
            } => {
                let dr = (r - center_row) / sigma_rows;
                let dc = (c - center_col) / sigma_cols;
                floor + (1.0 - floor) * (-0.5 * (dr * dr + dc * dc)).exp()
            }
        }
    }

    pub fn render(&self, rows: usize, cols: usize) -> Grid<f64> {
        Grid::from_fn(rows, cols, |r, c| self.value(r, c, rows, cols))
    }
}

/// Where the per-pixel scattering field of a synthetic scene comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScatteringSource {
    /// Saturated analytic phasor at `z_saturate`, modulated by profiles.
    Analytic {
        amplitude_profile: Profile,
        phase_profile: Profile,
    },
    /// A supplied field, e.g. measured against a black wall.
    Measured {
        amplitude: Grid<f64>,
        phase: Grid<f64>,
    },
}

/// A synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub cam: CameraModel,
    pub medium: MediumParams,
    /// Object depths in mm; invalid pixels are background.
    pub depth: DepthImage,
    /// Albedo times shading.
    pub reflectance: Grid<f64>,
    /// Object labels (0 = background).
    pub labels: Grid<u32>,
    pub names: BTreeMap<u32, String>,
    pub scattering: ScatteringSource,
    /// Sensor units per model unit; applies to both components.
    pub amplitude_gain: f64,
}

/// Default gain: a unit-reflectance surface at 1 m reads 1000 units.
pub const DEFAULT_AMPLITUDE_GAIN: f64 = 1e9;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.cam.validate()?;
        self.medium.validate()?;
        let shape = (self.cam.rows, self.cam.cols);
        let check = |name: &str, s: (usize, usize)| {
            if s != shape {
                Err(Error::invalid(format!(
                    "{name} is {}x{}, camera is {}x{}",
                    s.0, s.1, shape.0, shape.1
                )))
            } else {
                Ok(())
            }
        };
        check("depth map", self.depth.shape())?;
        check("reflectance map", self.reflectance.shape())?;
        check("label map", self.labels.shape())?;
        if let ScatteringSource::Measured { amplitude, phase } = &self.scattering {
            check("scattering amplitude", amplitude.shape())?;
            check("scattering phase", phase.shape())?;
            if amplitude.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(Error::invalid("scattering amplitude must be non-negative"));
            }
            if !phase.is_finite() {
                return Err(Error::invalid("scattering phase must be finite"));
            }
        }
        if !(self.amplitude_gain.is_finite() && self.amplitude_gain > 0.0) {
            return Err(Error::invalid("amplitude gain must be positive"));
        }
        let range = self.cam.unambiguous_range_mm();
        for i in 0..self.depth.depth.len() {
            if !self.depth.valid.as_slice()[i] {
                continue;
            }
            let z = self.depth.depth.as_slice()[i];
            if !(z > self.medium.z0 && z < range) {
                return Err(Error::invalid(format!(
                    "depth {z} mm outside ({}, {range}) mm",
                    self.medium.z0
                )));
            }
            let refl = self.reflectance.as_slice()[i];
            if !(refl.is_finite() && refl >= 0.0) {
                return Err(Error::invalid("reflectance must be non-negative"));
            }
        }
        Ok(())
    }

    /// Per-pixel scattering amplitude and phase (sensor units, radians).
    pub fn scattering_field(&self) -> Result<(Grid<f64>, Grid<f64>)> {
        let (rows, cols) = (self.cam.rows, self.cam.cols);
        match &self.scattering {
            ScatteringSource::Measured { amplitude, phase } => Ok((amplitude.clone(), phase.clone())),
            ScatteringSource::Analytic {
                amplitude_profile,
                phase_profile,
            } => {
                let s = scattering_phasor(self.medium.z_saturate, &self.medium, &self.cam)?;
                let (amp, phase) = (s.norm() * self.amplitude_gain, s.arg());
                let a = amplitude_profile.render(rows, cols).map(|p| amp * p);
                let p = phase_profile.render(rows, cols).map(|p| phase * p);
                if a.iter().any(|v| *v < 0.0) {
                    return Err(Error::invalid("amplitude profile goes negative"));
                }
                Ok((a, p))
            }
        }
    }
}

/// Additive Gaussian noise on the real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoise {
    pub sigma: f64,
    pub seed: u64,
}

/// Synthetic observation with its ground truth.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub foggy: PhasorImage,
    pub direct: PhasorImage,
    pub clean_depth: DepthImage,
    pub scattering_amplitude: ScatteringField,
    pub scattering_phase: ScatteringField,
    pub mask: ObjectMask,
    pub labels: Grid<u32>,
}

/// Adds the attenuated direct return of every object pixel to the scattering
/// field. Background pixels carry scattering only.
pub fn synthesize(scene: &SceneSpec, noise: Option<SensorNoise>) -> Result<Synthesis> {
    scene.validate()?;
    let (rows, cols) = (scene.cam.rows, scene.cam.cols);
    let (s_amp, s_phase) = scene.scattering_field()?;
    let mut rng = noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let normal = match noise {
        Some(n) if n.sigma > 0.0 => Some(
            Normal::new(0.0, n.sigma).map_err(|e| Error::invalid(format!("noise sigma: {e}")))?,
        ),
        Some(n) if n.sigma < 0.0 => return Err(Error::invalid("noise sigma must be >= 0")),
        _ => None,
    };

    let n = rows * cols;
    let mut total = Vec::with_capacity(n);
    let mut direct = Vec::with_capacity(n);
    for i in 0..n {
        let d = if scene.depth.valid.as_slice()[i] {
            direct_phasor(
                scene.depth.depth.as_slice()[i],
                scene.reflectance.as_slice()[i],
                &scene.medium,
                &scene.cam,
            )? * scene.amplitude_gain
        } else {
            Complex::new(0.0, 0.0)
        };
        let mut t = d + polar(s_amp.as_slice()[i], s_phase.as_slice()[i]);
        if let (Some(rng), Some(dist)) = (rng.as_mut(), normal.as_ref()) {
            t += Complex::new(dist.sample(rng), dist.sample(rng));
        }
        direct.push(d);
        total.push(t);
    }
    let foggy = PhasorImage::from_complex(&Grid::from_vec(rows, cols, total)?);
    let direct = PhasorImage::from_complex(&Grid::from_vec(rows, cols, direct)?);
    Ok(Synthesis {
        foggy,
        direct,
        clean_depth: scene.depth.clone(),
        scattering_amplitude: ScatteringField { values: s_amp },
        scattering_phase: ScatteringField { values: s_phase },
        mask: ObjectMask {
            mask: scene.depth.valid.clone(),
        },
        labels: scene.labels.clone(),
    })
}

/// Object shapes for [`SceneBuilder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// Rows `[top, bottom)`, columns `[left, right)`.
    Rect {
        top: usize,
        left: usize,
        bottom: usize,
        right: usize,
    },
    Disc {
        center_row: f64,
        center_col: f64,
        radius: f64,
    },
}

impl Shape {
    /// Row at which an object's depth equals its `depth_mm`.
    fn reference_row(&self) -> f64 {
        match *self {
            Shape::Rect { top, .. } => top as f64,
            Shape::Disc { center_row, .. } => center_row,
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Shape::Rect {
                top,
                left,
                bottom,
                right,
            } => (top..bottom).contains(&r) && (left..right).contains(&c),
            Shape::Disc {
                center_row,
                center_col,
                radius,
            } => {
                let dr = r as f64 - center_row;
                let dc = c as f64 - center_col;
                dr * dr + dc * dc <= radius * radius
            }
        }
    }
}

/// A planar object. Depth is `depth_mm` at the shape's top row (centre row
/// for discs) and changes by `depth_slope_mm_per_row` per row below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    #[serde(flatten)]
    pub shape: Shape,
    pub depth_mm: f64,
    #[serde(default)]
    pub depth_slope_mm_per_row: f64,
    #[serde(default = "default_reflectance")]
    pub reflectance: f64,
}

fn default_reflectance() -> f64 {
    1.0
}

/// Paints objects onto an empty (all-background) scene. Later objects
/// occlude earlier ones; labels follow insertion order starting at 1.
#[derive(Debug, Clone)]
pub struct SceneBuilder {
    cam: CameraModel,
    medium: MediumParams,
    objects: Vec<SceneObject>,
    scattering: Option<ScatteringSource>,
    gain: f64,
    flip_row: usize,
    base: Option<BaseLayer>,
}

#[derive(Debug, Clone)]
struct BaseLayer {
    depth: DepthImage,
    reflectance: Grid<f64>,
    labels: Grid<u32>,
    names: BTreeMap<u32, String>,
}

impl SceneBuilder {
    pub fn new(cam: CameraModel, medium: MediumParams) -> Self {
        Self {
            cam,
            medium,
            objects: Vec::new(),
            scattering: None,
            gain: DEFAULT_AMPLITUDE_GAIN,
            flip_row: cam.rows * 200 / 424,
            base: None,
        }
    }

    /// Starts from existing depth, reflectance and label maps instead of an
    /// empty scene. Objects added later get labels above the largest one
    /// already present.
    pub fn base(
        mut self,
        depth: DepthImage,
        reflectance: Grid<f64>,
        labels: Grid<u32>,
        names: BTreeMap<u32, String>,
    ) -> Self {
        self.base = Some(BaseLayer {
            depth,
            reflectance,
            labels,
            names,
        });
        self
    }

    /// Row about which the default scattering profiles are symmetric.
    pub fn flip_row(mut self, row: usize) -> Self {
        self.flip_row = row;
        self
    }

    pub fn object(mut self, obj: SceneObject) -> Self {
        self.objects.push(obj);
        self
    }

    pub fn rect(self, name: &str, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, depth_mm: f64) -> Self {
        self.object(SceneObject {
            name: name.to_string(),
            shape: Shape::Rect {
                top: rows.start,
                left: cols.start,
                bottom: rows.end,
                right: cols.end,
            },
            depth_mm,
            depth_slope_mm_per_row: 0.0,
            reflectance: 1.0,
        })
    }

    pub fn disc(self, name: &str, center: (f64, f64), radius: f64, depth_mm: f64) -> Self {
        self.object(SceneObject {
            name: name.to_string(),
            shape: Shape::Disc {
                center_row: center.0,
                center_col: center.1,
                radius,
            },
            depth_mm,
            depth_slope_mm_per_row: 0.0,
            reflectance: 1.0,
        })
    }

    pub fn scattering(mut self, source: ScatteringSource) -> Self {
        self.scattering = Some(source);
        self
    }

    pub fn gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn build(self) -> Result<SceneSpec> {
        let (rows, cols) = (self.cam.rows, self.cam.cols);
        let (mut depth, mut refl, mut labels, mut names) = match self.base {
            Some(b) => {
                for (name, shape) in [
                    ("base depth", b.depth.shape()),
                    ("base reflectance", b.reflectance.shape()),
                    ("base labels", b.labels.shape()),
                ] {
                    if shape != (rows, cols) {
                        return Err(Error::invalid(format!(
                            "{name} is {}x{}, camera is {rows}x{cols}",
                            shape.0, shape.1
                        )));
                    }
                }
                (b.depth.to_depth_with_infinity(), b.reflectance, b.labels, b.names)
            }
            None => (
                Grid::filled(rows, cols, f64::INFINITY),
                Grid::zeros(rows, cols),
                Grid::filled(rows, cols, 0u32),
                BTreeMap::new(),
            ),
        };
        let first_label = labels.iter().copied().max().unwrap_or(0) + 1;
        for (i, obj) in self.objects.iter().enumerate() {
            let label = first_label + i as u32;
            names.insert(label, obj.name.clone());
            let ref_row = obj.shape.reference_row();
            for r in 0..rows {
                for c in 0..cols {
                    if obj.shape.contains(r, c) {
                        depth[(r, c)] = obj.depth_mm + obj.depth_slope_mm_per_row * (r as f64 - ref_row);
                        refl[(r, c)] = obj.reflectance;
                        labels[(r, c)] = label;
                    }
                }
            }
        }
        let scattering = self.scattering.unwrap_or_else(|| ScatteringSource::Analytic {
            amplitude_profile: Profile::default_amplitude(rows, cols, self.flip_row),
            phase_profile: Profile::default_phase(rows, cols, self.flip_row),
        });
        let spec = SceneSpec {
            cam: self.cam,
            medium: self.medium,
            depth: DepthImage::from_depth_with_infinity(depth),
            reflectance: refl,
            labels,
            names,
            scattering,
            amplitude_gain: self.gain,
        };
        spec.validate()?;
        Ok(spec)
    }
}
