//! Phasor-domain images and the phase/depth relation of a continuous-wave
//! time-of-flight camera.
//!
//! A pixel observation is the complex number `a * exp(j * phi)`. Images keep
//! the polar form (amplitude, phase) because that is what the sensor reports;
//! sums and differences go through rectangular form.

use std::f64::consts::{PI, TAU};

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Speed of light in millimetres per second.
pub const SPEED_OF_LIGHT_MM_PER_S: f64 = 2.997_924_58e11;

/// Amplitudes below this are treated as zero and their phase as undefined.
pub const AMPLITUDE_EPSILON: f64 = 1e-9;

/// Wraps an angle into `[0, 2π)`.
#[inline]
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub modulation_frequency_hz: f64,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_speed_of_light")]
    pub speed_of_light_mm_per_s: f64,
}

fn default_speed_of_light() -> f64 {
    SPEED_OF_LIGHT_MM_PER_S
}

impl CameraModel {
    pub fn new(modulation_frequency_hz: f64, rows: usize, cols: usize) -> Result<Self> {
        let cam = Self {
            modulation_frequency_hz,
            rows,
            cols,
            speed_of_light_mm_per_s: SPEED_OF_LIGHT_MM_PER_S,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// 424x512 sensor at 16 MHz.
    pub fn kinect_v2_16mhz() -> Self {
        Self {
            modulation_frequency_hz: 16e6,
            rows: 424,
            cols: 512,
            speed_of_light_mm_per_s: SPEED_OF_LIGHT_MM_PER_S,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.modulation_frequency_hz.is_finite() && self.modulation_frequency_hz > 0.0) {
            return Err(Error::invalid("modulation frequency must be positive"));
        }
        if !(self.speed_of_light_mm_per_s.is_finite() && self.speed_of_light_mm_per_s > 0.0) {
            return Err(Error::invalid("speed of light must be positive"));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("camera must have at least one pixel"));
        }
        let range = self.unambiguous_range_mm();
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::invalid("unambiguous range must be finite and positive"));
        }
        Ok(())
    }

    /// `c / (2f)`: the depth at which the phase wraps.
    pub fn unambiguous_range_mm(&self) -> f64 {
        self.speed_of_light_mm_per_s / (2.0 * self.modulation_frequency_hz)
    }

    /// Phase advance per millimetre of depth, `4πf / c`.
    pub fn wavenumber_per_mm(&self) -> f64 {
        4.0 * PI * self.modulation_frequency_hz / self.speed_of_light_mm_per_s
    }
}

/// Depth in millimetres for a wrapped phase.
pub fn phase_to_depth(phase: f64, cam: &CameraModel) -> Result<f64> {
    if !phase.is_finite() {
        return Err(Error::OutOfRange(format!("phase {phase} is not finite")));
    }
    if !(0.0..TAU).contains(&phase) {
        return Err(Error::OutOfRange(format!("phase {phase} outside [0, 2π)")));
    }
    Ok(phase / cam.wavenumber_per_mm())
}

/// Phase for a depth inside the unambiguous range. Depths past the range are
/// rejected rather than wrapped.
pub fn depth_to_phase(depth_mm: f64, cam: &CameraModel) -> Result<f64> {
    let range = cam.unambiguous_range_mm();
    if !(depth_mm.is_finite() && (0.0..range).contains(&depth_mm)) {
        return Err(Error::OutOfRange(format!(
            "depth {depth_mm} mm outside [0, {range}) mm"
        )));
    }
    // the product can round to exactly 2π for depths within an ulp of the range
    Ok(wrap_phase(depth_mm * cam.wavenumber_per_mm()))
}

/// Builds a phasor from polar components.
#[inline]
pub fn polar(amplitude: f64, phase: f64) -> Complex<f64> {
    Complex::from_polar(amplitude, phase)
}

/// Converts a complex value to `(amplitude, wrapped phase)`, snapping
/// near-zero values to `(0, 0)`.
#[inline]
pub fn to_polar(z: Complex<f64>) -> (f64, f64) {
    let amp = z.norm();
    if amp < AMPLITUDE_EPSILON {
        (0.0, 0.0)
    } else {
        (amp, wrap_phase(z.im.atan2(z.re)))
    }
}

/// Paired amplitude and phase grids.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorImage {
    amplitude: Grid<f64>,
    phase: Grid<f64>,
}

impl PhasorImage {
    /// Checks non-negative amplitude and wraps phase into `[0, 2π)`.
    pub fn new(amplitude: Grid<f64>, phase: Grid<f64>) -> Result<Self> {
        amplitude.ensure_same_shape(&phase)?;
        if let Some(bad) = amplitude.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::invalid(format!(
                "amplitude must be finite and non-negative, found {bad}"
            )));
        }
        if let Some(bad) = phase.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("phase must be finite, found {bad}")));
        }
        let phase = phase.map(|&p| wrap_phase(p));
        Ok(Self { amplitude, phase })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            amplitude: Grid::zeros(rows, cols),
            phase: Grid::zeros(rows, cols),
        }
    }

    pub fn from_complex(z: &Grid<Complex<f64>>) -> Self {
        let mut amplitude = Grid::zeros(z.rows(), z.cols());
        let mut phase = Grid::zeros(z.rows(), z.cols());
        for (i, v) in z.iter().enumerate() {
            let (a, p) = to_polar(*v);
            amplitude.as_mut_slice()[i] = a;
            phase.as_mut_slice()[i] = p;
        }
        Self { amplitude, phase }
    }

    pub fn to_complex(&self) -> Grid<Complex<f64>> {
        self.amplitude
            .zip_map(&self.phase, |&a, &p| polar(a, p))
            .expect("shapes checked at construction")
    }

    pub fn amplitude(&self) -> &Grid<f64> {
        &self.amplitude
    }

    pub fn phase(&self) -> &Grid<f64> {
        &self.phase
    }

    pub fn rows(&self) -> usize {
        self.amplitude.rows()
    }

    pub fn cols(&self) -> usize {
        self.amplitude.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.amplitude.shape()
    }

    /// `true` where the amplitude is large enough for the phase to mean
    /// anything.
    pub fn phase_defined(&self) -> Grid<bool> {
        self.amplitude.map(|&a| a >= AMPLITUDE_EPSILON)
    }

    pub fn into_parts(self) -> (Grid<f64>, Grid<f64>) {
        (self.amplitude, self.phase)
    }
}

fn combine(a: &PhasorImage, b: &PhasorImage, sign: f64) -> Result<PhasorImage> {
    a.amplitude.ensure_same_shape(&b.amplitude)?;
    let n = a.amplitude.len();
    let mut amplitude = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    for i in 0..n {
        let za = polar(a.amplitude.as_slice()[i], a.phase.as_slice()[i]);
        let zb = polar(b.amplitude.as_slice()[i], b.phase.as_slice()[i]);
        let (amp, ph) = to_polar(za + zb * sign);
        amplitude.push(amp);
        phase.push(ph);
    }
    let (rows, cols) = a.shape();
    Ok(PhasorImage {
        amplitude: Grid::from_vec(rows, cols, amplitude)?,
        phase: Grid::from_vec(rows, cols, phase)?,
    })
}

/// Per-pixel complex sum.
pub fn phasor_add(a: &PhasorImage, b: &PhasorImage) -> Result<PhasorImage> {
    combine(a, b, 1.0)
}

/// Per-pixel complex difference `a - b`.
pub fn phasor_subtract(a: &PhasorImage, b: &PhasorImage) -> Result<PhasorImage> {
    combine(a, b, -1.0)
}

/// Depth grid with a validity flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub depth: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthImage {
    pub fn new(depth: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        depth.ensure_same_shape(&valid)?;
        Ok(Self { depth, valid })
    }

    /// Interprets non-finite depths as background.
    pub fn from_depth_with_infinity(depth: Grid<f64>) -> Self {
        let valid = depth.map(|d| d.is_finite());
        let depth = depth.map(|&d| if d.is_finite() { d } else { 0.0 });
        Self { depth, valid }
    }

    /// Encodes invalid pixels as `+inf`.
    pub fn to_depth_with_infinity(&self) -> Grid<f64> {
        self.depth
            .zip_map(&self.valid, |&d, &v| if v { d } else { f64::INFINITY })
            .expect("shapes checked at construction")
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }

    /// Depths from the phase of every pixel whose phase is defined.
    pub fn from_phasor(img: &PhasorImage, cam: &CameraModel) -> Result<Self> {
        let defined = img.phase_defined();
        let mut depth = Grid::zeros(img.rows(), img.cols());
        for i in 0..depth.len() {
            if defined.as_slice()[i] {
                depth.as_mut_slice()[i] = phase_to_depth(img.phase().as_slice()[i], cam)?;
            }
        }
        Ok(Self {
            depth,
            valid: defined,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn single(a: f64, p: f64) -> PhasorImage {
        PhasorImage::new(
            Grid::from_vec(1, 1, vec![a]).unwrap(),
            Grid::from_vec(1, 1, vec![p]).unwrap(),
        )
        .unwrap()
    }

    fn cam() -> CameraModel {
        CameraModel::new(16e6, 4, 4).unwrap()
    }

    #[test]
    fn zero_phase_is_zero_depth() {
        assert_eq!(phase_to_depth(0.0, &cam()).unwrap(), 0.0);
        assert_eq!(depth_to_phase(0.0, &cam()).unwrap(), 0.0);
    }

    #[test]
    fn half_turn_at_16mhz() {
        // c * π / (4π f) = c / (4 f)
        let expected = SPEED_OF_LIGHT_MM_PER_S / (4.0 * 16e6);
        let z = phase_to_depth(PI, &cam()).unwrap();
        assert!((z - expected).abs() < 1e-9);
        assert!((z - 4684.26).abs() < 0.01);
        assert!((depth_to_phase(z, &cam()).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn wrap_boundary_approaches_unambiguous_range() {
        let c = cam();
        let z = phase_to_depth(TAU - 1e-12, &c).unwrap();
        assert!(z < c.unambiguous_range_mm());
        assert!((c.unambiguous_range_mm() - 9368.5).abs() < 0.1);
        assert!((z - c.unambiguous_range_mm()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = cam();
        assert!(phase_to_depth(f64::NAN, &c).is_err());
        assert!(phase_to_depth(f64::INFINITY, &c).is_err());
        assert!(depth_to_phase(-1.0, &c).is_err());
        assert!(depth_to_phase(c.unambiguous_range_mm(), &c).is_err());
        assert!(depth_to_phase(f64::NAN, &c).is_err());
        assert!(CameraModel::new(0.0, 1, 1).is_err());
        assert!(CameraModel::new(16e6, 0, 1).is_err());
    }

    #[test]
    fn round_trip_over_random_depths() {
        use rand::{Rng, SeedableRng};
        let c = cam();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let z = rng.gen_range(1e-3..c.unambiguous_range_mm());
            let back = phase_to_depth(depth_to_phase(z, &c).unwrap(), &c).unwrap();
            worst = worst.max(((back - z) / z).abs());
        }
        assert!(worst < 1e-9, "worst relative error {worst}");
    }

    #[test]
    fn add_identity_and_cancellation() {
        let a = single(1.0, 0.3);
        let zero = PhasorImage::zeros(1, 1);
        let s = phasor_add(&a, &zero).unwrap();
        assert!((s.amplitude()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.phase()[(0, 0)] - 0.3).abs() < 1e-15);

        let s = phasor_add(&single(1.0, 0.0), &single(1.0, PI)).unwrap();
        assert_eq!(s.amplitude()[(0, 0)], 0.0);
        assert!(!s.phase_defined()[(0, 0)]);
    }

    #[test]
    fn add_quarter_turn() {
        let s = phasor_add(&single(1.0, 0.0), &single(1.0, FRAC_PI_2)).unwrap();
        assert!((s.amplitude()[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.phase()[(0, 0)] - PI / 4.0).abs() < 1e-15);

        let d = phasor_subtract(&single(2f64.sqrt(), PI / 4.0), &single(1.0, FRAC_PI_2)).unwrap();
        assert!((d.amplitude()[(0, 0)] - 1.0).abs() < 1e-15);
        let p = d.phase()[(0, 0)];
        assert!(p < 1e-15 || TAU - p < 1e-15);
    }

    #[test]
    fn subtract_zero_is_identity() {
        let a = single(3.0, 5.0);
        let d = phasor_subtract(&a, &PhasorImage::zeros(1, 1)).unwrap();
        assert!((d.amplitude()[(0, 0)] - 3.0).abs() < 1e-14);
        assert!((d.phase()[(0, 0)] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let a = PhasorImage::zeros(2, 2);
        let b = PhasorImage::zeros(2, 3);
        assert!(matches!(
            phasor_add(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constructor_wraps_and_validates() {
        let img = single(1.0, -0.5);
        assert!((img.phase()[(0, 0)] - (TAU - 0.5)).abs() < 1e-15);
        assert!(PhasorImage::new(
            Grid::from_vec(1, 1, vec![-1.0]).unwrap(),
            Grid::zeros(1, 1)
        )
        .is_err());
        assert_eq!(wrap_phase(-1e-300), 0.0);
    }

    fn grid_strategy(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.01f64..100.0, n),
            prop::collection::vec(0.0f64..TAU, n),
        )
    }

    proptest! {
        #[test]
        fn add_subtract_round_trip((aa, ap) in grid_strategy(6), (ba, bp) in grid_strategy(6)) {
            let a = PhasorImage::new(Grid::from_vec(2, 3, aa).unwrap(), Grid::from_vec(2, 3, ap).unwrap()).unwrap();
            let b = PhasorImage::new(Grid::from_vec(2, 3, ba).unwrap(), Grid::from_vec(2, 3, bp).unwrap()).unwrap();
            let back = phasor_subtract(&phasor_add(&a, &b).unwrap(), &b).unwrap();
            for i in 0..6 {
                let (x, y) = (a.amplitude().as_slice()[i], back.amplitude().as_slice()[i]);
                prop_assert!((x - y).abs() < 1e-9 * x.max(1.0));
            }
            for p in back.phase().iter() {
                prop_assert!((0.0..TAU).contains(p));
            }
        }

        #[test]
        fn add_commutes_and_associates((aa, ap) in grid_strategy(3), (ba, bp) in grid_strategy(3), (ca, cp) in grid_strategy(3)) {
            let mk = |a: Vec<f64>, p: Vec<f64>| PhasorImage::new(Grid::from_vec(1, 3, a).unwrap(), Grid::from_vec(1, 3, p).unwrap()).unwrap();
            let (a, b, c) = (mk(aa, ap), mk(ba, bp), mk(ca, cp));
            let ab = phasor_add(&a, &b).unwrap();
            let ba = phasor_add(&b, &a).unwrap();
            let abc = phasor_add(&ab, &c).unwrap();
            let a_bc = phasor_add(&a, &phasor_add(&b, &c).unwrap()).unwrap();
            for i in 0..3 {
                // relative to the summed magnitudes, which bounds cancellation
                let scale = a.amplitude().as_slice()[i] + b.amplitude().as_slice()[i] + c.amplitude().as_slice()[i];
                prop_assert!((ab.amplitude().as_slice()[i] - ba.amplitude().as_slice()[i]).abs() <= 1e-12 * scale);
                prop_assert!((abc.amplitude().as_slice()[i] - a_bc.amplitude().as_slice()[i]).abs() <= 1e-12 * scale);
            }
        }
    }
}
