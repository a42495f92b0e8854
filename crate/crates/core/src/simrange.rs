//! Measurement-range analysis: where backscatter has saturated and where the
//! direct return has faded into it.
//!
//! All curves are in raw model units: `alpha_s` and `residual_amp` are the
//! magnitudes of the single-scattering integral and of the direct phasor for
//! reflectance `I` (no sensor gain), phases are radians in `[0, 2π)`.

use std::fmt::Write as _;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{direct_phasor, scattering_curve, MediumParams};
use crate::phasor::{wrap_phase, CameraModel};

/// Default fraction for both range thresholds.
pub const DEFAULT_TOLERANCE: f64 = 0.01;

/// Default sweep: 10 mm to 10 m in 10 mm steps.
pub fn default_grid() -> Vec<f64> {
    linear_grid(10.0, 10_000.0, 10.0)
}

/// `start, start + step, …` up to and including `end` (within rounding).
pub fn linear_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

/// Usable depth interval. `None` for the background point means the direct
/// component never drops below the threshold (e.g. a clear medium).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRange {
    pub z_saturate: Option<f64>,
    pub z_background: Option<f64>,
}

impl MeasurementRange {
    pub fn contains(&self, lo: f64, hi: f64) -> bool {
        self.z_saturate.is_some_and(|s| s <= lo) && self.z_background.is_none_or(|b| b >= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSweep {
    pub medium: MediumParams,
    pub reflectance: f64,
    pub z_mm: Vec<f64>,
    pub alpha_s: Vec<f64>,
    pub phi_s: Vec<f64>,
    /// `|total| − |scattering|`; negative once the direct phasor points away
    /// from the scattering phasor.
    pub residual_amp: Vec<f64>,
    /// Angle from the scattering phasor to the total phasor.
    pub residual_phase: Vec<f64>,
    /// Range at the default tolerances.
    pub range: MeasurementRange,
}

/// Scattering, total and residual curves of a surface with reflectance
/// `reflectance` placed at each depth of `z_grid`. Depths past the
/// unambiguous range are allowed; their phases wrap.
pub fn sweep(medium: &MediumParams, cam: &CameraModel, reflectance: f64, z_grid: &[f64]) -> Result<RangeSweep> {
    if z_grid.is_empty() {
        return Err(Error::invalid("depth grid is empty"));
    }
    cam.validate()?;
    let scat = scattering_curve(z_grid, medium, cam)?;
    let n = z_grid.len();
    let mut out = RangeSweep {
        medium: *medium,
        reflectance,
        z_mm: z_grid.to_vec(),
        alpha_s: Vec::with_capacity(n),
        phi_s: Vec::with_capacity(n),
        residual_amp: Vec::with_capacity(n),
        residual_phase: Vec::with_capacity(n),
        range: MeasurementRange {
            z_saturate: None,
            z_background: None,
        },
    };
    for (&z, s) in z_grid.iter().zip(&scat) {
        let d = direct_phasor(z, reflectance, medium, cam)?;
        let total = s + d;
        let zero = *s == Complex::new(0.0, 0.0);
        out.alpha_s.push(s.norm());
        out.phi_s.push(if zero { 0.0 } else { wrap_phase(s.arg()) });
        out.residual_amp.push(total.norm() - s.norm());
        out.residual_phase.push(if zero {
            wrap_phase(z * cam.wavenumber_per_mm())
        } else {
            wrap_phase((total * s.conj()).arg())
        });
    }
    out.range = find_range(&out, DEFAULT_TOLERANCE, DEFAULT_TOLERANCE)?;
    Ok(out)
}

/// Smallest index where a monotone predicate turns true, by bisection.
fn first_true(n: usize, pred: impl Fn(usize) -> bool) -> Option<usize> {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    (lo < n).then_some(lo)
}

/// Saturation point: first depth where `1 − α_s(z)/α_s(z_max) < sat_tol`.
/// Background point: first depth where the residual direct amplitude drops
/// below `bg_tol · α_s(z_max)`, i.e. where the object is indistinguishable
/// from saturated backscatter.
///
/// Both predicates are assumed to switch once along the grid.
pub fn find_range(sweep: &RangeSweep, sat_tol: f64, bg_tol: f64) -> Result<MeasurementRange> {
    for (name, t) in [("sat_tol", sat_tol), ("bg_tol", bg_tol)] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1), got {t}")));
        }
    }
    let n = sweep.z_mm.len();
    if n == 0 {
        return Err(Error::invalid("empty sweep"));
    }
    let a_max = sweep.alpha_s[n - 1];
    if a_max == 0.0 {
        return Ok(MeasurementRange {
            z_saturate: Some(sweep.z_mm[0]),
            z_background: None,
        });
    }
    let sat = first_true(n, |i| 1.0 - sweep.alpha_s[i] / a_max < sat_tol);
    let bg = first_true(n, |i| sweep.residual_amp[i] < bg_tol * a_max);
    Ok(MeasurementRange {
        z_saturate: sat.map(|i| sweep.z_mm[i]),
        z_background: bg.map(|i| sweep.z_mm[i]),
    })
}

impl RangeSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("z_mm,alpha_s,phi_s,residual_amp,residual_phase\n");
        for i in 0..self.z_mm.len() {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                self.z_mm[i], self.alpha_s[i], self.phi_s[i], self.residual_amp[i], self.residual_phase[i]
            )
            .expect("writing to a String");
        }
        s
    }

    /// Gnuplot script that plots the CSV written to `csv_path`.
    pub fn gnuplot_script(&self, csv_path: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set key autotitle columnhead");
        let _ = writeln!(s, "set xlabel 'depth [mm]'");
        let _ = writeln!(s, "set multiplot layout 2,2");
        for (col, label) in [
            (2, "scattering amplitude"),
            (3, "scattering phase [rad]"),
            (4, "residual direct amplitude"),
            (5, "residual phase [rad]"),
        ] {
            let _ = writeln!(s, "set ylabel '{label}'");
            if col == 4 {
                for z in [self.range.z_saturate, self.range.z_background].into_iter().flatten() {
                    let _ = writeln!(s, "set arrow from {z}, graph 0 to {z}, graph 1 nohead dt 2");
                }
            }
            let _ = writeln!(s, "plot '{csv_path}' using 1:{col} with lines");
            let _ = writeln!(s, "unset arrow");
        }
        let _ = writeln!(s, "unset multiplot");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::scattering_phasor;
    use crate::phasor::depth_to_phase;

    fn cam() -> CameraModel {
        CameraModel::kinect_v2_16mhz()
    }

    fn at(s: &RangeSweep, z: f64) -> usize {
        s.z_mm.iter().position(|v| (v - z).abs() < 1e-9).unwrap()
    }

    #[test]
    fn clear_medium() {
        let m = MediumParams::fog().with_beta(0.0);
        let s = sweep(&m, &cam(), 1.0, &default_grid()).unwrap();
        assert!(s.alpha_s.iter().all(|a| *a == 0.0));
        let range = cam().unambiguous_range_mm();
        for (z, p) in s.z_mm.iter().zip(&s.residual_phase) {
            if *z < range {
                assert_eq!(*p, depth_to_phase(*z, &cam()).unwrap());
            } else {
                assert!((*p - depth_to_phase(*z - range, &cam()).unwrap()).abs() < 1e-9);
            }
        }
        assert_eq!(s.range.z_background, None);
        assert_eq!(s.range.z_saturate, Some(10.0));
    }

    #[test]
    fn fog_saturates_by_one_metre() {
        let s = sweep(&MediumParams::fog(), &cam(), 1.0, &default_grid()).unwrap();
        let (i1, i8) = (at(&s, 1000.0), at(&s, 8000.0));
        assert!(s.alpha_s[i1] / s.alpha_s[i8] > 0.99);
        let phase_err = 1.0 - s.phi_s[i1] / s.phi_s[i8];
        assert!((phase_err - 0.06).abs() <= 0.01);
    }

    #[test]
    fn residual_fades_by_background_point() {
        let s = sweep(&MediumParams::fog(), &cam(), 1.0, &default_grid()).unwrap();
        let (i1, i25) = (at(&s, 1000.0), at(&s, 2500.0));
        assert!(s.residual_amp[i25] < 0.01 * s.residual_amp[i1]);
        assert!(s.range.contains(1000.0, 2500.0), "{:?}", s.range);
    }

    #[test]
    fn residual_matches_pointwise_oracle() {
        let m = MediumParams::fog();
        let s = sweep(&m, &cam(), 1.0, &[1000.0, 2500.0]).unwrap();
        for (i, z) in [1000.0, 2500.0].into_iter().enumerate() {
            let sc = scattering_phasor(z, &m, &cam()).unwrap();
            let d = direct_phasor(z, 1.0, &m, &cam()).unwrap();
            let expected = (sc + d).norm() - sc.norm();
            assert!((s.residual_amp[i] - expected).abs() <= 1e-9 * d.norm());
        }
    }

    #[test]
    fn bisection_matches_linear_scan() {
        let z = linear_grid(10.0, 5000.0, 10.0);
        let n = z.len();
        for k in [0.001, 0.003, 0.01] {
            let synthetic = RangeSweep {
                medium: MediumParams::fog(),
                reflectance: 1.0,
                alpha_s: z.iter().map(|v| 1.0 - (-k * v).exp()).collect(),
                phi_s: vec![0.0; n],
                residual_amp: z.iter().map(|v| 50.0 * (-k * v).exp()).collect(),
                residual_phase: vec![0.0; n],
                z_mm: z.clone(),
                range: MeasurementRange {
                    z_saturate: None,
                    z_background: None,
                },
            };
            for tol in [0.001, 0.01, 0.1] {
                let r = find_range(&synthetic, tol, tol).unwrap();
                let a_max = synthetic.alpha_s[n - 1];
                let scan_sat = (0..n).find(|&i| 1.0 - synthetic.alpha_s[i] / a_max < tol);
                let scan_bg = (0..n).find(|&i| synthetic.residual_amp[i] < tol * a_max);
                assert_eq!(r.z_saturate, scan_sat.map(|i| z[i]));
                assert_eq!(r.z_background, scan_bg.map(|i| z[i]));
            }
        }
        let real = sweep(&MediumParams::fog(), &cam(), 1.0, &default_grid()).unwrap();
        let a_max = *real.alpha_s.last().unwrap();
        let scan_bg = (0..real.z_mm.len()).find(|&i| real.residual_amp[i] < 0.01 * a_max);
        assert_eq!(real.range.z_background, scan_bg.map(|i| real.z_mm[i]));
    }

    #[test]
    fn denser_fog_shortens_range() {
        let mut prev = f64::INFINITY;
        for beta in [1.6e-4, 2.4e-4, 3.2e-4, 4.8e-4, 6.4e-4] {
            let s = sweep(&MediumParams::fog().with_beta(beta), &cam(), 1.0, &default_grid()).unwrap();
            let bg = s.range.z_background.unwrap();
            assert!(bg <= prev, "beta={beta}: {bg} > {prev}");
            prev = bg;
        }
    }

    #[test]
    fn range_is_stable_under_grid_refinement() {
        let m = MediumParams::fog();
        let coarse = sweep(&m, &cam(), 1.0, &linear_grid(10.0, 8000.0, 1.0)).unwrap();
        let fine = sweep(&m, &cam(), 1.0, &linear_grid(10.0, 8000.0, 0.5)).unwrap();
        let close = |a: Option<f64>, b: Option<f64>| (a.unwrap() - b.unwrap()).abs() <= 1.0;
        assert!(close(coarse.range.z_saturate, fine.range.z_saturate));
        assert!(close(coarse.range.z_background, fine.range.z_background));
    }

    #[test]
    fn rejects_bad_grids_and_tolerances() {
        let m = MediumParams::fog();
        assert!(sweep(&m, &cam(), 1.0, &[]).is_err());
        assert!(sweep(&m, &cam(), 1.0, &[100.0, 100.0]).is_err());
        assert!(sweep(&m, &cam(), 1.0, &[5.0, 100.0]).is_err());
        let s = sweep(&m, &cam(), 1.0, &[100.0, 200.0]).unwrap();
        assert!(find_range(&s, 0.0, 0.01).is_err());
        assert!(find_range(&s, 0.01, 1.0).is_err());
    }

    #[test]
    fn csv_and_script() {
        let s = sweep(&MediumParams::fog(), &cam(), 1.0, &[100.0, 200.0, 300.0]).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "z_mm,alpha_s,phi_s,residual_amp,residual_phase");
        assert_eq!(lines.len(), 4);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 100.0);
        assert_eq!(first[1], s.alpha_s[0]);
        let script = s.gnuplot_script("range.csv");
        assert!(script.contains("plot 'range.csv' using 1:4"));
    }
}
