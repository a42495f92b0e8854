//! Direct-component recovery, depth reconstruction and per-object depth
//! error reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::irls::ScatteringField;
use crate::phasor::{phase_to_depth, polar, to_polar, CameraModel, DepthImage, PhasorImage};

/// Boolean object mask; `true` marks an object pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMask {
    pub mask: Grid<bool>,
}

impl ObjectMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            mask: Grid::filled(rows, cols, false),
        }
    }

    pub fn count(&self) -> usize {
        self.mask.count_true()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.mask.len().max(1) as f64
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &ObjectMask) -> Result<f64> {
        self.mask.ensure_same_shape(&other.mask)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.mask.iter().zip(other.mask.iter()) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }
}

/// Removes the estimated scattering phasor from the observation by
/// rectangular subtraction. Pixels whose remainder is below the amplitude
/// epsilon come back with zero amplitude (undefined phase).
pub fn recover_direct(
    obs: &PhasorImage,
    scat_amp: &ScatteringField,
    scat_phase: &ScatteringField,
) -> Result<PhasorImage> {
    obs.amplitude().ensure_same_shape(&scat_amp.values)?;
    obs.amplitude().ensure_same_shape(&scat_phase.values)?;
    let (rows, cols) = obs.shape();
    let mut amp = Vec::with_capacity(rows * cols);
    let mut phase = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let total = polar(obs.amplitude().as_slice()[i], obs.phase().as_slice()[i]);
        let scat = polar(scat_amp.values.as_slice()[i], scat_phase.values.as_slice()[i]);
        let (a, p) = to_polar(total - scat);
        amp.push(a);
        phase.push(p);
    }
    PhasorImage::new(Grid::from_vec(rows, cols, amp)?, Grid::from_vec(rows, cols, phase)?)
}

/// Depth from the direct phase, defined only inside `mask` where the direct
/// amplitude is non-negligible.
pub fn reconstruct_depth(
    direct: &PhasorImage,
    cam: &CameraModel,
    mask: &ObjectMask,
) -> Result<DepthImage> {
    direct.amplitude().ensure_same_shape(&mask.mask)?;
    let defined = direct.phase_defined();
    let (rows, cols) = direct.shape();
    let mut depth = Grid::zeros(rows, cols);
    let mut valid = Grid::filled(rows, cols, false);
    for i in 0..rows * cols {
        if mask.mask.as_slice()[i] && defined.as_slice()[i] {
            depth.as_mut_slice()[i] = phase_to_depth(direct.phase().as_slice()[i], cam)?;
            valid.as_mut_slice()[i] = true;
        }
    }
    DepthImage::new(depth, valid)
}

/// Intersection of the amplitude-domain and phase-domain masks.
pub fn fuse_masks(amp_mask: &ObjectMask, phase_mask: &ObjectMask) -> Result<ObjectMask> {
    Ok(ObjectMask {
        mask: amp_mask.mask.zip_map(&phase_mask.mask, |a, b| *a && *b)?,
    })
}

/// Mean absolute depth error of one labelled region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionError {
    pub label: u32,
    pub name: String,
    /// Region pixels with valid ground truth.
    pub pixels: usize,
    /// Of those, pixels where the defogged estimate is defined.
    pub defogged_pixels: usize,
    pub defogged_mean_abs_error_mm: Option<f64>,
    pub raw_pixels: usize,
    pub raw_mean_abs_error_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthErrorReport {
    pub regions: Vec<RegionError>,
    /// Pooled over all region pixels.
    pub overall_defogged_mm: Option<f64>,
    pub overall_raw_mm: Option<f64>,
    pub mask_iou: f64,
}

/// Inputs of [`evaluate`]. Label 0 is background and is not scored.
pub struct EvalInputs<'a> {
    pub defogged: &'a DepthImage,
    pub raw: Option<&'a DepthImage>,
    pub ground_truth: &'a DepthImage,
    pub mask_est: &'a ObjectMask,
    pub mask_gt: &'a ObjectMask,
    pub labels: &'a Grid<u32>,
    pub names: &'a BTreeMap<u32, String>,
}

#[derive(Default)]
struct Acc {
    pixels: usize,
    def_n: usize,
    def_sum: f64,
    raw_n: usize,
    raw_sum: f64,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Per-region mean absolute depth error for the defogged (and optionally the
/// raw foggy) depth, plus mask IoU.
pub fn evaluate(inp: &EvalInputs) -> Result<DepthErrorReport> {
    let shape = inp.ground_truth.shape();
    let check = |s: (usize, usize)| -> Result<()> {
        if s != shape {
            return Err(Error::DimensionMismatch {
                expected_rows: shape.0,
                expected_cols: shape.1,
                rows: s.0,
                cols: s.1,
            });
        }
        Ok(())
    };
    check(inp.defogged.shape())?;
    if let Some(raw) = inp.raw {
        check(raw.shape())?;
    }
    check(inp.labels.shape())?;
    check(inp.mask_est.mask.shape())?;
    check(inp.mask_gt.mask.shape())?;

    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    let mut total = Acc::default();
    for i in 0..inp.labels.len() {
        let label = inp.labels.as_slice()[i];
        if label == 0 || !inp.ground_truth.valid.as_slice()[i] {
            continue;
        }
        let gt = inp.ground_truth.depth.as_slice()[i];
        let a = acc.entry(label).or_default();
        a.pixels += 1;
        total.pixels += 1;
        if inp.defogged.valid.as_slice()[i] {
            let e = (inp.defogged.depth.as_slice()[i] - gt).abs();
            a.def_n += 1;
            a.def_sum += e;
            total.def_n += 1;
            total.def_sum += e;
        }
        if let Some(raw) = inp.raw {
            if raw.valid.as_slice()[i] {
                let e = (raw.depth.as_slice()[i] - gt).abs();
                a.raw_n += 1;
                a.raw_sum += e;
                total.raw_n += 1;
                total.raw_sum += e;
            }
        }
    }

    let regions = acc
        .into_iter()
        .map(|(label, a)| RegionError {
            label,
            name: inp
                .names
                .get(&label)
                .cloned()
                .unwrap_or_else(|| format!("region{label}")),
            pixels: a.pixels,
            defogged_pixels: a.def_n,
            defogged_mean_abs_error_mm: mean(a.def_sum, a.def_n),
            raw_pixels: a.raw_n,
            raw_mean_abs_error_mm: mean(a.raw_sum, a.raw_n),
        })
        .collect();

    Ok(DepthErrorReport {
        regions,
        overall_defogged_mm: mean(total.def_sum, total.def_n),
        overall_raw_mm: mean(total.raw_sum, total.raw_n),
        mask_iou: inp.mask_est.iou(inp.mask_gt)?,
    })
}

impl DepthErrorReport {
    /// One column per region, one row per method (`w/o method`, `proposed`).
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"));
        let mut out = String::from("method");
        for r in &self.regions {
            write!(out, ",{}", r.name).unwrap();
        }
        out.push_str(",overall\n");
        out.push_str("w/o method");
        for r in &self.regions {
            write!(out, ",{}", fmt(r.raw_mean_abs_error_mm)).unwrap();
        }
        writeln!(out, ",{}", fmt(self.overall_raw_mm)).unwrap();
        out.push_str("proposed");
        for r in &self.regions {
            write!(out, ",{}", fmt(r.defogged_mean_abs_error_mm)).unwrap();
        }
        writeln!(out, ",{}", fmt(self.overall_defogged_mm)).unwrap();
        out
    }
}
