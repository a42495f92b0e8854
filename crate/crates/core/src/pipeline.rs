//! End-to-end defogging of one amplitude/phase observation.

use crate::error::{Error, Result};
use crate::irls::{estimate_scattering, DomainEstimate, SolverConfig};
use crate::phasor::{CameraModel, DepthImage, PhasorImage};
use crate::recon::{fuse_masks, reconstruct_depth, recover_direct, ObjectMask};

/// Everything produced by [`defog`].
#[derive(Debug, Clone)]
pub struct DefogResult {
    pub amplitude: DomainEstimate,
    pub phase: DomainEstimate,
    /// Pixels flagged as object in both domains.
    pub mask: ObjectMask,
    /// Observation with the estimated scattering removed.
    pub direct: PhasorImage,
    /// Depth of the recovered direct component inside `mask`.
    pub depth: DepthImage,
    /// Depth read straight off the foggy phase, for comparison.
    pub raw_depth: DepthImage,
}

/// Estimates the scattering field independently in the amplitude and phase
/// domains (concurrently), fuses the two object masks and subtracts the
/// scattering phasor.
pub fn defog(
    obs: &PhasorImage,
    cam: &CameraModel,
    amp_cfg: &SolverConfig,
    phase_cfg: &SolverConfig,
) -> Result<DefogResult> {
    cam.validate()?;
    if obs.shape() != (cam.rows, cam.cols) {
        return Err(Error::DimensionMismatch {
            expected_rows: cam.rows,
            expected_cols: cam.cols,
            rows: obs.rows(),
            cols: obs.cols(),
        });
    }
    amp_cfg.validate()?;
    phase_cfg.validate()?;
    let (amp, phase) = rayon::join(
        || estimate_scattering(obs.amplitude(), amp_cfg),
        || estimate_scattering(obs.phase(), phase_cfg),
    );
    let (amplitude, phase) = (amp?, phase?);
    let mask = fuse_masks(&amplitude.mask, &phase.mask)?;
    let direct = recover_direct(obs, &amplitude.scattering, &phase.scattering)?;
    let depth = reconstruct_depth(&direct, cam, &mask)?;
    let raw_depth = DepthImage::from_phasor(obs, cam)?;
    Ok(DefogResult {
        amplitude,
        phase,
        mask,
        direct,
        depth,
        raw_depth,
    })
}
