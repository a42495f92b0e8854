//! Scattering removal for continuous-wave time-of-flight images captured in
//! fog.
//!
//! In a homogeneous medium the backscatter seen by a pixel saturates within
//! a short distance, so it depends on the pixel and not on what the pixel
//! looks at. Objects far enough away return no direct light at all. The
//! crate estimates that per-pixel scattering phasor from the background with
//! a robust, prior-regularised least-squares fit, treats pixels that do not
//! fit as objects, and subtracts the scattering to recover object depth.
//!
//! Modules:
//!
//! * [`phasor`]: amplitude/phase images and the phase/depth relation.
//! * [`priors`]: patch-quadratic, mirror-symmetry and smoothness operators.
//! * [`irls`]: the coarse-to-fine Tukey IRLS estimator.
//! * [`recon`]: direct-component recovery, depth, masks and error reports.
//! * [`forward`]: forward model and synthetic scene generator.
//! * [`simrange`]: measurement-range sweeps.
//! * [`io`]: grid file format, scene/config files, run manifests and the CLI.
//! * [`pipeline`]: end-to-end defogging of an amplitude/phase pair.

pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod irls;
pub mod phasor;
pub mod pipeline;
pub mod priors;
pub mod recon;
pub mod simrange;

pub use error::{Error, Result};
pub use grid::Grid;
pub use phasor::{CameraModel, DepthImage, PhasorImage};
