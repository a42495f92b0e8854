//! Optional denoising ahead of the estimator.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid_file::Domain;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::phasor::wrap_phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Gaussian,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "gaussian" => Ok(Method::Gaussian),
            other => Err(Error::invalid(format!("unknown preprocessing method {other:?}"))),
        }
    }
}

/// Normalised Gaussian taps out to `ceil(3σ)`.
fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable convolution with edge replication.
fn convolve(g: &Grid<f64>, taps: &[f64]) -> Grid<f64> {
    let (rows, cols) = g.shape();
    let radius = (taps.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let horiz = Grid::from_fn(rows, cols, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * g[(r, clamp(c as i64 + k as i64 - radius, cols))])
            .sum::<f64>()
    });
    Grid::from_fn(rows, cols, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * horiz[(clamp(r as i64 + k as i64 - radius, rows), c)])
            .sum::<f64>()
    })
}

/// Gaussian smoothing. Phase grids are smoothed on the unit circle so values
/// near the wrap point average correctly.
pub fn gaussian(g: &Grid<f64>, sigma: f64, domain: Domain) -> Result<Grid<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !g.is_finite() {
        return Err(Error::invalid("cannot smooth a grid with non-finite values"));
    }
    let taps = kernel(sigma);
    match domain {
        Domain::Amplitude | Domain::Weight => Ok(convolve(g, &taps)),
        Domain::Phase => {
            let cos = convolve(&g.map(|p| p.cos()), &taps);
            let sin = convolve(&g.map(|p| p.sin()), &taps);
            Ok(Grid::from_fn(g.rows(), g.cols(), |r, c| {
                let (s, co) = (sin[(r, c)], cos[(r, c)]);
                if s == 0.0 && co == 0.0 {
                    g[(r, c)]
                } else {
                    wrap_phase(s.atan2(co))
                }
            }))
        }
        Domain::Depth | Domain::Label => Err(Error::invalid(format!("{domain:?} grids are not smoothed"))),
    }
}

pub fn apply(g: &Grid<f64>, method: Method, sigma: f64, domain: Domain) -> Result<Grid<f64>> {
    match method {
        Method::None => Ok(g.clone()),
        Method::Gaussian => gaussian(g, sigma, domain),
    }
}
