//! Jacobi-preconditioned conjugate gradients.
//!
//! Reductions are summed over fixed-size chunks in a fixed order, so the
//! result does not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` at exit.
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive (semi-)definite `A`, starting from
/// the contents of `x`. Stops when `‖b − Ax‖ ≤ tol·‖b‖`.
pub fn pcg<F>(
    apply: F,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    assert_eq!(diag.len(), n);

    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    apply(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / b_norm;

    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::LinearSolve {
                iterations: it,
                relative_residual: res,
                tolerance: tol,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // direction in the null space: no further progress possible
            return Err(Error::LinearSolve {
                iterations: it,
                relative_residual: res,
                tolerance: tol,
            });
        }
        let alpha = rz / pap;
        x.par_iter_mut()
            .zip(p.par_iter())
            .for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut()
            .zip(ap.par_iter())
            .for_each(|(ri, api)| *ri -= alpha * api);
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (ri, mi))| *zi = ri * mi);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut()
            .zip(z.par_iter())
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
        res = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    Ok(CgReport {
        iterations: it,
        relative_residual: res,
    })
}
