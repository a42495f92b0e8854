//! Quadratic operators used as priors on the scattering field: a per-patch
//! quadratic surface, mirror symmetry about a fixed row, and smoothness.
//!
//! Every penalty here is a quadratic form `‖Mx‖²`. Besides evaluating the
//! penalty each operator can apply its normal matrix `MᵀM`, which is what
//! the weighted least-squares step needs.

use std::ops::Range;

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Coefficients `[u², uv, v², u, v, 1]` of a patch quadratic.
pub type QuadCoeffs = [f64; 6];

/// Non-overlapping rectangular patches that tile an image. When the image
/// size is not divisible by the patch counts, the last row/column of patches
/// takes the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    patch_rows: usize,
    patch_cols: usize,
    row_ranges: Vec<Range<usize>>,
    col_ranges: Vec<Range<usize>>,
    bases: Vec<QuadraticBasis>,
}

fn split(len: usize, parts: usize) -> Vec<Range<usize>> {
    let step = len / parts;
    (0..parts)
        .map(|i| {
            let start = i * step;
            let end = if i + 1 == parts { len } else { start + step };
            start..end
        })
        .collect()
}

impl PatchGrid {
    /// `patch_rows x patch_cols` patches over a `rows x cols` image. Every
    /// patch must be at least 3x3 so the quadratic fit is well posed.
    pub fn new(rows: usize, cols: usize, patch_rows: usize, patch_cols: usize) -> Result<Self> {
        if patch_rows == 0 || patch_cols == 0 {
            return Err(Error::invalid("patch grid needs at least one patch"));
        }
        if rows / patch_rows < 3 || cols / patch_cols < 3 {
            return Err(Error::invalid(format!(
                "{patch_rows}x{patch_cols} patches over {rows}x{cols} leaves patches smaller than 3x3"
            )));
        }
        let row_ranges = split(rows, patch_rows);
        let col_ranges = split(cols, patch_cols);
        let mut bases = Vec::with_capacity(patch_rows * patch_cols);
        for rr in &row_ranges {
            for cr in &col_ranges {
                bases.push(QuadraticBasis::new(rr.clone(), cr.clone()));
            }
        }
        Ok(Self {
            rows,
            cols,
            patch_rows,
            patch_cols,
            row_ranges,
            col_ranges,
            bases,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn patch_counts(&self) -> (usize, usize) {
        (self.patch_rows, self.patch_cols)
    }

    /// Number of patches `K`.
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn basis(&self, k: usize) -> &QuadraticBasis {
        &self.bases[k]
    }

    pub fn bases(&self) -> &[QuadraticBasis] {
        &self.bases
    }

    pub fn row_ranges(&self) -> &[Range<usize>] {
        &self.row_ranges
    }

    pub fn col_ranges(&self) -> &[Range<usize>] {
        &self.col_ranges
    }

    pub fn patch_of(&self, r: usize, c: usize) -> usize {
        let pr = (r / (self.rows / self.patch_rows)).min(self.patch_rows - 1);
        let pc = (c / (self.cols / self.patch_cols)).min(self.patch_cols - 1);
        pr * self.patch_cols + pc
    }

    fn check_shape<T>(&self, g: &Grid<T>) -> Result<()> {
        if g.shape() != (self.rows, self.cols) {
            return Err(Error::DimensionMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows: g.rows(),
                cols: g.cols(),
            });
        }
        Ok(())
    }

    /// Extracts patch `k` as a row-major vector.
    pub fn extract(&self, g: &Grid<f64>, k: usize) -> Vec<f64> {
        let b = &self.bases[k];
        let mut out = Vec::with_capacity(b.len());
        for r in b.rows.clone() {
            out.extend_from_slice(&g.row(r)[b.cols.clone()]);
        }
        out
    }

    /// Fits a quadratic to every patch of `x`, optionally weighted.
    pub fn fit_all(&self, x: &Grid<f64>, weights: Option<&Grid<f64>>) -> Result<Vec<QuadCoeffs>> {
        self.check_shape(x)?;
        if let Some(w) = weights {
            self.check_shape(w)?;
        }
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                let values = self.extract(x, k);
                let w = weights.map(|w| self.extract(w, k));
                fit_patch_quadratic(&values, &self.bases[k], w.as_deref())
                    .map_err(|_| Error::SingularFit { patch: k })
            })
            .collect()
    }

    /// Evaluates the piecewise quadratic surface `U a_k` over the whole image.
    pub fn evaluate(&self, coeffs: &[QuadCoeffs]) -> Result<Grid<f64>> {
        if coeffs.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficient vectors, got {}",
                self.len(),
                coeffs.len()
            )));
        }
        let mut out = Grid::zeros(self.rows, self.cols);
        for (b, a) in self.bases.iter().zip(coeffs) {
            for r in b.rows.clone() {
                for c in b.cols.clone() {
                    out[(r, c)] = b.eval(a, r, c);
                }
            }
        }
        Ok(out)
    }

    /// `Σ_k ‖U a_k − x_k‖²`.
    pub fn quadratic_penalty(&self, x: &Grid<f64>, coeffs: &[QuadCoeffs]) -> Result<f64> {
        let q = self.evaluate(coeffs)?;
        self.check_shape(x)?;
        Ok(x.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

/// Design matrix of the quadratic prior for one patch. Pixel coordinates are
/// centred on the patch and scaled to `[-1, 1]`; `u` runs along columns and
/// `v` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBasis {
    rows: Range<usize>,
    cols: Range<usize>,
    row_center: f64,
    row_half: f64,
    col_center: f64,
    col_half: f64,
}

impl QuadraticBasis {
    pub fn new(rows: Range<usize>, cols: Range<usize>) -> Self {
        let half = |r: &Range<usize>| ((r.len() as f64 - 1.0) / 2.0).max(0.5);
        let center = |r: &Range<usize>| (r.start + r.end - 1) as f64 / 2.0;
        Self {
            row_center: center(&rows),
            row_half: half(&rows),
            col_center: center(&cols),
            col_half: half(&cols),
            rows,
            cols,
        }
    }

    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn cols(&self) -> Range<usize> {
        self.cols.clone()
    }

    /// Pixel count `N_k`.
    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalised `(u, v)` for image pixel `(r, c)`.
    #[inline]
    pub fn coords(&self, r: usize, c: usize) -> (f64, f64) {
        (
            (c as f64 - self.col_center) / self.col_half,
            (r as f64 - self.row_center) / self.row_half,
        )
    }

    #[inline]
    pub fn features(&self, r: usize, c: usize) -> [f64; 6] {
        let (u, v) = self.coords(r, c);
        [u * u, u * v, v * v, u, v, 1.0]
    }

    #[inline]
    pub fn eval(&self, a: &QuadCoeffs, r: usize, c: usize) -> f64 {
        let f = self.features(r, c);
        f.iter().zip(a).map(|(x, y)| x * y).sum()
    }

    /// Image pixels of the patch in the same row-major order as
    /// [`PatchGrid::extract`].
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .clone()
            .flat_map(move |r| self.cols.clone().map(move |c| (r, c)))
    }
}

/// (Weighted) least-squares quadratic through a patch.
///
/// `values` (and `weights`, if any) are in patch row-major order.
pub fn fit_patch_quadratic(
    values: &[f64],
    basis: &QuadraticBasis,
    weights: Option<&[f64]>,
) -> Result<QuadCoeffs> {
    if values.len() != basis.len() {
        return Err(Error::invalid(format!(
            "patch has {} pixels, got {} values",
            basis.len(),
            values.len()
        )));
    }
    if basis.len() < 6 {
        return Err(Error::invalid("a quadratic fit needs at least 6 pixels"));
    }
    if let Some(w) = weights {
        if w.len() != values.len() {
            return Err(Error::invalid("weights and values differ in length"));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
    }
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for (i, (r, c)) in basis.pixels().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let f = Vector6::from(basis.features(r, c));
        ata += f * f.transpose() * w;
        atb += f * (w * values[i]);
    }
    let chol = ata.cholesky().ok_or(Error::SingularFit { patch: 0 })?;
    // Cholesky succeeds on nearly singular systems too; reject those.
    let diag = chol.l().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if !(lo > 1e-7 * hi) {
        return Err(Error::SingularFit { patch: 0 });
    }
    let a = chol.solve(&atb);
    Ok([a[0], a[1], a[2], a[3], a[4], a[5]])
}

/// Vertical mirror about `flip_row`. The bottom `excluded_bottom_rows` rows
/// and rows whose mirror leaves the usable region have no partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipOperator {
    pub flip_row: usize,
    pub excluded_bottom_rows: usize,
}

impl FlipOperator {
    pub fn new(flip_row: usize, excluded_bottom_rows: usize) -> Self {
        Self {
            flip_row,
            excluded_bottom_rows,
        }
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.flip_row >= rows {
            return Err(Error::invalid(format!(
                "flip row {} outside image of {rows} rows",
                self.flip_row
            )));
        }
        if self.excluded_bottom_rows >= rows {
            return Err(Error::invalid("excluded rows cover the whole image"));
        }
        Ok(())
    }

    /// Partner row of `r`, if it has one.
    #[inline]
    pub fn mirror(&self, r: usize, rows: usize) -> Option<usize> {
        let usable = rows.saturating_sub(self.excluded_bottom_rows);
        if r >= usable {
            return None;
        }
        let m = (2 * self.flip_row).checked_sub(r)?;
        (m < usable).then_some(m)
    }

    /// Mirror table for an image with `rows` rows.
    pub fn mirror_table(&self, rows: usize) -> Vec<Option<usize>> {
        (0..rows).map(|r| self.mirror(r, rows)).collect()
    }
}

/// `F x`: rows with a partner take the partner's values, others pass through.
pub fn apply_flip(x: &Grid<f64>, op: &FlipOperator) -> Grid<f64> {
    let rows = x.rows();
    let mut out = x.clone();
    for r in 0..rows {
        if let Some(m) = op.mirror(r, rows) {
            let src = x.row(m).to_vec();
            let start = out.index(r, 0);
            out.as_mut_slice()[start..start + x.cols()].copy_from_slice(&src);
        }
    }
    out
}

/// `‖F x − x‖²`.
pub fn symmetry_penalty(x: &Grid<f64>, op: &FlipOperator) -> f64 {
    let rows = x.rows();
    let mut total = 0.0;
    for r in 0..rows {
        if let Some(m) = op.mirror(r, rows) {
            total += x
                .row(r)
                .iter()
                .zip(x.row(m))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    total
}

/// `‖∇x‖²` with forward differences along both axes; the last row and column
/// contribute no difference.
pub fn gradient_penalty(x: &Grid<f64>) -> f64 {
    let (rows, cols) = x.shape();
    let mut total = 0.0;
    for r in 0..rows {
        let row = x.row(r);
        for c in 0..cols {
            if c + 1 < cols {
                let d = row[c + 1] - row[c];
                total += d * d;
            }
            if r + 1 < rows {
                let d = x[(r + 1, c)] - row[c];
                total += d * d;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis_3x4() -> QuadraticBasis {
        QuadraticBasis::new(10..13, 20..24)
    }

    #[test]
    fn patch_grid_tiles_exactly() {
        let g = PatchGrid::new(424, 512, 4, 4).unwrap();
        assert_eq!(g.len(), 16);
        for b in g.bases() {
            assert_eq!((b.rows().len(), b.cols().len()), (106, 128));
        }
        let g = PatchGrid::new(23, 17, 3, 2).unwrap();
        let mut seen = Grid::filled(23, 17, 0u32);
        for (k, b) in g.bases().iter().enumerate() {
            for (r, c) in b.pixels() {
                seen[(r, c)] += 1;
                assert_eq!(g.patch_of(r, c), k);
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
        // trailing patches absorb the remainder
        assert_eq!(g.basis(5).rows(), 14..23);
        assert_eq!(g.basis(5).cols(), 8..17);
    }

    #[test]
    fn patch_grid_rejects_tiny_patches() {
        assert!(PatchGrid::new(8, 8, 4, 2).is_err());
        assert!(PatchGrid::new(8, 8, 0, 2).is_err());
        assert!(PatchGrid::new(9, 9, 3, 3).is_ok());
    }

    #[test]
    fn recovers_exact_quadratic() {
        let b = basis_3x4();
        let values: Vec<f64> = b
            .pixels()
            .map(|(r, c)| {
                let (u, _) = b.coords(r, c);
                3.0 * u * u - u + 2.0
            })
            .collect();
        let a = fit_patch_quadratic(&values, &b, None).unwrap();
        let expected = [3.0, 0.0, 0.0, -1.0, 0.0, 2.0];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12, "{a:?}");
        }
        let resid: f64 = b
            .pixels()
            .zip(&values)
            .map(|((r, c), v)| (b.eval(&a, r, c) - v).abs())
            .sum();
        assert!(resid < 1e-12);
    }

    #[test]
    fn constant_patch() {
        let b = basis_3x4();
        let a = fit_patch_quadratic(&[5.0; 12], &b, None).unwrap();
        for (i, x) in a.iter().enumerate() {
            let want = if i == 5 { 5.0 } else { 0.0 };
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_spike_is_ignored() {
        let b = QuadraticBasis::new(0..5, 0..5);
        let truth = [0.5, -0.25, 1.5, 2.0, -1.0, 4.0];
        let mut values: Vec<f64> = b.pixels().map(|(r, c)| b.eval(&truth, r, c)).collect();
        let mut weights = vec![1.0; values.len()];
        values[7] += 1000.0;
        weights[7] = 0.0;
        let a = fit_patch_quadratic(&values, &b, Some(&weights)).unwrap();
        for (x, y) in a.iter().zip(truth) {
            assert!((x - y).abs() < 1e-10);
        }
        // and the unweighted fit is pulled away
        let a = fit_patch_quadratic(&values, &b, None).unwrap();
        assert!((a[5] - truth[5]).abs() > 1.0);
    }

    #[test]
    fn weighted_fit_matches_dense_normal_equations() {
        // independent route: build U explicitly and solve UᵀWU a = UᵀW y
        let b = QuadraticBasis::new(3..7, 11..16);
        let values: Vec<f64> = (0..b.len()).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let weights: Vec<f64> = (0..b.len()).map(|i| ((i * 13) % 7) as f64 / 7.0).collect();
        let u = nalgebra::DMatrix::from_fn(b.len(), 6, |i, j| {
            let r = 3 + i / 5;
            let c = 11 + i % 5;
            let uu = (c as f64 - 13.0) / 2.0;
            let vv = (r as f64 - 4.5) / 1.5;
            [uu * uu, uu * vv, vv * vv, uu, vv, 1.0][j]
        });
        let w = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(weights.clone()));
        let y = nalgebra::DVector::from_vec(values.clone());
        let lhs = u.transpose() * &w * &u;
        let rhs = u.transpose() * &w * y;
        let oracle = lhs.lu().solve(&rhs).unwrap();
        let a = fit_patch_quadratic(&values, &b, Some(&weights)).unwrap();
        for j in 0..6 {
            assert!((a[j] - oracle[j]).abs() < 1e-10, "{j}: {} vs {}", a[j], oracle[j]);
        }
    }

    #[test]
    fn singular_fit_is_reported() {
        let b = QuadraticBasis::new(0..3, 0..3);
        let w = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            fit_patch_quadratic(&[1.0; 9], &b, Some(&w)),
            Err(Error::SingularFit { .. })
        ));
        assert!(fit_patch_quadratic(&[1.0; 8], &b, None).is_err());
    }

    #[test]
    fn refit_is_idempotent() {
        let g = PatchGrid::new(12, 12, 2, 2).unwrap();
        let x = Grid::from_fn(12, 12, |r, c| ((r * 7 + c * 3) % 5) as f64);
        let a = g.fit_all(&x, None).unwrap();
        let surface = g.evaluate(&a).unwrap();
        let b = g.fit_all(&surface, None).unwrap();
        for (p, q) in a.iter().zip(&b) {
            for (s, t) in p.iter().zip(q) {
                assert!((s - t).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flip_delta_and_involution() {
        let op = FlipOperator::new(20, 3);
        let mut x = Grid::zeros(40, 4);
        x[(10, 2)] = 1.0;
        let y = apply_flip(&x, &op);
        assert_eq!(y[(30, 2)], 1.0);
        // row 10 itself is overwritten by its (empty) partner row 30
        assert_eq!(y[(10, 2)], 0.0);
        let z = Grid::from_fn(40, 4, |r, c| (r * 4 + c) as f64);
        let twice = apply_flip(&apply_flip(&z, &op), &op);
        let once = apply_flip(&z, &op);
        for r in 0..40 {
            if op.mirror(r, 40).is_some() {
                assert_eq!(twice.row(r), z.row(r));
            } else {
                assert_eq!(once.row(r), z.row(r));
            }
        }
    }

    #[test]
    fn mirror_table_respects_exclusions() {
        // Kinect layout: flip row 200, 24 excluded rows, 424 rows
        let op = FlipOperator::new(200, 24);
        assert_eq!(op.mirror(0, 424), None);
        assert_eq!(op.mirror(1, 424), Some(399));
        assert_eq!(op.mirror(200, 424), Some(200));
        assert_eq!(op.mirror(399, 424), Some(1));
        assert_eq!(op.mirror(400, 424), None);
        assert_eq!(op.mirror(423, 424), None);
        assert!(op.validate(424).is_ok());
        assert!(FlipOperator::new(424, 0).validate(424).is_err());
    }

    #[test]
    fn symmetric_image_is_fixed_point() {
        let op = FlipOperator::new(6, 2);
        let x = Grid::from_fn(16, 5, |r, c| ((r as f64 - 6.0).powi(2) + c as f64).sqrt());
        let y = apply_flip(&x, &op);
        for r in 0..16 {
            assert_eq!(y.row(r), x.row(r), "row {r}");
        }
        assert_eq!(symmetry_penalty(&x, &op), 0.0);
    }

    #[test]
    fn symmetry_penalty_matches_flip_residual() {
        let op = FlipOperator::new(5, 1);
        let x = Grid::from_fn(13, 3, |r, c| ((r * 31 + c * 17) % 13) as f64);
        let fx = apply_flip(&x, &op);
        let direct: f64 = fx.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((symmetry_penalty(&x, &op) - direct).abs() < 1e-12);
        assert!(symmetry_penalty(&x, &op) > 0.0);
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        assert_eq!(gradient_penalty(&Grid::filled(7, 9, 3.5)), 0.0);
        let s = 0.75;
        let ramp = Grid::from_fn(6, 10, |_, c| s * c as f64);
        // 6 rows * 9 horizontal pairs, no vertical change
        assert!((gradient_penalty(&ramp) - s * s * 54.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gradient_matches_brute_force(vals in prop::collection::vec(-10.0f64..10.0, 30)) {
            let x = Grid::from_vec(5, 6, vals).unwrap();
            let mut brute = 0.0;
            for r in 0..5 {
                for c in 0..6 {
                    for (dr, dc) in [(0usize, 1usize), (1, 0)] {
                        if r + dr < 5 && c + dc < 6 {
                            let d = x[(r + dr, c + dc)] - x[(r, c)];
                            brute += d * d;
                        }
                    }
                }
            }
            prop_assert!((gradient_penalty(&x) - brute).abs() <= 1e-9 * brute.max(1.0));
        }

        #[test]
        fn penalties_are_quadratic_forms(vals in prop::collection::vec(-10.0f64..10.0, 48), lambda in -5.0f64..5.0) {
            let x = Grid::from_vec(8, 6, vals).unwrap();
            let y = x.map(|v| v * lambda);
            let op = FlipOperator::new(3, 1);
            let g = PatchGrid::new(8, 6, 2, 2).unwrap();
            let l2 = lambda * lambda;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
            prop_assert!(close(symmetry_penalty(&y, &op), l2 * symmetry_penalty(&x, &op)));
            prop_assert!(close(gradient_penalty(&y), l2 * gradient_penalty(&x)));
            // patch residual of the best fit: the fit is linear so it scales too
            let ax = g.fit_all(&x, None).unwrap();
            let ay = g.fit_all(&y, None).unwrap();
            prop_assert!(close(g.quadratic_penalty(&y, &ay).unwrap(), l2 * g.quadratic_penalty(&x, &ax).unwrap()));
        }
    }
}
