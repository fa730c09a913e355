//! Univariate functional PCA: eigendecomposition of an estimated covariance
//! surface and score computation.
//!
//! The integral covariance operator is discretized with the trapezoid
//! weights W of the grid: eigenpairs of `W^(1/2) C W^(1/2)` are computed and
//! the eigenvectors mapped back through `W^(-1/2)`, so the resulting
//! eigenfunctions are orthonormal in the quadrature inner product rather
//! than the Euclidean one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{SamplingGrid, UnivariateSample};

/// How many eigencomponents to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Keep the smallest J whose eigenvalues explain at least this share of
    /// the total positive variance. Must lie in (0, 1].
    Ratio(f64),
    /// Keep exactly this many components (capped at the positive count).
    Fixed(usize),
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Truncation::Ratio(r) if r > 0.0 && r <= 1.0 => Ok(()),
            Truncation::Ratio(r) => Err(Error::InvalidInput(format!(
                "explained-variance ratio must be in (0, 1], got {r}"
            ))),
            Truncation::Fixed(j) if j >= 1 => Ok(()),
            Truncation::Fixed(_) => {
                Err(Error::InvalidInput("fixed truncation must keep at least 1 component".into()))
            }
        }
    }

    /// Number of leading components to keep from `eigenvalues` (positive,
    /// nonincreasing).
    fn n_kept(&self, eigenvalues: &[f64]) -> usize {
        match *self {
            Truncation::Fixed(j) => j.min(eigenvalues.len()).max(1),
            Truncation::Ratio(r) => {
                let total: f64 = eigenvalues.iter().sum();
                if total <= 0.0 {
                    return 1;
                }
                let mut acc = 0.0;
                for (i, ev) in eigenvalues.iter().enumerate() {
                    acc += ev;
                    if acc / total >= r {
                        return i + 1;
                    }
                }
                eigenvalues.len()
            }
        }
    }
}

/// Estimated eigenstructure of one component.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnivariateBasis {
    pub grid: SamplingGrid,
    pub mean: DVector<f64>,
    /// Strictly positive, nonincreasing (all zero only in the degenerate case).
    pub eigenvalues: Vec<f64>,
    /// Row j holds eigenfunction j sampled on the grid; rows are orthonormal
    /// in the quadrature inner product.
    pub eigenfunctions: DMatrix<f64>,
    /// Set when the covariance had no positive eigenvalues.
    pub degenerate: bool,
}

impl UnivariateBasis {
    pub fn n_kept(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Make the entry of largest magnitude positive (earliest index on ties).
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    let mut best_abs = v[0].abs();
    for (i, x) in v.iter().enumerate().skip(1) {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Sorted positive eigenpairs of a symmetric matrix (descending; ties keep
/// the original ordering). Eigenvalues at or below `max(rel_cut * largest,
/// abs_cut)` are dropped; `abs_cut` separates genuine variance from the
/// roundoff floor of the covariance assembly.
pub(crate) fn positive_eigenpairs(
    mat: &DMatrix<f64>,
    rel_cut: f64,
    abs_cut: f64,
) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(mat.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let max = order.first().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0);
    let cutoff = if max > 0.0 { rel_cut * max } else { 0.0 }.max(abs_cut);
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &i in &order {
        let ev = eig.eigenvalues[i];
        if ev > cutoff && ev > 0.0 {
            values.push(ev);
            vectors.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    (values, vectors)
}

/// Eigenanalysis of a covariance surface in the quadrature geometry.
///
/// Negative eigenvalues are clipped away; if none are positive the result is
/// a single zero-eigenvalue basis flagged degenerate.
pub fn fit_ufpca(
    covariance: &DMatrix<f64>,
    mean: &DVector<f64>,
    grid: &SamplingGrid,
    truncation: Truncation,
) -> Result<UnivariateBasis> {
    truncation.validate()?;
    let m = grid.len();
    if covariance.nrows() != m || covariance.ncols() != m {
        return Err(Error::GridMismatch(format!(
            "covariance is {}x{}, grid has {m} points",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    if mean.len() != m {
        return Err(Error::GridMismatch(format!(
            "mean has {} points, grid has {m}",
            mean.len()
        )));
    }

    let w = grid.trapezoid_weights();
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            // symmetrize while weighting
            let v = 0.5 * (covariance[(i, j)] + covariance[(j, i)]) * sqrt_w[i] * sqrt_w[j];
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }

    // roundoff floor of the covariance assembly (cancellation noise scales
    // with the squared data magnitude)
    let scale = 1.0 + mean.amax().powi(2) + covariance.amax();
    let (mut values, vectors) = positive_eigenpairs(&k, 1e-12, 1e-12 * scale);

    if values.is_empty() {
        // degenerate covariance: a single flat function with zero variance
        let flat = vec![1.0 / grid.range().sqrt(); m];
        return Ok(UnivariateBasis {
            grid: grid.clone(),
            mean: mean.clone(),
            eigenvalues: vec![0.0],
            eigenfunctions: DMatrix::from_row_slice(1, m, &flat),
            degenerate: true,
        });
    }

    let n_kept = truncation.n_kept(&values);
    values.truncate(n_kept);
    let mut eigenfunctions = DMatrix::zeros(n_kept, m);
    for (j, u) in vectors.iter().take(n_kept).enumerate() {
        let mut row: Vec<f64> = (0..m).map(|i| u[i] / sqrt_w[i]).collect();
        fix_sign(&mut row);
        for (i, v) in row.iter().enumerate() {
            eigenfunctions[(j, i)] = *v;
        }
    }

    Ok(UnivariateBasis {
        grid: grid.clone(),
        mean: mean.clone(),
        eigenvalues: values,
        eigenfunctions,
        degenerate: false,
    })
}

/// Quadrature scores of the centered sample against the basis:
/// `c_{n,j} = <X_n - mean, rho_j>`. Returns an N x J matrix.
pub fn compute_scores(sample: &UnivariateSample, basis: &UnivariateBasis) -> Result<DMatrix<f64>> {
    if sample.grid != basis.grid {
        return Err(Error::GridMismatch(
            "sample and basis are on different grids".into(),
        ));
    }
    let m = basis.grid.len();
    let w = basis.grid.trapezoid_weights();
    // weighted eigenfunctions: (W rho_j), laid out M x J
    let j_count = basis.n_kept();
    let mut wf = DMatrix::zeros(m, j_count);
    for j in 0..j_count {
        for i in 0..m {
            wf[(i, j)] = w[i] * basis.eigenfunctions[(j, i)];
        }
    }
    let mut centered = sample.values.clone();
    for mut row in centered.row_iter_mut() {
        for (v, mu) in row.iter_mut().zip(basis.mean.iter()) {
            *v -= mu;
        }
    }
    Ok(centered * wf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::inner_product_uni;
    use approx::assert_abs_diff_eq;

    fn uniform_grid(m: usize) -> SamplingGrid {
        SamplingGrid::uniform(0.0, 1.0, m).unwrap()
    }

    fn quadrature_normalized(f: &[f64], grid: &SamplingGrid) -> Vec<f64> {
        let v = DVector::from_row_slice(f);
        let norm = inner_product_uni(&v, &v, grid).unwrap().sqrt();
        f.iter().map(|x| x / norm).collect()
    }

    #[test]
    fn rank_one_surface_is_recovered() {
        let grid = uniform_grid(101);
        let lambda = 2.5;
        let phi = quadrature_normalized(
            &grid
                .points()
                .iter()
                .map(|&t| (std::f64::consts::PI * t).sin() + 0.3)
                .collect::<Vec<_>>(),
            &grid,
        );
        let m = grid.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] = lambda * phi[i] * phi[j];
            }
        }
        let mean = DVector::zeros(m);
        let basis = fit_ufpca(&cov, &mean, &grid, Truncation::Ratio(0.99)).unwrap();
        assert!(!basis.degenerate);
        assert_eq!(basis.n_kept(), 1);
        assert_abs_diff_eq!(basis.eigenvalues[0], lambda, epsilon = 1e-8);
        // eigenfunction equals phi up to sign
        let dot: f64 = inner_product_uni(
            &basis.eigenfunctions.row(0).transpose(),
            &DVector::from_row_slice(&phi),
            &grid,
        )
        .unwrap();
        assert_abs_diff_eq!(dot.abs(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn brownian_eigenvalues_match_analytic_values() {
        // covariance min(s, t): eigenvalues 1 / ((k - 1/2) pi)^2
        let grid = uniform_grid(201);
        let m = grid.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] = grid.points()[i].min(grid.points()[j]);
            }
        }
        let mean = DVector::zeros(m);
        let basis = fit_ufpca(&cov, &mean, &grid, Truncation::Fixed(3)).unwrap();
        for k in 1..=3usize {
            let analytic = 1.0 / ((k as f64 - 0.5) * std::f64::consts::PI).powi(2);
            let rel = (basis.eigenvalues[k - 1] - analytic).abs() / analytic;
            assert!(rel < 0.01, "eigenvalue {k}: rel err {rel}");
        }
        // frozen analytic references
        assert_abs_diff_eq!(basis.eigenvalues[0], 0.405_284_734_569_351_1, epsilon = 4e-3);
        assert_abs_diff_eq!(basis.eigenvalues[1], 0.045_031_637_174_372_35, epsilon = 5e-4);
    }

    #[test]
    fn zero_surface_is_degenerate() {
        let grid = uniform_grid(21);
        let cov = DMatrix::zeros(21, 21);
        let mean = DVector::zeros(21);
        let basis = fit_ufpca(&cov, &mean, &grid, Truncation::Ratio(0.95)).unwrap();
        assert!(basis.degenerate);
        assert_eq!(basis.eigenvalues, vec![0.0]);
        assert_eq!(basis.n_kept(), 1);
    }

    #[test]
    fn eigenfunctions_are_quadrature_orthonormal() {
        let grid = uniform_grid(101);
        let m = grid.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] = grid.points()[i].min(grid.points()[j]);
            }
        }
        let basis = fit_ufpca(&cov, &DVector::zeros(m), &grid, Truncation::Fixed(4)).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let ip = inner_product_uni(
                    &basis.eigenfunctions.row(a).transpose(),
                    &basis.eigenfunctions.row(b).transpose(),
                    &grid,
                )
                .unwrap();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn kept_eigenvalue_mass_is_bounded_by_quadrature_trace() {
        let grid = uniform_grid(101);
        let m = grid.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] = grid.points()[i].min(grid.points()[j]);
            }
        }
        let basis = fit_ufpca(&cov, &DVector::zeros(m), &grid, Truncation::Ratio(0.999)).unwrap();
        let w = grid.trapezoid_weights();
        let trace: f64 = (0..m).map(|i| w[i] * cov[(i, i)]).sum();
        let kept: f64 = basis.eigenvalues.iter().sum();
        assert!(kept <= trace + 1e-8, "kept {kept} vs trace {trace}");
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let mut v = vec![0.2, -0.9, 0.5];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.2, 0.9, -0.5]);
        let mut v2 = vec![0.9, -0.2, 0.5];
        fix_sign(&mut v2);
        assert_eq!(v2, vec![0.9, -0.2, 0.5]);
        // tie: earliest index wins
        let mut v3 = vec![-0.5, 0.5];
        fix_sign(&mut v3);
        assert_eq!(v3, vec![0.5, -0.5]);
    }

    fn brownian_basis(grid: &SamplingGrid, j: usize) -> UnivariateBasis {
        let m = grid.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for jj in 0..m {
                cov[(i, jj)] = grid.points()[i].min(grid.points()[jj]);
            }
        }
        fit_ufpca(&cov, &DVector::zeros(m), grid, Truncation::Fixed(j)).unwrap()
    }

    #[test]
    fn score_of_the_mean_curve_is_zero() {
        let grid = uniform_grid(101);
        let mut basis = brownian_basis(&grid, 3);
        basis.mean = DVector::from_iterator(101, grid.points().iter().map(|&t| 1.0 + t));
        let values = DMatrix::from_row_slice(
            1,
            101,
            basis.mean.transpose().as_slice(),
        );
        let sample = UnivariateSample::new(grid, values).unwrap();
        let scores = compute_scores(&sample, &basis).unwrap();
        for s in scores.iter() {
            assert_abs_diff_eq!(*s, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_of_mean_plus_two_eigenfunctions_is_two() {
        let grid = uniform_grid(101);
        let basis = brownian_basis(&grid, 3);
        let mut row = vec![0.0; 101];
        for i in 0..101 {
            row[i] = basis.mean[i] + 2.0 * basis.eigenfunctions[(0, i)];
        }
        let sample = UnivariateSample::new(grid, DMatrix::from_row_slice(1, 101, &row)).unwrap();
        let scores = compute_scores(&sample, &basis).unwrap();
        assert_abs_diff_eq!(scores[(0, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(scores[(0, 1)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(scores[(0, 2)], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn scores_reject_grid_mismatch() {
        let grid = uniform_grid(101);
        let basis = brownian_basis(&grid, 2);
        let other = uniform_grid(51);
        let sample = UnivariateSample::new(other, DMatrix::zeros(1, 51)).unwrap();
        assert!(compute_scores(&sample, &basis).is_err());
    }

    #[test]
    fn truncation_ratio_keeps_smallest_sufficient_count() {
        let evs = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(Truncation::Ratio(0.39).n_kept(&evs), 1);
        assert_eq!(Truncation::Ratio(0.40).n_kept(&evs), 1);
        assert_eq!(Truncation::Ratio(0.41).n_kept(&evs), 2);
        assert_eq!(Truncation::Ratio(1.0).n_kept(&evs), 4);
        assert_eq!(Truncation::Fixed(2).n_kept(&evs), 2);
        assert_eq!(Truncation::Fixed(9).n_kept(&evs), 4);
    }
}
