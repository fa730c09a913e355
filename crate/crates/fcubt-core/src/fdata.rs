//! Sampled functional data: grids, samples, quadrature and inner products.
//!
//! A multivariate functional observation is a vector of `P` real curves,
//! each sampled on its own grid. The product-space inner product
//! `<f, g> = sum_p integral f_p g_p` is realized by trapezoid quadrature on
//! the component grids; every projection and orthonormality statement in the
//! crate is relative to this discrete inner product.
//!
//! All types are immutable after construction and safe to share across
//! threads.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, finite sampling locations of one component domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    points: Vec<f64>,
}

impl SamplingGrid {
    /// Build a grid, validating ordering and finiteness.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sampling grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("sampling grid has non-finite points".into()));
        }
        if !points.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "sampling grid points must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Equidistant grid of `len` points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidInput("uniform grid needs at least 2 points".into()));
        }
        let step = (end - start) / (len - 1) as f64;
        Self::new((0..len).map(|i| start + step * i as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid grid always has at least 2 points
    }

    /// Length of the covered interval.
    pub fn range(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }

    /// Trapezoid quadrature weights; nonnegative and summing to `range()`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let m = self.points.len();
        let mut w = vec![0.0; m];
        for i in 0..m - 1 {
            let half = 0.5 * (self.points[i + 1] - self.points[i]);
            w[i] += half;
            w[i + 1] += half;
        }
        w
    }
}

/// N curves of one component, all sampled on a shared grid (rows = curves).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateSample {
    pub grid: SamplingGrid,
    pub values: DMatrix<f64>,
}

impl UnivariateSample {
    pub fn new(grid: SamplingGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "value rows have {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }
}

/// One multivariate curve: its `P` component value vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiCurve {
    pub components: Vec<DVector<f64>>,
}

impl MultiCurve {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// A sample of N multivariate curves with P components; component grids may
/// differ, row n of every component belongs to curve n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiFunData {
    components: Vec<UnivariateSample>,
}

impl MultiFunData {
    pub fn new(components: Vec<UnivariateSample>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidInput("need at least one component".into()));
        };
        let n = first.n_curves();
        if components.iter().any(|c| c.n_curves() != n) {
            return Err(Error::InvalidInput(
                "all components must hold the same number of curves".into(),
            ));
        }
        Ok(Self { components })
    }

    pub fn n_curves(&self) -> usize {
        self.components[0].n_curves()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[UnivariateSample] {
        &self.components
    }

    pub fn component(&self, p: usize) -> &UnivariateSample {
        &self.components[p]
    }

    pub fn grids(&self) -> Vec<SamplingGrid> {
        self.components.iter().map(|c| c.grid.clone()).collect()
    }

    /// True when `other` is sampled on exactly the same grids.
    pub fn same_grids(&self, other: &MultiFunData) -> bool {
        self.n_components() == other.n_components()
            && self
                .components
                .iter()
                .zip(other.components.iter())
                .all(|(a, b)| a.grid == b.grid)
    }

    /// Extract curve `n` as an owned [`MultiCurve`].
    pub fn curve(&self, n: usize) -> MultiCurve {
        MultiCurve {
            components: self
                .components
                .iter()
                .map(|c| c.values.row(n).transpose())
                .collect(),
        }
    }

    /// Restrict the sample to the given curve indices (in the given order).
    pub fn subset(&self, ids: &[usize]) -> MultiFunData {
        let components = self
            .components
            .iter()
            .map(|c| {
                let mut values = DMatrix::zeros(ids.len(), c.grid.len());
                for (row, &id) in ids.iter().enumerate() {
                    values.row_mut(row).copy_from(&c.values.row(id));
                }
                UnivariateSample {
                    grid: c.grid.clone(),
                    values,
                }
            })
            .collect();
        MultiFunData { components }
    }

    /// Pointwise mean curve of the sample.
    pub fn mean_curve(&self) -> MultiCurve {
        MultiCurve {
            components: self
                .components
                .iter()
                .map(|c| {
                    let n = c.n_curves() as f64;
                    DVector::from_iterator(
                        c.grid.len(),
                        c.values.column_iter().map(|col| col.sum() / n),
                    )
                })
                .collect(),
        }
    }
}

/// One irregularly observed component of a raw curve: paired observation
/// times (strictly increasing) and noisy values.
#[derive(Clone, Debug, PartialEq)]
pub struct RawComponent {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl RawComponent {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::NotEnoughData(format!(
                "raw component needs at least 2 observations, got {}",
                times.len()
            )));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "times and values lengths differ: {} vs {}",
                times.len(),
                values.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("raw component has non-finite entries".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "raw observation times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }
}

/// One multivariate observation before smoothing: per-component observation
/// pairs, possibly on different and irregular time sets.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCurve {
    pub components: Vec<RawComponent>,
}

impl RawCurve {
    pub fn new(components: Vec<RawComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("raw curve needs at least one component".into()));
        }
        Ok(Self { components })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

fn check_curve_layout(f: &MultiCurve, grids: &[SamplingGrid], what: &str) -> Result<()> {
    if f.n_components() != grids.len() {
        return Err(Error::GridMismatch(format!(
            "{what} has {} components, layout has {}",
            f.n_components(),
            grids.len()
        )));
    }
    for (p, (comp, grid)) in f.components.iter().zip(grids.iter()).enumerate() {
        if comp.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{what} component {p} has {} values, grid has {} points",
                comp.len(),
                grid.len()
            )));
        }
    }
    Ok(())
}

/// Product-space inner product `sum_p integral f_p g_p` by trapezoid
/// quadrature on the component grids. Symmetric and bilinear.
pub fn inner_product(f: &MultiCurve, g: &MultiCurve, grids: &[SamplingGrid]) -> Result<f64> {
    check_curve_layout(f, grids, "f")?;
    check_curve_layout(g, grids, "g")?;
    let mut acc = 0.0;
    for (p, grid) in grids.iter().enumerate() {
        let w = grid.trapezoid_weights();
        let fc = &f.components[p];
        let gc = &g.components[p];
        for m in 0..grid.len() {
            // f*g first so swapping the arguments is bitwise neutral
            acc += w[m] * (fc[m] * gc[m]);
        }
    }
    Ok(acc)
}

/// Univariate version of [`inner_product`] on a single grid.
pub fn inner_product_uni(f: &DVector<f64>, g: &DVector<f64>, grid: &SamplingGrid) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "inner product needs {} values per curve, got {} and {}",
            grid.len(),
            f.len(),
            g.len()
        )));
    }
    let w = grid.trapezoid_weights();
    Ok((0..grid.len()).map(|m| w[m] * (f[m] * g[m])).sum())
}

/// Subtract `mean` from every curve of `data`, component by component.
pub fn center(data: &MultiFunData, mean: &MultiCurve) -> Result<MultiFunData> {
    check_curve_layout(mean, &data.grids(), "mean")?;
    let components = data
        .components
        .iter()
        .zip(mean.components.iter())
        .map(|(c, m)| {
            let mut values = c.values.clone();
            for mut row in values.row_iter_mut() {
                for (v, mu) in row.iter_mut().zip(m.iter()) {
                    *v -= mu;
                }
            }
            UnivariateSample {
                grid: c.grid.clone(),
                values,
            }
        })
        .collect();
    Ok(MultiFunData { components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn wiener_eigenfunction(k: usize, grid: &SamplingGrid) -> DVector<f64> {
        let f = (k as f64 - 0.5) * std::f64::consts::PI;
        DVector::from_iterator(
            grid.len(),
            grid.points().iter().map(|&t| 2f64.sqrt() * (f * t).sin()),
        )
    }

    // independent quadrature oracle: plain trapezoid over (t, y) pairs
    fn trapezoid_oracle(ts: &[f64], ys: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..ts.len() - 1 {
            acc += 0.5 * (ys[i] + ys[i + 1]) * (ts[i + 1] - ts[i]);
        }
        acc
    }

    #[test]
    fn weights_sum_to_range_on_uniform_grid() {
        let grid = SamplingGrid::uniform(0.0, 1.0, 101).unwrap();
        let sum: f64 = grid.trapezoid_weights().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_two_point_grid() {
        let grid = SamplingGrid::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(grid.trapezoid_weights(), vec![0.5, 0.5]);
    }

    #[test]
    fn weights_three_point_grid() {
        let grid = SamplingGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(grid.trapezoid_weights(), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(SamplingGrid::new(vec![0.0]).is_err());
        assert!(SamplingGrid::new(vec![0.0, 0.0]).is_err());
        assert!(SamplingGrid::new(vec![1.0, 0.0]).is_err());
        assert!(SamplingGrid::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn inner_product_of_constant_one_is_one() {
        let grid = SamplingGrid::uniform(0.0, 1.0, 101).unwrap();
        let ones = MultiCurve {
            components: vec![DVector::from_element(101, 1.0)],
        };
        let ip = inner_product(&ones, &ones, &[grid]).unwrap();
        assert_abs_diff_eq!(ip, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn wiener_eigenfunctions_are_orthonormal_under_quadrature() {
        let grid = SamplingGrid::uniform(0.0, 1.0, 1001).unwrap();
        let phi1 = wiener_eigenfunction(1, &grid);
        let phi2 = wiener_eigenfunction(2, &grid);

        // oracle values from plain trapezoid on the analytic sines
        let prod12: Vec<f64> = phi1.iter().zip(phi2.iter()).map(|(a, b)| a * b).collect();
        let prod11: Vec<f64> = phi1.iter().map(|a| a * a).collect();
        let oracle12 = trapezoid_oracle(grid.points(), &prod12);
        let oracle11 = trapezoid_oracle(grid.points(), &prod11);
        assert_abs_diff_eq!(oracle12, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(oracle11, 1.0, epsilon = 1e-4);

        let f1 = MultiCurve {
            components: vec![phi1],
        };
        let f2 = MultiCurve {
            components: vec![phi2],
        };
        let grids = [grid];
        assert_abs_diff_eq!(inner_product(&f1, &f2, &grids).unwrap(), oracle12, epsilon = 1e-12);
        assert_abs_diff_eq!(inner_product(&f1, &f1, &grids).unwrap(), oracle11, epsilon = 1e-12);
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let grid = SamplingGrid::uniform(0.0, 1.0, 10).unwrap();
        let f = MultiCurve {
            components: vec![DVector::zeros(10)],
        };
        let g = MultiCurve {
            components: vec![DVector::zeros(9)],
        };
        assert!(inner_product(&f, &g, &[grid]).is_err());
    }

    fn small_sample() -> MultiFunData {
        let grid = SamplingGrid::uniform(0.0, 1.0, 5).unwrap();
        let values = DMatrix::from_row_slice(
            2,
            5,
            &[1.0, 2.0, 3.0, 4.0, 5.0, -1.0, -2.0, -3.0, -4.0, -5.0],
        );
        MultiFunData::new(vec![UnivariateSample::new(grid, values).unwrap()]).unwrap()
    }

    #[test]
    fn centering_with_zero_mean_is_identity() {
        let data = small_sample();
        let zero = MultiCurve {
            components: vec![DVector::zeros(5)],
        };
        let centered = center(&data, &zero).unwrap();
        assert_eq!(centered, data);
    }

    #[test]
    fn centering_with_sample_mean_zeroes_column_means() {
        let data = small_sample();
        let mean = data.mean_curve();
        let centered = center(&data, &mean).unwrap();
        for col in centered.component(0).values.column_iter() {
            assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn opposite_curves_have_zero_mean() {
        let data = small_sample();
        let mean = data.mean_curve();
        for v in mean.components[0].iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn subset_reorders_rows() {
        let data = small_sample();
        let sub = data.subset(&[1, 0]);
        assert_eq!(sub.curve(0), data.curve(1));
        assert_eq!(sub.curve(1), data.curve(0));
    }

    proptest! {
        #[test]
        fn quadrature_is_exact_for_linear_functions(
            raw in proptest::collection::vec(0.0f64..1.0, 3..30),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let mut pts = raw;
            pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            pts.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
            prop_assume!(pts.len() >= 2);
            let grid = SamplingGrid::new(pts).unwrap();
            let w = grid.trapezoid_weights();
            let quad: f64 = grid
                .points()
                .iter()
                .zip(w.iter())
                .map(|(&t, &wi)| wi * (a * t + b))
                .sum();
            let t0 = grid.points()[0];
            let t1 = grid.points()[grid.len() - 1];
            let exact = a * 0.5 * (t1 * t1 - t0 * t0) + b * (t1 - t0);
            prop_assert!((quad - exact).abs() < 1e-12 * (1.0 + exact.abs()));
        }

        #[test]
        fn inner_product_symmetry_and_cauchy_schwarz(
            fv in proptest::collection::vec(-10.0f64..10.0, 8),
            gv in proptest::collection::vec(-10.0f64..10.0, 8),
        ) {
            let grid = SamplingGrid::uniform(0.0, 1.0, 8).unwrap();
            let f = MultiCurve { components: vec![DVector::from_vec(fv)] };
            let g = MultiCurve { components: vec![DVector::from_vec(gv)] };
            let grids = [grid];
            let fg = inner_product(&f, &g, &grids).unwrap();
            let gf = inner_product(&g, &f, &grids).unwrap();
            prop_assert_eq!(fg, gf); // bitwise: same summation order
            let ff = inner_product(&f, &f, &grids).unwrap();
            let gg = inner_product(&g, &g, &grids).unwrap();
            prop_assert!(fg.abs() <= (ff * gg).sqrt() + 1e-12);
        }
    }
}
