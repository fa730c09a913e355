//! Curve reconstruction from noisy irregular observations, and estimation of
//! mean and covariance functions.
//!
//! Curves are smoothed one by one with a local polynomial estimator, then the
//! mean is the pointwise average and the covariance is the cross-moment
//! surface with its diagonal rebuilt from near-diagonal values. The diagonal
//! of the raw surface is inflated by the observation-noise variance, so it is
//! replaced by a quadratic extrapolation (in the anti-diagonal offset) of
//! noise-free off-diagonal entries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{MultiFunData, RawCurve, SamplingGrid, UnivariateSample};

/// Kernel used to weight observations around an evaluation point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    /// `K(u) = 0.75 (1 - u^2)` for `|u| <= 1`
    Epanechnikov,
    /// `K(u) = exp(-u^2 / 2)`
    Gaussian,
}

impl Kernel {
    fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp(),
        }
    }
}

/// Multiplier for the automatic bandwidth `h = AUTO_BANDWIDTH_SCALE * range
/// * M^(-1/5)`. Chosen so a local linear fit keeps the bias on curvatures of
/// order `(2 pi)^2` well below typical observation noise.
pub const AUTO_BANDWIDTH_SCALE: f64 = 0.2;

/// Bandwidth choice for the local polynomial smoother.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Rule of thumb `h = AUTO_BANDWIDTH_SCALE * range * M^(-1/5)` from the
    /// observation count M.
    Auto,
    Fixed(f64),
}

/// Configuration of the local polynomial smoother.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmootherConfig {
    /// Local polynomial degree, 0 to 2. Local linear is boundary-safe.
    pub degree: usize,
    pub bandwidth: Bandwidth,
    pub kernel: Kernel,
    pub output_grid: SamplingGrid,
}

impl SmootherConfig {
    /// Local linear smoother with Epanechnikov kernel and automatic
    /// bandwidth, evaluated on `output_grid`.
    pub fn default_on(output_grid: SamplingGrid) -> Self {
        Self {
            degree: 1,
            bandwidth: Bandwidth::Auto,
            kernel: Kernel::Epanechnikov,
            output_grid,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.degree > 2 {
            return Err(Error::InvalidInput(format!(
                "smoother degree must be 0, 1 or 2, got {}",
                self.degree
            )));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }

    fn bandwidth_for(&self, times: &[f64]) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Auto => {
                let range = times[times.len() - 1] - times[0];
                AUTO_BANDWIDTH_SCALE * range * (times.len() as f64).powf(-0.2)
            }
        }
    }
}

/// Weighted least-squares polynomial fit of `degree` at `t0`, returning the
/// fitted value there. `None` when the weighted design is singular.
fn wls_at(
    times: &[f64],
    values: &[f64],
    weights: &[f64],
    degree: usize,
    t0: f64,
) -> Option<f64> {
    let dim = degree + 1;
    // normal equations on the shifted basis (t - t0)^q; beta_0 is the fit
    let mut xtx = DMatrix::<f64>::zeros(dim, dim);
    let mut xty = DVector::<f64>::zeros(dim);
    let mut wsum = 0.0;
    for ((&t, &y), &w) in times.iter().zip(values).zip(weights) {
        if w == 0.0 {
            continue;
        }
        wsum += w;
        let d = t - t0;
        let mut basis = [1.0, 0.0, 0.0];
        for q in 1..dim {
            basis[q] = basis[q - 1] * d;
        }
        for i in 0..dim {
            for j in 0..dim {
                xtx[(i, j)] += w * basis[i] * basis[j];
            }
            xty[i] += w * basis[i] * y;
        }
    }
    if wsum == 0.0 {
        return None;
    }
    // scale-stabilized solve; reject near-singular local designs
    let chol = nalgebra::Cholesky::new(xtx.clone());
    match chol {
        Some(c) => {
            let beta = c.solve(&xty);
            beta[0].is_finite().then_some(beta[0])
        }
        None => {
            let svd = xtx.svd(true, true);
            let max_sv = svd.singular_values.max();
            let min_sv = svd.singular_values.min();
            if max_sv <= 0.0 || min_sv / max_sv < 1e-12 {
                return None;
            }
            svd.solve(&xty, 0.0).ok().map(|b| b[0]).filter(|b| b.is_finite())
        }
    }
}

/// Smooth one raw component onto the configured output grid.
///
/// At each output point a kernel-weighted polynomial is fitted to the raw
/// observations. If the local design is singular (all weight on one
/// location), the bandwidth is widened for that point; as a last resort the
/// `degree + 2` nearest observations are used with uniform weights.
pub fn smooth_curve(times: &[f64], values: &[f64], config: &SmootherConfig) -> Result<DVector<f64>> {
    config.validate()?;
    let min_points = (config.degree + 2).max(5);
    if times.len() < min_points {
        return Err(Error::NotEnoughData(format!(
            "smoothing a degree-{} fit needs at least {} observations, got {}",
            config.degree,
            min_points,
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

    let h0 = config.bandwidth_for(times);
    let out = config.output_grid.points();
    let mut fitted = DVector::zeros(out.len());
    let mut weights = vec![0.0; times.len()];

    for (i, &t0) in out.iter().enumerate() {
        let mut h = h0;
        let mut result = None;
        for _ in 0..8 {
            for (w, &t) in weights.iter_mut().zip(times) {
                *w = config.kernel.weight((t - t0) / h);
            }
            let support: usize = weights.iter().filter(|&&w| w > 0.0).count();
            if support >= config.degree + 2 {
                result = wls_at(times, values, &weights, config.degree, t0);
                if result.is_some() {
                    break;
                }
            }
            h *= 2.0;
        }
        let value = match result {
            Some(v) => v,
            None => nearest_neighbor_fit(times, values, config.degree, t0)?,
        };
        fitted[i] = value;
    }
    Ok(fitted)
}

/// Fallback: unweighted polynomial fit on the `degree + 2` nearest points.
fn nearest_neighbor_fit(times: &[f64], values: &[f64], degree: usize, t0: f64) -> Result<f64> {
    let k = degree + 2;
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (times[a] - t0).abs();
        let db = (times[b] - t0).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let sel: Vec<usize> = idx.into_iter().take(k).collect();
    let ts: Vec<f64> = sel.iter().map(|&i| times[i]).collect();
    let ys: Vec<f64> = sel.iter().map(|&i| values[i]).collect();
    let ws = vec![1.0; sel.len()];
    // degrade the degree until the tiny design is solvable
    for d in (0..=degree).rev() {
        if let Some(v) = wls_at(&ts, &ys, &ws, d, t0) {
            return Ok(v);
        }
    }
    Err(Error::Numerical(format!(
        "local fit failed at t = {t0}: degenerate observation times"
    )))
}

/// Smooth every component of every raw curve onto the output grids,
/// producing a regular [`MultiFunData`].
pub fn smooth_sample(raw: &[RawCurve], configs: &[SmootherConfig]) -> Result<MultiFunData> {
    if raw.is_empty() {
        return Err(Error::NotEnoughData("no curves to smooth".into()));
    }
    let p = raw[0].n_components();
    if configs.len() != p {
        return Err(Error::InvalidInput(format!(
            "need one smoother config per component: {} vs {p}",
            configs.len()
        )));
    }
    let mut components = Vec::with_capacity(p);
    for (comp_idx, config) in configs.iter().enumerate() {
        let grid = config.output_grid.clone();
        let mut values = DMatrix::zeros(raw.len(), grid.len());
        for (n, curve) in raw.iter().enumerate() {
            if curve.n_components() != p {
                return Err(Error::InvalidInput(format!(
                    "curve {n} has {} components, expected {p}",
                    curve.n_components()
                )));
            }
            let comp = &curve.components[comp_idx];
            let smoothed = smooth_curve(&comp.times, &comp.values, config)?;
            values.row_mut(n).copy_from(&smoothed.transpose());
        }
        components.push(UnivariateSample::new(grid, values)?);
    }
    MultiFunData::new(components)
}

/// Linearly interpolate one raw component onto a grid (for dense noiseless
/// inputs where smoothing is unnecessary). Constant-extrapolates outside the
/// observed range.
pub fn interpolate_curve(times: &[f64], values: &[f64], grid: &SamplingGrid) -> Result<DVector<f64>> {
    if times.len() < 2 || times.len() != values.len() {
        return Err(Error::InvalidInput(
            "interpolation needs at least 2 (time, value) pairs".into(),
        ));
    }
    let mut out = DVector::zeros(grid.len());
    for (i, &t) in grid.points().iter().enumerate() {
        out[i] = if t <= times[0] {
            values[0]
        } else if t >= times[times.len() - 1] {
            values[values.len() - 1]
        } else {
            let j = times.partition_point(|&x| x <= t);
            let (t0, t1) = (times[j - 1], times[j]);
            let (y0, y1) = (values[j - 1], values[j]);
            y0 + (y1 - y0) * (t - t0) / (t1 - t0)
        };
    }
    Ok(out)
}

/// Pointwise average of the sample curves.
pub fn estimate_mean(sample: &UnivariateSample) -> Result<DVector<f64>> {
    let n = sample.n_curves();
    if n == 0 {
        return Err(Error::NotEnoughData("mean of an empty sample".into()));
    }
    let inv = 1.0 / n as f64;
    Ok(DVector::from_iterator(
        sample.grid.len(),
        sample.values.column_iter().map(|c| c.sum() * inv),
    ))
}

/// Covariance surface estimate with noise-corrected diagonal.
///
/// Off-diagonal entries are the plain cross moments
/// `(1/N) sum_n X_n(s) X_n(t) - mean(s) mean(t)`. Diagonal entries are
/// rebuilt per grid point by fitting a quadratic in the anti-diagonal offset
/// to nearby off-diagonal values and extrapolating to offset zero, then
/// floored at zero. The result is exactly symmetric.
pub fn estimate_covariance(sample: &UnivariateSample, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = sample.n_curves();
    let m = sample.grid.len();
    if n < 2 {
        return Err(Error::NotEnoughData(format!(
            "covariance estimation needs at least 2 curves, got {n}"
        )));
    }
    if mean.len() != m {
        return Err(Error::GridMismatch(format!(
            "mean has {} points, grid has {m}",
            mean.len()
        )));
    }

    // raw cross moments: C = X'X / N - mean mean'
    let mut cov = sample.values.transpose() * &sample.values;
    cov /= n as f64;
    for i in 0..m {
        for j in 0..m {
            cov[(i, j)] -= mean[i] * mean[j];
        }
    }
    // exact symmetry regardless of accumulation order
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let diag = corrected_diagonal(&cov, &sample.grid);
    for i in 0..m {
        cov[(i, i)] = diag[i].max(0.0);
    }
    Ok(cov)
}

/// Extrapolate each diagonal value from near-diagonal entries.
///
/// For grid index i the anti-diagonal through (t_i, t_i) passes through the
/// pairs (i-k, i+k); their surface values at half-offsets d_k are fitted by
/// a quadratic a + b d + c d^2 whose intercept estimates C(t_i, t_i) without
/// the noise spike. Near the boundary, one-sided pairs (i, i+k) and
/// (i-k, i) stand in.
fn corrected_diagonal(cov: &DMatrix<f64>, grid: &SamplingGrid) -> Vec<f64> {
    let m = grid.len();
    let t = grid.points();
    let k_cap = (m / 20).max(3).min(m - 1);
    let mut diag = vec![0.0; m];

    for i in 0..m {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(2 * k_cap);
        for k in 1..=k_cap {
            if i >= k && i + k < m {
                pts.push((0.5 * (t[i + k] - t[i - k]), cov[(i - k, i + k)]));
            }
        }
        if pts.len() < 4 {
            for k in 1..=k_cap {
                if i + k < m {
                    pts.push((0.5 * (t[i + k] - t[i]), cov[(i, i + k)]));
                }
                if i >= k {
                    pts.push((0.5 * (t[i] - t[i - k]), cov[(i - k, i)]));
                }
            }
        }
        diag[i] = match quadratic_intercept(&pts) {
            Some(v) => v,
            // last resort: average of the nearest off-diagonal values
            None => {
                let s: f64 = pts.iter().map(|p| p.1).sum();
                if pts.is_empty() {
                    cov[(i, i)]
                } else {
                    s / pts.len() as f64
                }
            }
        };
    }
    diag
}

/// Least-squares quadratic through (x, y) points, evaluated at x = 0.
fn quadratic_intercept(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let mut xtx = DMatrix::<f64>::zeros(3, 3);
    let mut xty = DVector::<f64>::zeros(3);
    for &(x, y) in pts {
        let basis = [1.0, x, x * x];
        for i in 0..3 {
            for j in 0..3 {
                xtx[(i, j)] += basis[i] * basis[j];
            }
            xty[i] += basis[i] * y;
        }
    }
    let svd = xtx.svd(true, true);
    let max_sv = svd.singular_values.max();
    if max_sv <= 0.0 || svd.singular_values.min() / max_sv < 1e-10 {
        return None;
    }
    svd.solve(&xty, 0.0).ok().map(|b| b[0]).filter(|b| b.is_finite())
}
