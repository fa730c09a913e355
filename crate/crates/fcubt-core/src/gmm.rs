//! Full-covariance Gaussian mixtures fitted by EM, scored by BIC.
//!
//! `fit_em` runs a best-of-restarts EM with k-means++ seeding; the K = 1
//! model is estimated in closed form. `select_k` sweeps K = 1..K_max and
//! keeps the BIC maximizer (ties broken toward the smaller K). Everything is
//! deterministic given the seed in [`EmConfig`]; restarts and the K sweep
//! draw from derived, order-independent streams.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// EM driver settings. `reg_floor` is a relative ridge: every covariance
/// diagonal gets `reg_floor * trace(pooled) / d` added at each M-step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmConfig {
    pub n_init: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub reg_floor: f64,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            n_init: 5,
            max_iter: 200,
            rel_tol: 1e-6,
            reg_floor: 1e-6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init < 1 {
            return Err(Error::InvalidInput("n_init must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("rel_tol must be positive".into()));
        }
        if !(self.reg_floor > 0.0) {
            return Err(Error::InvalidInput("reg_floor must be positive".into()));
        }
        Ok(())
    }
}

/// A K-component Gaussian mixture with full covariances.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `log(p_k) + log N(x; m_k, Sigma_k)` for every component.
    pub fn weighted_log_densities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim()
            )));
        }
        let d = self.dim();
        let mut out = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let chol = nalgebra::Cholesky::new(self.covariances[k].clone()).ok_or_else(|| {
                Error::Numerical(format!("component {k} covariance is not positive definite"))
            })?;
            let l = chol.l();
            let mut z: Vec<f64> = (0..d).map(|i| x[i] - self.means[k][i]).collect();
            forward_substitute(&l, &mut z);
            let quad: f64 = z.iter().map(|v| v * v).sum();
            let logdet: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            out.push(self.weights[k].ln() - 0.5 * (d as f64 * LOG_2PI + logdet + quad));
        }
        Ok(out)
    }

    /// Posterior membership probabilities of `x`, computed in log space.
    ///
    /// If every component density underflows to zero the point is assigned
    /// to the nearest mean in Mahalanobis distance with probability one.
    pub fn posterior(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let logs = self.weighted_log_densities(x)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            // degenerate: underflow everywhere
            let k_star = self.nearest_mahalanobis(x);
            let mut probs = vec![0.0; self.k()];
            probs[k_star] = 1.0;
            return Ok(probs);
        }
        let mut probs: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(probs)
    }

    fn nearest_mahalanobis(&self, x: &DVector<f64>) -> usize {
        let d = self.dim();
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for k in 0..self.k() {
            let dist = match nalgebra::Cholesky::new(self.covariances[k].clone()) {
                Some(chol) => {
                    let l = chol.l();
                    let mut z: Vec<f64> = (0..d).map(|i| x[i] - self.means[k][i]).collect();
                    forward_substitute(&l, &mut z);
                    z.iter().map(|v| v * v).sum()
                }
                None => (x - &self.means[k]).norm_squared(),
            };
            if dist < best_dist {
                best_dist = dist;
                best = k;
            }
        }
        best
    }

    /// Total log-likelihood of the rows of `points`.
    pub fn log_likelihood(&self, points: &DMatrix<f64>) -> Result<f64> {
        let mut total = 0.0;
        for row in points.row_iter() {
            let logs = self.weighted_log_densities(&row.transpose())?;
            total += log_sum_exp(&logs);
        }
        Ok(total)
    }
}

/// Outcome of one EM fit.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub log_likelihood: f64,
    /// N x K, rows sum to one; consistent with the returned mixture.
    pub responsibilities: DMatrix<f64>,
    /// Log-likelihood after every parameter update (first entry: at the
    /// initial parameters). Nondecreasing unless `reinitialized`.
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    /// A collapsed component was re-seeded during the run.
    pub reinitialized: bool,
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// In-place forward substitution `L z = v` for a lower-triangular view.
fn forward_substitute<S>(l: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, S>, v: &mut [f64])
where
    S: nalgebra::storage::Storage<f64, nalgebra::Dyn, nalgebra::Dyn>,
{
    for i in 0..v.len() {
        let mut s = v[i];
        for j in 0..i {
            s -= l[(i, j)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
}

/// Diagonal ridge used in every covariance update.
fn regularization(points: &DMatrix<f64>, reg_floor: f64) -> f64 {
    let n = points.nrows() as f64;
    let d = points.ncols();
    let mean = points.row_mean();
    let mut trace = 0.0;
    for row in points.row_iter() {
        for j in 0..d {
            let c = row[j] - mean[j];
            trace += c * c;
        }
    }
    trace /= n * d as f64;
    reg_floor * trace.max(1e-12)
}

fn pooled_covariance(points: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let n = points.nrows() as f64;
    let d = points.ncols();
    let mean = points.row_mean();
    let mut cov = DMatrix::zeros(d, d);
    for row in points.row_iter() {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] += ridge;
    }
    cov
}

/// k-means++ style seeding: means drawn from the data, each proportional to
/// the squared distance to the nearest already-chosen mean.
fn seed_means(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.nrows();
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(k);
    means.push(points.row(rng.random_range(0..n)).transpose());
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| (points.row(i).transpose() - &means[0]).norm_squared())
        .collect();
    while means.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                r -= d2;
                if r <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let m = points.row(next).transpose();
        for (i, d2) in dist2.iter_mut().enumerate() {
            *d2 = d2.min((points.row(i).transpose() - &m).norm_squared());
        }
        means.push(m);
    }
    means
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

/// E-step: responsibilities and total log-likelihood at the current state.
fn e_step(points: &DMatrix<f64>, state: &EmState, resp: &mut DMatrix<f64>) -> Result<f64> {
    let (n, d) = (points.nrows(), points.ncols());
    let k = state.weights.len();
    let mut factors = Vec::with_capacity(k);
    for c in 0..k {
        let chol = nalgebra::Cholesky::new(state.covariances[c].clone()).ok_or_else(|| {
            Error::Numerical(format!("EM covariance {c} lost positive definiteness"))
        })?;
        let l = chol.unpack_dirty();
        let logdet: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        factors.push((l, state.weights[c].ln() - 0.5 * (d as f64 * LOG_2PI + logdet)));
    }
    let mut z = vec![0.0; d];
    let mut logs = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        for (c, (l, base)) in factors.iter().enumerate() {
            for j in 0..d {
                z[j] = points[(i, j)] - state.means[c][j];
            }
            forward_substitute(l, &mut z);
            let quad: f64 = z.iter().map(|v| v * v).sum();
            logs[c] = base - 0.5 * quad;
        }
        let lse = log_sum_exp(&logs);
        total += lse;
        if lse.is_finite() {
            for c in 0..k {
                resp[(i, c)] = (logs[c] - lse).exp();
            }
        } else {
            // all densities underflow: hard-assign to the nearest mean
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for c in 0..k {
                let dist = (points.row(i).transpose() - &state.means[c]).norm_squared();
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            for c in 0..k {
                resp[(i, c)] = if c == best { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(total)
}

/// M-step: weighted moment updates with the diagonal ridge.
fn m_step(points: &DMatrix<f64>, resp: &DMatrix<f64>, ridge: f64, state: &mut EmState) {
    let (n, d) = (points.nrows(), points.ncols());
    let k = state.weights.len();
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[(i, c)]).sum();
        state.weights[c] = nk / n as f64;
        let safe_nk = nk.max(f64::MIN_POSITIVE);
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            let r = resp[(i, c)];
            if r > 0.0 {
                for j in 0..d {
                    mean[j] += r * points[(i, j)];
                }
            }
        }
        mean /= safe_nk;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let r = resp[(i, c)];
            if r > 0.0 {
                for a in 0..d {
                    let ca = points[(i, a)] - mean[a];
                    for b in 0..=a {
                        cov[(a, b)] += r * ca * (points[(i, b)] - mean[b]);
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / safe_nk;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += ridge;
        }
        state.means[c] = mean;
        state.covariances[c] = cov;
    }
}

fn run_em(
    points: &DMatrix<f64>,
    k: usize,
    config: &EmConfig,
    run_seed: u64,
    ridge: f64,
    pooled: &DMatrix<f64>,
) -> Result<EmFit> {
    let n = points.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut state = EmState {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(points, k, &mut rng),
        covariances: vec![pooled.clone(); k],
    };
    let mut resp = DMatrix::zeros(n, k);
    let mut trace = Vec::new();
    let mut ll = e_step(points, &state, &mut resp)?;
    trace.push(ll);
    let mut reinitialized = false;
    let mut reinit_used = false;
    let mut n_iter = 0;

    for it in 1..=config.max_iter {
        n_iter = it;
        m_step(points, &resp, ridge, &mut state);

        // collapsed component: vanishing weight or vanishing spread
        if !reinit_used {
            let collapse_weight = 1.0 / (10.0 * n as f64);
            let floor_trace = ridge * points.ncols() as f64;
            for c in 0..k {
                let spread: f64 = (0..points.ncols())
                    .map(|j| state.covariances[c][(j, j)])
                    .sum::<f64>()
                    - floor_trace;
                if state.weights[c] < collapse_weight || spread < 0.5 * floor_trace {
                    state.means[c] = points.row(rng.random_range(0..n)).transpose();
                    state.covariances[c] = pooled.clone();
                    state.weights[c] = 1.0 / k as f64;
                    let total: f64 = state.weights.iter().sum();
                    for w in state.weights.iter_mut() {
                        *w /= total;
                    }
                    reinitialized = true;
                }
            }
            if reinitialized {
                reinit_used = true;
            }
        }

        let new_ll = e_step(points, &state, &mut resp)?;
        trace.push(new_ll);
        let denom = new_ll.abs().max(1.0);
        let done = ((new_ll - ll) / denom).abs() < config.rel_tol;
        ll = new_ll;
        if done {
            break;
        }
    }

    Ok(EmFit {
        mixture: GaussianMixture {
            weights: state.weights,
            means: state.means,
            covariances: state.covariances,
        },
        log_likelihood: ll,
        responsibilities: resp,
        loglik_trace: trace,
        n_iter,
        reinitialized,
    })
}

/// Closed-form single-Gaussian fit (sample mean, covariance with
/// denominator N, plus the ridge).
fn fit_single(points: &DMatrix<f64>, ridge: f64) -> Result<EmFit> {
    let n = points.nrows();
    let mean = points.row_mean().transpose();
    let cov = pooled_covariance(points, ridge);
    let mixture = GaussianMixture {
        weights: vec![1.0],
        means: vec![mean],
        covariances: vec![cov],
    };
    let ll = mixture.log_likelihood(points)?;
    Ok(EmFit {
        mixture,
        log_likelihood: ll,
        responsibilities: DMatrix::from_element(n, 1, 1.0),
        loglik_trace: vec![ll],
        n_iter: 0,
        reinitialized: false,
    })
}

/// Best-of-`n_init` EM fit of a K-component mixture.
///
/// K = 1 bypasses EM entirely. Restart r of the sweep for K uses the seed
/// derived from `(config.seed, K, r)`, and the best run is chosen by final
/// log-likelihood (first restart wins ties).
pub fn fit_em(points: &DMatrix<f64>, k: usize, config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    let n = points.nrows();
    if k < 1 {
        return Err(Error::InvalidInput("component count must be at least 1".into()));
    }
    if n < k {
        return Err(Error::NotEnoughData(format!(
            "cannot fit {k} components to {n} points"
        )));
    }
    if points.ncols() == 0 {
        return Err(Error::InvalidInput("points must have at least one column".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("points contain non-finite values".into()));
    }

    let ridge = regularization(points, config.reg_floor);
    if k == 1 {
        return fit_single(points, ridge);
    }
    let pooled = pooled_covariance(points, ridge);

    let mut best: Option<EmFit> = None;
    for r in 0..config.n_init {
        let run_seed = seed::derive2(config.seed, k as u64, r as u64);
        let fit = run_em(points, k, config, run_seed, ridge, &pooled)?;
        let better = match &best {
            None => true,
            Some(b) => fit.log_likelihood > b.log_likelihood,
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Number of free parameters of a K-component full-covariance mixture in
/// dimension d: `K + K d + K d (d + 1) / 2 - 1`.
pub fn model_dimension(k: usize, d: usize) -> usize {
    k + k * d + k * d * (d + 1) / 2 - 1
}

/// Bayesian Information Criterion, `2 log L - kappa log N`; larger is better.
pub fn bic(log_likelihood: f64, k: usize, d: usize, n: usize) -> f64 {
    2.0 * log_likelihood - model_dimension(k, d) as f64 * (n as f64).ln()
}

/// Result of the K sweep: per-K fits (index K-1), their BIC values, and the
/// BIC-maximizing K.
#[derive(Clone, Debug)]
pub struct KSelection {
    pub k_hat: usize,
    pub fits: Vec<Option<EmFit>>,
    pub bic: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

impl KSelection {
    /// The fitted model for a given K, when the fit succeeded.
    pub fn fit_for(&self, k: usize) -> Option<&EmFit> {
        self.fits.get(k - 1).and_then(|f| f.as_ref())
    }
}

/// Fit K = 1..min(K_max, N) and pick the BIC maximizer (ties toward the
/// smaller K). A K whose fit fails is skipped with a warning record.
pub fn select_k(points: &DMatrix<f64>, k_max: usize, config: &EmConfig) -> Result<KSelection> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::NotEnoughData(format!(
            "model selection needs at least 2 points, got {n}"
        )));
    }
    if k_max < 1 {
        return Err(Error::InvalidInput("K_max must be at least 1".into()));
    }
    let d = points.ncols();
    let top = k_max.min(n);
    let mut fits = Vec::with_capacity(top);
    let mut bics = Vec::with_capacity(top);
    let mut warnings = Vec::new();
    for k in 1..=top {
        match fit_em(points, k, config) {
            Ok(fit) => {
                bics.push(Some(bic(fit.log_likelihood, k, d, n)));
                fits.push(Some(fit));
            }
            Err(e) => {
                warnings.push(format!("K = {k}: {e}"));
                bics.push(None);
                fits.push(None);
            }
        }
    }
    let mut k_hat = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (i, b) in bics.iter().enumerate() {
        if let Some(v) = b {
            if *v > best {
                best = *v;
                k_hat = i + 1;
            }
        }
    }
    if k_hat == 0 {
        return Err(Error::Numerical("every K in the sweep failed to fit".into()));
    }
    Ok(KSelection {
        k_hat,
        fits,
        bic: bics,
        warnings,
    })
}
