//! Multivariate functional PCA by composition of univariate fits.
//!
//! Each component gets its own mean/covariance estimate and univariate
//! eigenbasis; the per-component scores are concatenated into `Z` (N x J+),
//! and the eigenvectors `v_j` of `Z' Z / (N - 1)` combine the univariate
//! eigenfunctions into the multivariate ones. Cross-covariances between
//! components are never estimated; the score covariance carries all of the
//! between-component structure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{MultiCurve, MultiFunData, SamplingGrid, UnivariateSample};
use crate::smoothing::{estimate_covariance, estimate_mean};
use crate::ufpca::{self, compute_scores, fit_ufpca, UnivariateBasis};

pub use crate::ufpca::Truncation;

/// Fitted multivariate eigenstructure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfpcaModel {
    /// Per-component univariate bases (each carries its grid and mean).
    pub uni_bases: Vec<UnivariateBasis>,
    /// Kept multivariate eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Kept eigenvectors of the score covariance, each of length J+.
    pub eigenvectors: Vec<DVector<f64>>,
    /// Multivariate eigenfunctions sampled on the component grids.
    pub eigenfunctions: Vec<MultiCurve>,
    /// Set when the score covariance had no positive eigenvalues.
    pub degenerate: bool,
}

/// A fitted model together with the training-score matrix (N x J).
#[derive(Clone, Debug)]
pub struct MfpcaFit {
    pub model: MfpcaModel,
    pub scores: DMatrix<f64>,
}

impl MfpcaModel {
    pub fn n_kept(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_components(&self) -> usize {
        self.uni_bases.len()
    }

    pub fn grids(&self) -> Vec<SamplingGrid> {
        self.uni_bases.iter().map(|b| b.grid.clone()).collect()
    }

    /// Mean curve of the model (component means of the univariate bases).
    pub fn mean(&self) -> MultiCurve {
        MultiCurve {
            components: self.uni_bases.iter().map(|b| b.mean.clone()).collect(),
        }
    }

    fn check_grids(&self, data: &MultiFunData) -> Result<()> {
        if data.n_components() != self.n_components() {
            return Err(Error::GridMismatch(format!(
                "data has {} components, model has {}",
                data.n_components(),
                self.n_components()
            )));
        }
        for (p, (comp, basis)) in data
            .components()
            .iter()
            .zip(self.uni_bases.iter())
            .enumerate()
        {
            if comp.grid != basis.grid {
                return Err(Error::GridMismatch(format!(
                    "component {p} of the data is on a different grid than the model"
                )));
            }
        }
        Ok(())
    }

    /// Score matrix of `curves` in this model's eigenbasis (N x J).
    pub fn project(&self, curves: &MultiFunData) -> Result<DMatrix<f64>> {
        self.check_grids(curves)?;
        let z = concatenated_scores(curves, &self.uni_bases)?;
        Ok(multiply_by_eigenvectors(&z, &self.eigenvectors))
    }

    /// Score vector of a single curve.
    pub fn project_curve(&self, curve: &MultiCurve) -> Result<DVector<f64>> {
        if curve.n_components() != self.n_components() {
            return Err(Error::GridMismatch(format!(
                "curve has {} components, model has {}",
                curve.n_components(),
                self.n_components()
            )));
        }
        let mut z = Vec::new();
        for (comp, basis) in curve.components.iter().zip(self.uni_bases.iter()) {
            if comp.len() != basis.grid.len() {
                return Err(Error::GridMismatch(
                    "curve sampled on a different grid than the model".into(),
                ));
            }
            let w = basis.grid.trapezoid_weights();
            for j in 0..basis.n_kept() {
                let mut acc = 0.0;
                for m in 0..basis.grid.len() {
                    acc += w[m] * ((comp[m] - basis.mean[m]) * basis.eigenfunctions[(j, m)]);
                }
                z.push(acc);
            }
        }
        let z = DVector::from_vec(z);
        Ok(DVector::from_iterator(
            self.n_kept(),
            self.eigenvectors.iter().map(|v| v.dot(&z)),
        ))
    }

    /// Truncated Karhunen-Loeve reconstruction: `mean + sum_j c_j phi_j` per
    /// curve. `scores` may use fewer columns than the model keeps.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> Result<MultiFunData> {
        let j_used = scores.ncols();
        if j_used > self.n_kept() {
            return Err(Error::InvalidInput(format!(
                "scores have {j_used} columns, model keeps {}",
                self.n_kept()
            )));
        }
        let n = scores.nrows();
        let mut components = Vec::with_capacity(self.n_components());
        for (p, basis) in self.uni_bases.iter().enumerate() {
            let m = basis.grid.len();
            let mut values = DMatrix::zeros(n, m);
            for row in 0..n {
                for i in 0..m {
                    let mut v = basis.mean[i];
                    for j in 0..j_used {
                        v += scores[(row, j)] * self.eigenfunctions[j].components[p][i];
                    }
                    values[(row, i)] = v;
                }
            }
            components.push(UnivariateSample::new(basis.grid.clone(), values)?);
        }
        MultiFunData::new(components)
    }
}

/// Concatenate per-component univariate scores into the N x J+ matrix.
fn concatenated_scores(data: &MultiFunData, bases: &[UnivariateBasis]) -> Result<DMatrix<f64>> {
    let n = data.n_curves();
    let j_plus: usize = bases.iter().map(|b| b.n_kept()).sum();
    let mut z = DMatrix::zeros(n, j_plus);
    let mut offset = 0;
    for (comp, basis) in data.components().iter().zip(bases.iter()) {
        let scores = compute_scores(comp, basis)?;
        z.view_mut((0, offset), (n, basis.n_kept())).copy_from(&scores);
        offset += basis.n_kept();
    }
    Ok(z)
}

fn multiply_by_eigenvectors(z: &DMatrix<f64>, vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let n = z.nrows();
    let mut out = DMatrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        for i in 0..n {
            out[(i, j)] = z.row(i).transpose().dot(v);
        }
    }
    out
}

/// Fit the multivariate eigenstructure of `data`.
///
/// The truncation policy applies both per component and to the multivariate
/// eigenvalue sequence. Degenerate data (no positive score variance) yields
/// a single zero-eigenvalue model, flagged.
pub fn fit_mfpca(data: &MultiFunData, truncation: Truncation) -> Result<MfpcaFit> {
    truncation.validate()?;
    let n = data.n_curves();
    if n < 2 {
        return Err(Error::NotEnoughData(format!(
            "multivariate FPCA needs at least 2 curves, got {n}"
        )));
    }

    let mut uni_bases = Vec::with_capacity(data.n_components());
    for comp in data.components() {
        let mean = estimate_mean(comp)?;
        let cov = estimate_covariance(comp, &mean)?;
        uni_bases.push(fit_ufpca(&cov, &mean, &comp.grid, truncation)?);
    }

    let z = concatenated_scores(data, &uni_bases)?;
    let j_plus = z.ncols();
    let z_hat = z.transpose() * &z / (n as f64 - 1.0);
    let score_scale = 1.0
        + uni_bases
            .iter()
            .flat_map(|b| b.eigenvalues.iter())
            .cloned()
            .fold(0.0, f64::max);
    let (mut values, mut vectors) =
        ufpca::positive_eigenpairs(&z_hat, 1e-12, 1e-12 * score_scale);

    if values.is_empty() {
        let mut e1 = DVector::zeros(j_plus);
        e1[0] = 1.0;
        let eigenfunctions = vec![combine(&uni_bases, &e1)];
        let model = MfpcaModel {
            uni_bases,
            eigenvalues: vec![0.0],
            eigenvectors: vec![e1],
            eigenfunctions,
            degenerate: true,
        };
        return Ok(MfpcaFit {
            scores: DMatrix::zeros(n, 1),
            model,
        });
    }

    let n_kept = match truncation {
        Truncation::Fixed(j) => j.min(values.len()).max(1),
        Truncation::Ratio(_) => {
            // reuse the univariate rule on the multivariate eigenvalues
            let keep = {
                let total: f64 = values.iter().sum();
                let mut acc = 0.0;
                let mut k = values.len();
                for (i, ev) in values.iter().enumerate() {
                    acc += ev;
                    if let Truncation::Ratio(r) = truncation {
                        if acc / total >= r {
                            k = i + 1;
                            break;
                        }
                    }
                }
                k
            };
            keep
        }
    };
    values.truncate(n_kept);
    vectors.truncate(n_kept);
    for v in vectors.iter_mut() {
        ufpca::fix_sign(v.as_mut_slice());
    }

    let eigenfunctions: Vec<MultiCurve> = vectors.iter().map(|v| combine(&uni_bases, v)).collect();
    let scores = multiply_by_eigenvectors(&z, &vectors);

    Ok(MfpcaFit {
        model: MfpcaModel {
            uni_bases,
            eigenvalues: values,
            eigenvectors: vectors,
            eigenfunctions,
            degenerate: false,
        },
        scores,
    })
}

/// Linear combination of univariate eigenfunctions by the blocks of `v`.
fn combine(bases: &[UnivariateBasis], v: &DVector<f64>) -> MultiCurve {
    let mut components = Vec::with_capacity(bases.len());
    let mut offset = 0;
    for basis in bases {
        let m = basis.grid.len();
        let mut f = DVector::zeros(m);
        for j in 0..basis.n_kept() {
            let c = v[offset + j];
            for i in 0..m {
                f[i] += c * basis.eigenfunctions[(j, i)];
            }
        }
        offset += basis.n_kept();
        components.push(f);
    }
    MultiCurve { components }
}

/// Mixture description for the theoretical score moments: K cluster means,
/// the generator basis `phi_l`, and per-cluster coefficient variances
/// `sigma2[(k, l)]`.
#[derive(Clone, Debug)]
pub struct MixtureSpec<'a> {
    pub weights: &'a [f64],
    pub cluster_means: &'a [MultiCurve],
    pub generator_basis: &'a [MultiCurve],
    pub coeff_variances: &'a DMatrix<f64>,
}

/// Per-cluster moments of scores in a target basis.
#[derive(Clone, Debug)]
pub struct ScoreMoments {
    /// `means[(k, j)] = <mu_k - mu, psi_j>`
    pub means: DMatrix<f64>,
    /// `variances[(k, j)] = sum_l <phi_l, psi_j>^2 sigma2_{kl}`
    pub variances: DMatrix<f64>,
    /// Per cluster, the J x J conditional score covariance.
    pub covariances: Vec<DMatrix<f64>>,
}

/// Moments of the scores `<X - mu, psi_j>` for data generated from a
/// functional mixture, all inner products by quadrature.
pub fn theoretical_score_moments(
    spec: &MixtureSpec,
    target_basis: &[MultiCurve],
    grids: &[SamplingGrid],
) -> Result<ScoreMoments> {
    let k_count = spec.weights.len();
    if spec.cluster_means.len() != k_count || spec.coeff_variances.nrows() != k_count {
        return Err(Error::InvalidInput(
            "weights, cluster means and coefficient variances disagree on K".into(),
        ));
    }
    let l_count = spec.generator_basis.len();
    if spec.coeff_variances.ncols() != l_count {
        return Err(Error::InvalidInput(
            "coefficient variances and generator basis disagree on L".into(),
        ));
    }
    let j_count = target_basis.len();

    // global mean: sum_k p_k mu_k
    let p_comp = grids.len();
    let mut mu = MultiCurve {
        components: grids.iter().map(|g| DVector::zeros(g.len())).collect(),
    };
    for (w, m) in spec.weights.iter().zip(spec.cluster_means.iter()) {
        for p in 0..p_comp {
            mu.components[p] += m.components[p].scale(*w);
        }
    }

    // cross Gram matrix <phi_l, psi_j>
    let mut gram = DMatrix::zeros(l_count, j_count);
    for l in 0..l_count {
        for j in 0..j_count {
            gram[(l, j)] =
                crate::fdata::inner_product(&spec.generator_basis[l], &target_basis[j], grids)?;
        }
    }

    let mut means = DMatrix::zeros(k_count, j_count);
    for k in 0..k_count {
        let mut centered = spec.cluster_means[k].clone();
        for p in 0..p_comp {
            centered.components[p] -= &mu.components[p];
        }
        for j in 0..j_count {
            means[(k, j)] = crate::fdata::inner_product(&centered, &target_basis[j], grids)?;
        }
    }

    let mut variances = DMatrix::zeros(k_count, j_count);
    let mut covariances = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let mut cov = DMatrix::zeros(j_count, j_count);
        for i in 0..j_count {
            for j in 0..=i {
                let mut acc = 0.0;
                for l in 0..l_count {
                    acc += gram[(l, i)] * gram[(l, j)] * spec.coeff_variances[(k, l)];
                }
                cov[(i, j)] = acc;
                cov[(j, i)] = acc;
            }
            variances[(k, i)] = cov[(i, i)];
        }
        covariances.push(cov);
    }

    Ok(ScoreMoments {
        means,
        variances,
        covariances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::inner_product;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid(m: usize) -> SamplingGrid {
        SamplingGrid::uniform(0.0, 1.0, m).unwrap()
    }

    /// Low-rank synthetic sample: mean + sum_l a_{nl} f_l(t), P components.
    fn synthetic(n: usize, m: usize, p: usize, rank: usize, seed: u64) -> MultiFunData {
        let g = grid(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..rank)
                    .map(|l| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * (2.0 / (l as f64 + 1.0))
                    })
                    .collect()
            })
            .collect();
        let components = (0..p)
            .map(|comp| {
                let mut values = DMatrix::zeros(n, m);
                for (row, c) in coeffs.iter().enumerate() {
                    for (i, &t) in g.points().iter().enumerate() {
                        let mut v = (comp as f64 + 1.0) * t; // component mean
                        for (l, &a) in c.iter().enumerate() {
                            let f = ((l + 1) as f64 * std::f64::consts::PI * t
                                + comp as f64)
                                .sin();
                            v += a * f;
                        }
                        values[(row, i)] = v;
                    }
                }
                UnivariateSample::new(g.clone(), values).unwrap()
            })
            .collect();
        MultiFunData::new(components).unwrap()
    }

    #[test]
    fn single_component_matches_univariate_eigenvalues() {
        let data = synthetic(300, 81, 1, 3, 42);
        let comp = data.component(0);
        let mean = estimate_mean(comp).unwrap();
        let cov = estimate_covariance(comp, &mean).unwrap();
        let uni = fit_ufpca(&cov, &mean, &comp.grid, Truncation::Fixed(3)).unwrap();
        let fit = fit_mfpca(&data, Truncation::Fixed(3)).unwrap();
        for j in 0..3 {
            let rel =
                (fit.model.eigenvalues[j] - uni.eigenvalues[j]).abs() / uni.eigenvalues[j];
            assert!(rel < 0.02, "eigenvalue {j}: rel err {rel}");
            // eigenfunctions align up to sign
            let dot = crate::fdata::inner_product_uni(
                &fit.model.eigenfunctions[j].components[0],
                &uni.eigenfunctions.row(j).transpose(),
                &comp.grid,
            )
            .unwrap();
            assert!(dot.abs() > 0.99, "eigenfunction {j}: |<phi, rho>| = {}", dot.abs());
        }
    }

    #[test]
    fn duplicated_component_doubles_the_eigenvalues() {
        let data = synthetic(400, 61, 1, 2, 7);
        let doubled = MultiFunData::new(vec![
            data.component(0).clone(),
            data.component(0).clone(),
        ])
        .unwrap();
        let uni_fit = fit_mfpca(&data, Truncation::Fixed(2)).unwrap();
        let fit = fit_mfpca(&doubled, Truncation::Fixed(2)).unwrap();
        for j in 0..2 {
            let expect = 2.0 * uni_fit.model.eigenvalues[j];
            let rel = (fit.model.eigenvalues[j] - expect).abs() / expect;
            assert!(rel < 1e-6, "eigenvalue {j}: rel err {rel}");
            // the two component halves agree up to floating noise
            let f = &fit.model.eigenfunctions[j];
            for (a, b) in f.components[0].iter().zip(f.components[1].iter()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn eigenfunctions_are_orthonormal_in_the_product_space() {
        let data = synthetic(200, 51, 2, 3, 3);
        let fit = fit_mfpca(&data, Truncation::Ratio(0.999)).unwrap();
        let grids = data.grids();
        let j = fit.model.n_kept();
        for a in 0..j {
            for b in 0..j {
                let ip = inner_product(
                    &fit.model.eigenfunctions[a],
                    &fit.model.eigenfunctions[b],
                    &grids,
                )
                .unwrap();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn score_covariance_is_diagonal_with_the_eigenvalues() {
        let data = synthetic(250, 41, 2, 3, 9);
        let fit = fit_mfpca(&data, Truncation::Ratio(0.99)).unwrap();
        let n = data.n_curves() as f64;
        let cov = fit.scores.transpose() * &fit.scores / (n - 1.0);
        let l1 = fit.model.eigenvalues[0];
        for i in 0..fit.model.n_kept() {
            assert_abs_diff_eq!(
                cov[(i, i)],
                fit.model.eigenvalues[i],
                epsilon = 1e-8 * (1.0 + l1)
            );
            for j in 0..i {
                assert!(
                    cov[(i, j)].abs() <= 1e-6 * l1,
                    "off-diagonal ({i},{j}) = {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn projecting_the_mean_gives_zero_scores() {
        let data = synthetic(100, 41, 2, 2, 21);
        let fit = fit_mfpca(&data, Truncation::Fixed(2)).unwrap();
        let scores = fit.model.project_curve(&fit.model.mean()).unwrap();
        for s in scores.iter() {
            assert_abs_diff_eq!(*s, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn projecting_mean_plus_first_eigenfunction_gives_e1() {
        let data = synthetic(100, 41, 2, 2, 22);
        let fit = fit_mfpca(&data, Truncation::Fixed(2)).unwrap();
        let mut curve = fit.model.mean();
        for (c, f) in curve
            .components
            .iter_mut()
            .zip(fit.model.eigenfunctions[0].components.iter())
        {
            *c += f;
        }
        let scores = fit.model.project_curve(&curve).unwrap();
        assert_abs_diff_eq!(scores[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(scores[1], 0.0, epsilon = 1e-3);
    }

    #[test]
    fn project_reproduces_fit_scores() {
        let data = synthetic(120, 51, 2, 3, 5);
        let fit = fit_mfpca(&data, Truncation::Ratio(0.95)).unwrap();
        let again = fit.model.project(&data).unwrap();
        for (a, b) in fit.scores.iter().zip(again.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_scores_reconstruct_the_means() {
        let data = synthetic(50, 31, 2, 2, 13);
        let fit = fit_mfpca(&data, Truncation::Fixed(2)).unwrap();
        let recon = fit.model.reconstruct(&DMatrix::zeros(3, 0)).unwrap();
        for p in 0..2 {
            let mean = &fit.model.uni_bases[p].mean;
            for row in recon.component(p).values.row_iter() {
                for (v, m) in row.iter().zip(mean.iter()) {
                    assert_abs_diff_eq!(*v, *m, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn reconstruction_error_is_nonincreasing_in_j() {
        let data = synthetic(150, 41, 1, 4, 17);
        let fit = fit_mfpca(&data, Truncation::Ratio(1.0)).unwrap();
        let grids = data.grids();
        let jmax = fit.model.n_kept();
        let mut prev = f64::INFINITY;
        for j in 0..=jmax {
            let partial = fit.scores.columns(0, j).into_owned();
            let recon = fit.model.reconstruct(&partial).unwrap();
            let mut err = 0.0;
            for n in 0..data.n_curves() {
                let x = data.curve(n);
                let xr = recon.curve(n);
                let diff = MultiCurve {
                    components: x
                        .components
                        .iter()
                        .zip(xr.components.iter())
                        .map(|(a, b)| a - b)
                        .collect(),
                };
                err += inner_product(&diff, &diff, &grids).unwrap();
            }
            err /= data.n_curves() as f64;
            assert!(
                err <= prev + 1e-10,
                "error rose from {prev} to {err} at J = {j}"
            );
            prev = err;
        }
    }

    #[test]
    fn low_rank_data_reconstructs_exactly() {
        let data = synthetic(80, 101, 1, 2, 31);
        let fit = fit_mfpca(&data, Truncation::Fixed(2)).unwrap();
        let recon = fit.model.reconstruct(&fit.scores).unwrap();
        let grids = data.grids();
        let mut worst: f64 = 0.0;
        for n in 0..data.n_curves() {
            let x = data.curve(n);
            let xr = recon.curve(n);
            let diff = MultiCurve {
                components: x
                    .components
                    .iter()
                    .zip(xr.components.iter())
                    .map(|(a, b)| a - b)
                    .collect(),
            };
            worst = worst.max(inner_product(&diff, &diff, &grids).unwrap());
        }
        assert!(worst < 1e-6, "worst squared reconstruction error {worst}");
    }

    #[test]
    fn identical_curves_give_a_degenerate_model() {
        let g = grid(31);
        let row: Vec<f64> = g.points().iter().map(|&t| 1.0 + t).collect();
        let mut values = DMatrix::zeros(10, 31);
        for mut r in values.row_iter_mut() {
            for (v, x) in r.iter_mut().zip(row.iter()) {
                *v = *x;
            }
        }
        let data =
            MultiFunData::new(vec![UnivariateSample::new(g, values).unwrap()]).unwrap();
        let fit = fit_mfpca(&data, Truncation::Ratio(0.95)).unwrap();
        assert!(fit.model.degenerate);
        assert_eq!(fit.model.eigenvalues, vec![0.0]);
        assert_eq!(fit.scores.ncols(), 1);
        assert!(fit.scores.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn truncation_error_beats_random_rotations() {
        let data = synthetic(150, 41, 2, 4, 55);
        let fit = fit_mfpca(&data, Truncation::Ratio(1.0)).unwrap();
        let j_plus = fit.model.n_kept();
        if j_plus < 4 {
            panic!("expected at least 4 kept components, got {j_plus}");
        }
        // mean squared residual after keeping J of the (possibly rotated)
        // basis: total - captured, in the quadrature geometry
        let grids = data.grids();
        let mean = fit.model.mean();
        let total: f64 = (0..data.n_curves())
            .map(|n| {
                let x = data.curve(n);
                let diff = MultiCurve {
                    components: x
                        .components
                        .iter()
                        .zip(mean.components.iter())
                        .map(|(a, b)| a - b)
                        .collect(),
                };
                inner_product(&diff, &diff, &grids).unwrap()
            })
            .sum::<f64>()
            / data.n_curves() as f64;

        let captured = |scores: &DMatrix<f64>, j: usize| -> f64 {
            let mut acc = 0.0;
            for row in scores.row_iter() {
                for c in 0..j {
                    acc += row[c] * row[c];
                }
            }
            acc / scores.nrows() as f64
        };

        let mut rng = ChaCha8Rng::seed_from_u64(777);
        for rotation in 0..20 {
            // random orthonormal rotation of the estimated basis
            let mut gauss = DMatrix::zeros(j_plus, j_plus);
            for v in gauss.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let q = gauss.qr().q();
            let rotated = &fit.scores * &q;
            for j in 1..=3usize {
                let own = total - captured(&fit.scores, j);
                let other = total - captured(&rotated, j);
                assert!(
                    own <= other + 1e-9,
                    "rotation {rotation}, J = {j}: {own} > {other}"
                );
            }
        }
    }

    #[test]
    fn theoretical_moments_in_the_generator_basis_are_the_variances() {
        let g = grid(201);
        let grids = vec![g.clone()];
        let basis: Vec<MultiCurve> = (1..=3)
            .map(|k| MultiCurve {
                components: vec![DVector::from_iterator(
                    g.len(),
                    g.points().iter().map(|&t| {
                        2f64.sqrt() * ((k as f64 - 0.5) * std::f64::consts::PI * t).sin()
                    }),
                )],
            })
            .collect();
        let mean1 = MultiCurve {
            components: vec![DVector::from_iterator(
                g.len(),
                g.points().iter().map(|&t| 20.0 / (1.0 + (-t).exp())),
            )],
        };
        let mean2 = MultiCurve {
            components: vec![DVector::zeros(g.len())],
        };
        let sigma2 = DMatrix::from_row_slice(
            2,
            3,
            &[16.0, 64.0 / 9.0, 16.0 / 9.0, 1.0, 4.0 / 9.0, 1.0 / 9.0],
        );
        let spec = MixtureSpec {
            weights: &[0.5, 0.5],
            cluster_means: &[mean1.clone(), mean2.clone()],
            generator_basis: &basis,
            coeff_variances: &sigma2,
        };
        let moments = theoretical_score_moments(&spec, &basis, &grids).unwrap();
        // psi = phi: variances come back, cross-covariances vanish
        for k in 0..2 {
            for j in 0..3 {
                let rel = (moments.variances[(k, j)] - sigma2[(k, j)]).abs() / sigma2[(k, j)];
                assert!(rel < 1e-3, "variance ({k},{j}) rel err {rel}");
                for i in 0..j {
                    assert!(moments.covariances[k][(i, j)].abs() < 1e-3 * sigma2[(k, i)]);
                }
            }
        }
        // frozen cluster-1 variances in the generator basis
        assert_abs_diff_eq!(moments.variances[(0, 0)], 16.0, epsilon = 0.02);
        assert_abs_diff_eq!(moments.variances[(0, 1)], 64.0 / 9.0, epsilon = 0.01);
        assert_abs_diff_eq!(moments.variances[(0, 2)], 16.0 / 9.0, epsilon = 0.01);

        // equal cluster means: every m_{kj} vanishes
        let equal = MixtureSpec {
            weights: &[0.5, 0.5],
            cluster_means: &[mean1.clone(), mean1.clone()],
            generator_basis: &basis,
            coeff_variances: &sigma2,
        };
        let m2 = theoretical_score_moments(&equal, &basis, &grids).unwrap();
        for v in m2.means.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
    }
}
