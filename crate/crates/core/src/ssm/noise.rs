//! Additive noise families for process and observation noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, robust_cholesky};

/// GMM component weights used when matching a Gaussian variance.
pub const GMM_MATCH_WEIGHTS: [f64; 2] = [0.8, 0.2];
/// GMM component variances as multiples of the matched variance.
pub const GMM_MATCH_SCALES: [f64; 2] = [0.5, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None {
        dim: usize,
    },
    Gaussian {
        #[serde(with = "linalg::rows")]
        covariance: DMatrix<f64>,
    },
    /// Independent zero-mean Laplace components with the given scales.
    Laplacian {
        scales: Vec<f64>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    },
    /// With probability `probability`, `direction · N(0, sigma²)`; zero otherwise.
    Impulse {
        probability: f64,
        sigma: f64,
        direction: Vec<f64>,
    },
    /// Sum of independent noise terms of the same dimension.
    Sum {
        terms: Vec<NoiseModel>,
    },
}

impl NoiseModel {
    pub fn none(dim: usize) -> Self {
        NoiseModel::None { dim }
    }

    pub fn isotropic(variance: f64, dim: usize) -> Self {
        NoiseModel::Gaussian {
            covariance: DMatrix::identity(dim, dim) * variance,
        }
    }

    /// Laplacian with per-component variance `variance` (scale `sqrt(variance / 2)`).
    pub fn laplacian_matched(variance: f64, dim: usize) -> Self {
        NoiseModel::Laplacian {
            scales: vec![(variance / 2.0).sqrt(); dim],
        }
    }

    /// Two-component zero-mean isotropic mixture whose covariance equals `variance · I`.
    pub fn gmm_matched(variance: f64, dim: usize) -> Self {
        let cov = |scale: f64| -> Vec<Vec<f64>> {
            (0..dim)
                .map(|i| {
                    (0..dim)
                        .map(|j| if i == j { scale * variance } else { 0.0 })
                        .collect()
                })
                .collect()
        };
        NoiseModel::GaussianMixture {
            weights: GMM_MATCH_WEIGHTS.to_vec(),
            means: vec![vec![0.0; dim]; 2],
            covariances: GMM_MATCH_SCALES.iter().map(|s| cov(*s)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::None { dim } => *dim,
            NoiseModel::Gaussian { covariance } => covariance.nrows(),
            NoiseModel::Laplacian { scales } => scales.len(),
            NoiseModel::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            NoiseModel::Impulse { direction, .. } => direction.len(),
            NoiseModel::Sum { terms } => terms.first().map_or(0, NoiseModel::dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidModel(m.to_string()));
        match self {
            NoiseModel::None { .. } => Ok(()),
            NoiseModel::Gaussian { covariance } => {
                if !covariance.is_square() {
                    return bad("gaussian covariance must be square");
                }
                let asym = (covariance - covariance.transpose()).amax();
                if asym > 1e-9 {
                    return bad("gaussian covariance is not symmetric");
                }
                let min_eig = covariance
                    .clone()
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                if min_eig < -1e-9 {
                    return bad("gaussian covariance is not positive semi-definite");
                }
                Ok(())
            }
            NoiseModel::Laplacian { scales } => {
                if scales.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
                    return bad("laplacian scales must be positive");
                }
                Ok(())
            }
            NoiseModel::GaussianMixture {
                weights,
                means,
                covariances,
            } => {
                if weights.is_empty()
                    || weights.len() != means.len()
                    || weights.len() != covariances.len()
                {
                    return bad("mixture component lists differ in length");
                }
                if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
                {
                    return bad("mixture weights must lie on the simplex");
                }
                let dim = means[0].len();
                for (m, c) in means.iter().zip(covariances) {
                    if m.len() != dim {
                        return bad("mixture means differ in dimension");
                    }
                    let cov = linalg::rows::from_rows(c).map_err(Error::InvalidModel)?;
                    if cov.nrows() != dim || cov.ncols() != dim {
                        return bad("mixture covariance has wrong shape");
                    }
                    NoiseModel::Gaussian { covariance: cov }.validate()?;
                }
                Ok(())
            }
            NoiseModel::Impulse {
                probability, sigma, ..
            } => {
                if !(0.0..=1.0).contains(probability) || *sigma < 0.0 {
                    return bad("impulse probability must be in [0,1] and sigma non-negative");
                }
                Ok(())
            }
            NoiseModel::Sum { terms } => {
                let dim = self.dim();
                for t in terms {
                    if t.dim() != dim {
                        return bad("summed noise terms differ in dimension");
                    }
                    t.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Exact covariance of the noise distribution.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            NoiseModel::None { .. } => DMatrix::zeros(n, n),
            NoiseModel::Gaussian { covariance } => covariance.clone(),
            NoiseModel::Laplacian { scales } => {
                DMatrix::from_diagonal(&DVector::from_iterator(n, scales.iter().map(|b| 2.0 * b * b)))
            }
            NoiseModel::GaussianMixture {
                weights,
                means,
                covariances,
            } => {
                let mean = mixture_mean(weights, means);
                let mut cov = DMatrix::zeros(n, n);
                for ((w, m), c) in weights.iter().zip(means).zip(covariances) {
                    let c = linalg::rows::from_rows(c).expect("validated mixture covariance");
                    let d = DVector::from_column_slice(m) - &mean;
                    cov += (c + &d * d.transpose()) * *w;
                }
                cov
            }
            NoiseModel::Impulse {
                probability,
                sigma,
                direction,
            } => {
                let d = DVector::from_column_slice(direction);
                &d * d.transpose() * (probability * sigma * sigma)
            }
            NoiseModel::Sum { terms } => terms
                .iter()
                .fold(DMatrix::zeros(n, n), |acc, t| acc + t.covariance()),
        }
    }

    /// Per-component marginal variances.
    pub fn total_variance(&self) -> Vec<f64> {
        self.covariance().diagonal().iter().cloned().collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        match self {
            NoiseModel::None { .. } => DVector::zeros(n),
            NoiseModel::Gaussian { covariance } => sample_gaussian(covariance, rng),
            NoiseModel::Laplacian { scales } => DVector::from_iterator(
                n,
                scales.iter().map(|b| {
                    // Inverse CDF on u ∈ (-1/2, 1/2).
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
                }),
            ),
            NoiseModel::GaussianMixture {
                weights,
                means,
                covariances,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let cov = linalg::rows::from_rows(&covariances[k]).expect("validated mixture covariance");
                DVector::from_column_slice(&means[k]) + sample_gaussian(&cov, rng)
            }
            NoiseModel::Impulse {
                probability,
                sigma,
                direction,
            } => {
                let fire: f64 = rng.random();
                if fire < *probability {
                    let mag: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
                    DVector::from_iterator(n, direction.iter().map(|d| d * mag))
                } else {
                    DVector::zeros(n)
                }
            }
            NoiseModel::Sum { terms } => terms
                .iter()
                .fold(DVector::zeros(n), |acc, t| acc + t.sample(rng)),
        }
    }
}

fn mixture_mean(weights: &[f64], means: &[Vec<f64>]) -> DVector<f64> {
    let n = means.first().map_or(0, Vec::len);
    weights
        .iter()
        .zip(means)
        .fold(DVector::zeros(n), |acc, (w, m)| acc + DVector::from_column_slice(m) * *w)
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

fn sample_gaussian<R: Rng + ?Sized>(cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = cov.nrows();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    if is_diagonal(cov) {
        return DVector::from_iterator(n, z.iter().zip(cov.diagonal().iter()).map(|(z, v)| z * v.max(0.0).sqrt()));
    }
    match robust_cholesky(cov) {
        Ok((chol, _)) => chol.l() * z,
        // Semi-definite beyond jitter: fall back to the eigen square root.
        Err(_) => {
            let eig = cov.clone().symmetric_eigen();
            let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * z
        }
    }
}
