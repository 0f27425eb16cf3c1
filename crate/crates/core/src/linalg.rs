//! Small dense linear-algebra helpers shared by the classical filters.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest diagonal jitter tried when a factorization fails.
pub const JITTER_START: f64 = 1e-9;
/// Largest diagonal jitter before giving up.
pub const JITTER_MAX: f64 = 1e-3;

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factorization that escalates a diagonal jitter `1e-9·I, 1e-8·I, …, 1e-3·I`
/// until the factorization succeeds. Returns the factor and the jitter used (0 if none).
pub fn robust_cholesky(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance".into()));
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok((chol, 0.0));
    }
    let n = m.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let shifted = m + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        jitter: JITTER_MAX,
        condition: condition_estimate(m),
    })
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Multivariate normal log-density `log N(y; mean, cov)`.
pub fn gaussian_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if y.len() != mean.len() || cov.nrows() != y.len() || cov.ncols() != y.len() {
        return Err(Error::Dimension(format!(
            "logpdf: y {} mean {} cov {}x{}",
            y.len(),
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let (chol, _) = robust_cholesky(cov)?;
    let diff = y - mean;
    let sol = chol.l().solve_lower_triangular(&diff).ok_or_else(|| {
        Error::NotPositiveDefinite {
            jitter: 0.0,
            condition: condition_estimate(cov),
        }
    })?;
    let maha = sol.norm_squared();
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let k = y.len() as f64;
    Ok(-0.5 * (k * (2.0 * PI).ln() + log_det + maha))
}

/// Numerically stable `log Σ exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A zero-mean Gaussian with a cached Cholesky factor, for repeated sampling and
/// density evaluation against one covariance.
#[derive(Debug, Clone)]
pub struct FactoredGaussian {
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl FactoredGaussian {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let (chol, _) = robust_cholesky(cov)?;
        let lower = chol.l();
        let log_det: f64 = lower.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let k = cov.nrows() as f64;
        Ok(FactoredGaussian {
            lower,
            log_norm: -0.5 * (k * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `log N(diff; 0, cov)`.
    pub fn logpdf(&self, diff: &DVector<f64>) -> f64 {
        match self.lower.solve_lower_triangular(diff) {
            Some(sol) => self.log_norm - 0.5 * sol.norm_squared(),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
        &self.lower * z
    }
}

/// Serde adapter storing a `DMatrix` as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| m.row(i).iter().cloned().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

/// Serde adapter storing a `DVector` as a plain list.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logpdf_at_mean_with_identity_cov() {
        let y = DVector::from_vec(vec![0.3, -1.0]);
        let lp = gaussian_logpdf(&y, &y, &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(lp, -(2.0 * PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn logpdf_scalar_closed_form() {
        let lp = gaussian_logpdf(
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![0.0]),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(lp, -0.5 * (2.0 * PI).ln() - 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(lp, -1.41894, epsilon = 1e-5);
    }

    #[test]
    fn logpdf_argmax_invariant_under_covariance_scaling() {
        let y = DVector::from_vec(vec![0.4, 1.1]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let candidates: Vec<DVector<f64>> = (0..7)
            .map(|i| DVector::from_vec(vec![i as f64 * 0.2, 1.0 - i as f64 * 0.1]))
            .collect();
        let argmax = |c: f64| {
            let scaled = &cov * c;
            candidates
                .iter()
                .enumerate()
                .map(|(i, m)| (i, gaussian_logpdf(&y, m, &scaled).unwrap()))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0
        };
        let base = argmax(1.0);
        for c in [0.01, 0.5, 3.0, 100.0] {
            assert_eq!(argmax(c), base);
        }
    }

    #[test]
    fn jitter_rescues_singular_psd_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = robust_cholesky(&m).unwrap();
        assert!(jitter > 0.0 && jitter <= JITTER_MAX);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            robust_cholesky(&m),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_abs_diff_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-9);
    }
}
