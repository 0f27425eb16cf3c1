//! Kalman and extended Kalman filter steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, robust_cholesky, symmetrize};
use crate::ssm::{ModeDynamics, Observation, StateModel, Transition};

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    #[serde(with = "linalg::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "linalg::rows")]
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianBelief { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Quantities produced while computing one filter update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub prior: GaussianBelief,
    pub predicted_obs: DVector<f64>,
    /// `Δy = y − ŷ`
    pub innovation: DVector<f64>,
    /// `S = H Σ Hᵀ + R`
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// Diagonal jitter that was needed to factor `S` (0 when none).
    pub jitter: f64,
}

/// Linear-Gaussian model `x_t = F x_{t-1} + w`, `y_t = H x_t + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// A mode's deterministic maps together with the noise covariances a filter
/// assumes for it. The covariances are filter configuration; they need not
/// match the generative noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMode {
    pub transition: Transition,
    pub observation: Observation,
    #[serde(with = "linalg::rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub r: DMatrix<f64>,
}

impl FilterMode {
    /// Takes only the maps of `dynamics`; the noise covariances are supplied separately.
    pub fn from_maps(dynamics: &ModeDynamics, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        FilterMode {
            transition: dynamics.transition.clone(),
            observation: dynamics.observation.clone(),
            q,
            r,
        }
    }

    pub fn from_linear(model: &LinearModel) -> Self {
        FilterMode {
            transition: Transition::Linear { matrix: model.f.clone() },
            observation: Observation::Linear { matrix: model.h.clone() },
            q: model.q.clone(),
            r: model.r.clone(),
        }
    }
}

impl StateModel for FilterMode {
    fn state_dim(&self) -> usize {
        self.transition.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.observation.obs_dim()
    }

    fn transition(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        self.transition.apply(x, t)
    }

    fn transition_jacobian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        self.transition.jacobian(x, t)
    }

    fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        self.observation.apply(x)
    }

    fn observation_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.observation.jacobian(x)
    }
}

/// Measurement update shared by the KF and EKF.
fn update(
    prior: GaussianBelief,
    predicted_obs: DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    if y.len() != predicted_obs.len() || h.nrows() != y.len() || r.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "observation of length {} against model output {}",
            y.len(),
            predicted_obs.len()
        )));
    }
    let ph_t = &prior.cov * h.transpose();
    let mut s = h * &ph_t + r;
    symmetrize(&mut s);
    let (chol, jitter) = robust_cholesky(&s)?;
    // K = Σ Hᵀ S⁻¹ = (S⁻¹ H Σ)ᵀ since Σ and S are symmetric.
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let innovation = y - &predicted_obs;
    let mean = &prior.mean + &gain * &innovation;
    let mut cov = &prior.cov - &gain * &s * gain.transpose();
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior".into()));
    }
    let post = GaussianBelief { mean, cov };
    Ok((
        post,
        StepDiagnostics {
            prior,
            predicted_obs,
            innovation,
            innovation_cov: s,
            gain,
            jitter,
        },
    ))
}

/// One exact Kalman filter recursion.
pub fn kf_step(belief: &GaussianBelief, y: &DVector<f64>, model: &LinearModel) -> Result<(GaussianBelief, StepDiagnostics)> {
    if model.f.ncols() != belief.dim() {
        return Err(Error::Dimension("transition matrix does not match belief".into()));
    }
    let mean = &model.f * &belief.mean;
    let mut cov = &model.f * &belief.cov * model.f.transpose() + &model.q;
    symmetrize(&mut cov);
    let predicted_obs = &model.h * &mean;
    update(GaussianBelief { mean, cov }, predicted_obs, &model.h, &model.r, y)
}

/// One extended Kalman filter recursion; `t` is the index of the produced state.
/// `F̂ = J_f(x̂_{t-1|t-1})` and `Ĥ = J_h(x̂_{t|t-1})`.
pub fn ekf_step<M: StateModel + ?Sized>(
    belief: &GaussianBelief,
    y: &DVector<f64>,
    model: &M,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    t: usize,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    let f_hat = model.transition_jacobian(&belief.mean, t);
    let mean = model.transition(&belief.mean, t);
    let mut cov = &f_hat * &belief.cov * f_hat.transpose() + q;
    symmetrize(&mut cov);
    let h_hat = model.observation_jacobian(&mean);
    let predicted_obs = model.observe(&mean);
    update(GaussianBelief { mean, cov }, predicted_obs, &h_hat, r, y)
}

/// [`ekf_step`] with the covariances a [`FilterMode`] carries.
pub fn filter_mode_step(
    belief: &GaussianBelief,
    y: &DVector<f64>,
    mode: &FilterMode,
    t: usize,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    ekf_step(belief, y, mode, &mode.q, &mode.r, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_hand_computed_step() {
        let model = LinearModel {
            f: scalar(1.0),
            h: scalar(1.0),
            q: scalar(1.0),
            r: scalar(1.0),
        };
        let belief = GaussianBelief::new(DVector::from_vec(vec![0.0]), scalar(1.0));
        let (post, diag) = kf_step(&belief, &DVector::from_vec(vec![3.0]), &model).unwrap();
        assert!((diag.prior.cov[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((diag.innovation_cov[(0, 0)] - 3.0).abs() < 1e-15);
        assert!((diag.gain[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((post.mean[0] - 2.0).abs() < 1e-14);
        assert!((post.cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_full_observation_copies_measurement() {
        let model = LinearModel {
            f: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            h: DMatrix::identity(2, 2),
            q: DMatrix::identity(2, 2) * 0.3,
            r: DMatrix::zeros(2, 2),
        };
        let belief = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2));
        let y = DVector::from_vec(vec![4.0, 2.0]);
        let (post, diag) = kf_step(&belief, &y, &model).unwrap();
        assert!((diag.gain - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!((post.mean - y).amax() < 1e-12);
    }

    #[test]
    fn uninformative_observation_keeps_prior() {
        let model = LinearModel {
            f: DMatrix::identity(2, 2),
            h: DMatrix::identity(2, 2),
            q: DMatrix::zeros(2, 2),
            r: DMatrix::identity(2, 2) * 1e12,
        };
        let belief = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2));
        let (post, diag) = kf_step(&belief, &DVector::from_vec(vec![100.0, -100.0]), &model).unwrap();
        assert!(diag.gain.amax() < 1e-6);
        assert!((post.mean - &belief.mean).amax() < 1e-6);
    }

    #[test]
    fn ekf_equals_kf_on_linear_model() {
        let lin = LinearModel {
            f: DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.0]),
            h: DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            q: DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
            r: scalar(0.7),
        };
        let mode = FilterMode::from_linear(&lin);
        let belief = GaussianBelief::new(DVector::from_vec(vec![0.4, -2.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]));
        let y = DVector::from_vec(vec![1.3]);
        let (a, _) = kf_step(&belief, &y, &lin).unwrap();
        let (b, _) = filter_mode_step(&belief, &y, &mode, 1).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-12);
        assert!((a.cov - b.cov).amax() < 1e-12);
    }

    struct Square;

    impl StateModel for Square {
        fn state_dim(&self) -> usize {
            1
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn transition(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
            x.map(|v| v * v)
        }
        fn transition_jacobian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
            scalar(2.0 * x[0])
        }
        fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn observation_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            scalar(1.0)
        }
    }

    #[test]
    fn ekf_propagates_through_jacobian() {
        let belief = GaussianBelief::new(DVector::from_vec(vec![2.0]), scalar(1.0));
        let (_, diag) = ekf_step(&belief, &DVector::from_vec(vec![4.0]), &Square, &scalar(0.0), &scalar(1.0), 1).unwrap();
        assert!((diag.prior.cov[(0, 0)] - 16.0).abs() < 1e-12);
        assert_eq!(diag.prior.mean[0], 4.0);
    }

    #[test]
    fn pendulum_free_mode_predicts_zero_angle() {
        use crate::ssm::{PendulumLaw, PendulumMotion};
        let mode = FilterMode {
            transition: Transition::Pendulum(PendulumMotion {
                dt: 0.1,
                g: 9.81,
                length: 10.0,
                law: PendulumLaw::Free,
            }),
            observation: Observation::Linear {
                matrix: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            },
            q: DMatrix::zeros(3, 3),
            r: scalar(10.0),
        };
        let belief = GaussianBelief::new(DVector::zeros(3), DMatrix::zeros(3, 3));
        let (_, diag) = filter_mode_step(&belief, &DVector::from_vec(vec![0.5]), &mode, 1).unwrap();
        assert_eq!(diag.predicted_obs[0], 0.0);
    }

    #[test]
    fn update_never_increases_covariance() {
        let model = LinearModel {
            f: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            h: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q: DMatrix::identity(2, 2) * 0.1,
            r: scalar(2.0),
        };
        let mut belief = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2));
        for t in 0..30 {
            let (post, diag) = kf_step(&belief, &DVector::from_vec(vec![t as f64]), &model).unwrap();
            let diff = &diag.prior.cov - &post.cov;
            let min_eig = diff.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-9);
            belief = post;
        }
    }
}
