//! Deterministic state-transition and observation maps with analytic Jacobians.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::linalg;

/// A (possibly nonlinear, possibly time-varying) state-space model without noise.
///
/// `transition(x, t)` maps `x_{t-1}` to the noiseless `x_t`, where `t ≥ 1` is the
/// index of the produced state.
pub trait StateModel {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn transition(&self, x: &DVector<f64>, t: usize) -> DVector<f64>;
    fn transition_jacobian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64>;
    fn observe(&self, x: &DVector<f64>) -> DVector<f64>;
    fn observation_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transition {
    Linear {
        #[serde(with = "linalg::rows")]
        matrix: DMatrix<f64>,
    },
    Kinematic(KinematicMotion),
    Pendulum(PendulumMotion),
    LorenzTaylor { order: usize, dtau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Linear {
        #[serde(with = "linalg::rows")]
        matrix: DMatrix<f64>,
    },
    /// `(r, inclination, azimuth)` of a 3-vector.
    Spherical { min_radius: f64 },
}

/// Acceleration law for the 2D kinematic target, state `[p_x, v_x, p_y, v_y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccelerationLaw {
    Constant { ax: f64, ay: f64 },
    /// `a = c2·p² + c1·p + c0` per axis, clamped to `±max_accel`.
    Quadratic { c2: f64, c1: f64, c0: f64, max_accel: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicMotion {
    pub dt: f64,
    pub law: AccelerationLaw,
    /// Added to the velocity used in the position update.
    #[serde(default)]
    pub velocity_bias: f64,
    /// Added to the acceleration.
    #[serde(default)]
    pub accel_bias: f64,
}

impl AccelerationLaw {
    /// Acceleration along one axis at position `p`, and its derivative in `p`.
    pub fn eval(&self, p: f64, axis: usize) -> (f64, f64) {
        match *self {
            AccelerationLaw::Constant { ax, ay } => (if axis == 0 { ax } else { ay }, 0.0),
            AccelerationLaw::Quadratic {
                c2,
                c1,
                c0,
                max_accel,
            } => {
                let a = c2 * p * p + c1 * p + c0;
                if a > max_accel {
                    (max_accel, 0.0)
                } else if a < -max_accel {
                    (-max_accel, 0.0)
                } else {
                    (a, 2.0 * c2 * p + c1)
                }
            }
        }
    }
}

impl KinematicMotion {
    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        let mut out = DVector::zeros(4);
        for axis in 0..2 {
            let (p, v) = (x[2 * axis], x[2 * axis + 1]);
            let a = self.law.eval(p, axis).0 + self.accel_bias;
            out[2 * axis] = p + (v + self.velocity_bias) * dt + 0.5 * a * dt * dt;
            out[2 * axis + 1] = v + a * dt;
        }
        out
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let dt = self.dt;
        let mut jac = DMatrix::zeros(4, 4);
        for axis in 0..2 {
            let (pi, vi) = (2 * axis, 2 * axis + 1);
            let da = self.law.eval(x[pi], axis).1;
            jac[(pi, pi)] = 1.0 + 0.5 * dt * dt * da;
            jac[(pi, vi)] = dt;
            jac[(vi, pi)] = dt * da;
            jac[(vi, vi)] = 1.0;
        }
        jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PendulumLaw {
    Free,
    Damped { gamma: f64 },
    Driven { amplitude: f64, omega: f64 },
    /// Free dynamics; the kicks enter through the mode's impulse process noise.
    Kicked,
}

/// Pendulum with state `[θ, θ', θ'']`, integrated by the Euler pair
/// `θ' ← θ' + θ''·dt`, `θ ← θ + θ'·dt` applied in that order, after which the
/// acceleration is re-evaluated from the mode's law at the new state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumMotion {
    pub dt: f64,
    pub g: f64,
    pub length: f64,
    pub law: PendulumLaw,
}

impl PendulumMotion {
    /// Angular acceleration at angle `theta`, rate `theta_dot`, continuous time `time`.
    pub fn acceleration(&self, theta: f64, theta_dot: f64, time: f64) -> f64 {
        let gravity = -(self.g / self.length) * theta.sin();
        match self.law {
            PendulumLaw::Free | PendulumLaw::Kicked => gravity,
            PendulumLaw::Damped { gamma } => gravity - gamma * theta_dot,
            PendulumLaw::Driven { amplitude, omega } => gravity + amplitude * (omega * time).cos(),
        }
    }

    /// Partial derivatives of the acceleration in `(θ, θ')`.
    fn acceleration_gradient(&self, theta: f64) -> (f64, f64) {
        let d_theta = -(self.g / self.length) * theta.cos();
        match self.law {
            PendulumLaw::Damped { gamma } => (d_theta, -gamma),
            _ => (d_theta, 0.0),
        }
    }

    fn step(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        let dt = self.dt;
        let rate = x[1] + x[2] * dt;
        let angle = x[0] + rate * dt;
        let accel = self.acceleration(angle, rate, t as f64 * dt);
        DVector::from_vec(vec![angle, rate, accel])
    }

    fn jacobian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        let dt = self.dt;
        let rate = x[1] + x[2] * dt;
        let angle = x[0] + rate * dt;
        let d_rate = [0.0, 1.0, dt];
        let d_angle = [1.0, dt, dt * dt];
        let (a_theta, a_rate) = self.acceleration_gradient(angle);
        DMatrix::from_fn(3, 3, |i, k| match i {
            0 => d_angle[k],
            1 => d_rate[k],
            _ => a_theta * d_angle[k] + a_rate * d_rate[k],
        })
    }
}

/// Continuous-time Lorenz system matrix `A(x)` with `dx/dτ = A(x) x`.
pub fn lorenz_matrix(x: &DVector<f64>) -> Matrix3<f64> {
    Matrix3::new(
        -10.0, 10.0, 0.0, //
        28.0, -1.0, -x[0], //
        0.0, x[0], -8.0 / 3.0,
    )
}

/// `∂A/∂x₁` for [`lorenz_matrix`]; `A` is affine in `x₁` and constant in `x₂, x₃`.
fn lorenz_matrix_derivative() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, //
        0.0, 1.0, 0.0,
    )
}

/// Truncated Taylor series `Σ_{k=0}^{J} (A(x)Δτ)^k / k!`.
pub fn lorenz_taylor_matrix(x: &DVector<f64>, order: usize, dtau: f64) -> Matrix3<f64> {
    let m = lorenz_matrix(x) * dtau;
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=order {
        term = term * m / k as f64;
        sum += term;
    }
    sum
}

fn lorenz_step(x: &DVector<f64>, order: usize, dtau: f64) -> DVector<f64> {
    let v = Vector3::new(x[0], x[1], x[2]);
    let out = lorenz_taylor_matrix(x, order, dtau) * v;
    DVector::from_column_slice(out.as_slice())
}

fn lorenz_jacobian(x: &DVector<f64>, order: usize, dtau: f64) -> DMatrix<f64> {
    let v = Vector3::new(x[0], x[1], x[2]);
    let m = lorenz_matrix(x) * dtau;
    let dm = lorenz_matrix_derivative() * dtau;
    let mut powers = vec![Matrix3::<f64>::identity()];
    for k in 1..order.max(1) {
        powers.push(powers[k - 1] * m);
    }
    // d(M^k)/dx₁ = Σ_{i<k} M^i (∂M/∂x₁) M^{k-1-i}
    let mut col = Vector3::zeros();
    let mut factorial = 1.0;
    for k in 1..=order {
        factorial *= k as f64;
        let mut dpow = Matrix3::<f64>::zeros();
        for i in 0..k {
            dpow += powers[i] * dm * powers[k - 1 - i];
        }
        col += dpow * v / factorial;
    }
    let mut jac = lorenz_taylor_matrix(x, order, dtau);
    for r in 0..3 {
        jac[(r, 0)] += col[r];
    }
    DMatrix::from_column_slice(3, 3, jac.as_slice())
}

/// Spherical coordinates `(r, acos(x₃/r), atan2(x₂, x₁))`. The flag reports that
/// `r` was clamped to `min_radius`.
pub fn spherical(x: &DVector<f64>, min_radius: f64) -> (DVector<f64>, bool) {
    let norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let clamped = norm < min_radius;
    let r = norm.max(min_radius);
    let incl = (x[2] / r).clamp(-1.0, 1.0).acos();
    let az = x[1].atan2(x[0]);
    (DVector::from_vec(vec![r, incl, az]), clamped)
}

fn spherical_jacobian(x: &DVector<f64>, min_radius: f64) -> DMatrix<f64> {
    let (px, py, pz) = (x[0], x[1], x[2]);
    let r2 = (px * px + py * py + pz * pz).max(min_radius * min_radius);
    let r = r2.sqrt();
    let rho2 = (px * px + py * py).max(min_radius * min_radius);
    let rho = rho2.sqrt();
    DMatrix::from_row_slice(
        3,
        3,
        &[
            px / r,
            py / r,
            pz / r,
            px * pz / (r2 * rho),
            py * pz / (r2 * rho),
            -rho / r2,
            -py / rho2,
            px / rho2,
            0.0,
        ],
    )
}

impl Transition {
    pub fn state_dim(&self) -> usize {
        match self {
            Transition::Linear { matrix } => matrix.nrows(),
            Transition::Kinematic(_) => 4,
            Transition::Pendulum(_) | Transition::LorenzTaylor { .. } => 3,
        }
    }

    pub fn apply(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        match self {
            Transition::Linear { matrix } => matrix * x,
            Transition::Kinematic(k) => k.step(x),
            Transition::Pendulum(p) => p.step(x, t),
            Transition::LorenzTaylor { order, dtau } => lorenz_step(x, *order, *dtau),
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        match self {
            Transition::Linear { matrix } => matrix.clone(),
            Transition::Kinematic(k) => k.jacobian(x),
            Transition::Pendulum(p) => p.jacobian(x, t),
            Transition::LorenzTaylor { order, dtau } => lorenz_jacobian(x, *order, *dtau),
        }
    }
}

impl Observation {
    pub fn obs_dim(&self) -> usize {
        match self {
            Observation::Linear { matrix } => matrix.nrows(),
            Observation::Spherical { .. } => 3,
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Observation::Linear { matrix } => Some(matrix.ncols()),
            Observation::Spherical { .. } => Some(3),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Observation::Linear { matrix } => matrix * x,
            Observation::Spherical { min_radius } => spherical(x, *min_radius).0,
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Observation::Linear { matrix } => matrix.clone(),
            Observation::Spherical { min_radius } => spherical_jacobian(x, *min_radius),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::jacobian::finite_difference_jacobian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1.0)
    }

    fn check_transition(tr: &Transition, sampler: impl Fn(&mut ChaCha8Rng) -> DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..100 {
            let x = sampler(&mut rng);
            let t = i + 1;
            let analytic = tr.jacobian(&x, t);
            let numeric = finite_difference_jacobian(|v| tr.apply(v, t), &x, 1e-6).unwrap();
            assert!(rel_err(&analytic, &numeric) < 1e-5, "{tr:?} at {x}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn kinematic_jacobians_match_finite_differences() {
        for law in [
            AccelerationLaw::Constant { ax: 1.0, ay: 1.0 },
            AccelerationLaw::Quadratic {
                c2: 1e-4,
                c1: 1e-2,
                c0: 1.0,
                max_accel: 10.0,
            },
        ] {
            let tr = Transition::Kinematic(KinematicMotion {
                dt: 1.0,
                law,
                velocity_bias: 0.3,
                accel_bias: 0.3,
            });
            check_transition(&tr, |rng| {
                DVector::from_fn(4, |i, _| if i % 2 == 0 { rng.random_range(-150.0..150.0) } else { rng.random_range(-20.0..20.0) })
            });
        }
    }

    #[test]
    fn pendulum_jacobians_match_finite_differences() {
        for law in [
            PendulumLaw::Free,
            PendulumLaw::Damped { gamma: 0.2 },
            PendulumLaw::Driven {
                amplitude: 1.0,
                omega: 2.0,
            },
            PendulumLaw::Kicked,
        ] {
            let tr = Transition::Pendulum(PendulumMotion {
                dt: 0.1,
                g: 9.81,
                length: 10.0,
                law,
            });
            check_transition(&tr, |rng| DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)));
        }
    }

    #[test]
    fn lorenz_jacobians_match_finite_differences() {
        for order in [2, 4, 5] {
            let tr = Transition::LorenzTaylor { order, dtau: 0.02 };
            check_transition(&tr, |rng| {
                DVector::from_vec(vec![
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-25.0..25.0),
                    rng.random_range(0.0..45.0),
                ])
            });
        }
    }

    #[test]
    fn spherical_jacobian_matches_finite_differences() {
        let obs = Observation::Spherical { min_radius: 1e-9 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-20.0..20.0));
            let analytic = obs.jacobian(&x);
            let numeric = finite_difference_jacobian(|v| obs.apply(v), &x, 1e-6).unwrap();
            assert!(rel_err(&analytic, &numeric) < 1e-5);
        }
    }

    #[test]
    fn spherical_north_pole() {
        let (v, clamped) = spherical(&DVector::from_vec(vec![0.0, 0.0, 1.0]), 1e-9);
        assert!(!clamped);
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn spherical_origin_is_clamped() {
        let (v, clamped) = spherical(&DVector::zeros(3), 1e-9);
        assert!(clamped);
        assert!(v.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn lorenz_order_two_is_second_order_polynomial() {
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let a = lorenz_matrix(&x);
        assert_eq!(a.row(0).iter().cloned().collect::<Vec<_>>(), vec![-10.0, 10.0, 0.0]);
        let d = 0.02;
        let expected = Matrix3::identity() + a * d + a * a * (d * d / 2.0);
        let got = lorenz_taylor_matrix(&x, 2, d);
        assert!((got - expected).amax() < 1e-15);
    }

    #[test]
    fn pendulum_laws() {
        let mut p = PendulumMotion {
            dt: 0.1,
            g: 9.81,
            length: 10.0,
            law: PendulumLaw::Driven {
                amplitude: 1.0,
                omega: 2.0,
            },
        };
        assert_eq!(p.acceleration(0.0, 0.0, 0.0), 1.0);
        p.law = PendulumLaw::Damped { gamma: 0.2 };
        assert!((p.acceleration(0.0, 1.0, 0.0) + 0.2).abs() < 1e-15);
        p.law = PendulumLaw::Free;
        let next = p.step(&DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0]), 1);
        assert!((next[2] + 0.981).abs() < 1e-12);
    }
}
