use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference Jacobian: entry `(i, k)` is
/// `(map(x + eps·e_k)_i − map(x − eps·e_k)_i) / (2·eps)`.
pub fn finite_difference_jacobian<F>(map: F, x: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += eps;
        minus[k] -= eps;
        let fp = map(&plus);
        let fm = map(&minus);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("map output near coordinate {k}")));
        }
        cols.push((fp - fm) / (2.0 * eps));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, n, |i, k| cols[k][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::dynamics::{PendulumLaw, PendulumMotion};

    #[test]
    fn linear_map_recovers_matrix() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let x = DVector::from_vec(vec![0.3, 7.0, -1.0]);
        let jac = finite_difference_jacobian(|v| &a * v, &x, 1e-6).unwrap();
        assert!((jac - a).amax() < 1e-9);
    }

    #[test]
    fn sine_at_zero() {
        let x = DVector::from_vec(vec![0.0]);
        let jac = finite_difference_jacobian(|v| v.map(f64::sin), &x, 1e-6).unwrap();
        assert!((jac[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn free_pendulum_acceleration_slope() {
        let p = PendulumMotion {
            dt: 0.1,
            g: 9.81,
            length: 10.0,
            law: PendulumLaw::Free,
        };
        let x = DVector::from_vec(vec![0.0]);
        let jac = finite_difference_jacobian(
            |v| DVector::from_vec(vec![p.acceleration(v[0], 0.0, 0.0)]),
            &x,
            1e-6,
        )
        .unwrap();
        assert!((jac[(0, 0)] + 0.981).abs() < 1e-6);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = DVector::from_vec(vec![0.0]);
        let r = finite_difference_jacobian(|v| v.map(f64::ln), &x, 1e-6);
        assert!(r.is_err());
        assert!(finite_difference_jacobian(|v| v.clone(), &x, 0.0).is_err());
    }
}
