//! Posterior of a linear-Gaussian state-space model by conditioning the joint
//! Gaussian of all states and observations at once, with no recursion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct LinearSystem {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

fn spd<R: Rng>(n: usize, floor: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

impl LinearSystem {
    pub fn random<R: Rng>(s: usize, o: usize, rng: &mut R) -> Self {
        let mut f = DMatrix::from_fn(s, s, |_, _| rng.random_range(-1.0..1.0));
        let norm = f.clone().svd(false, false).singular_values.max();
        if norm > 0.95 {
            f *= 0.95 / norm;
        }
        LinearSystem {
            f,
            h: DMatrix::from_fn(o, s, |_, _| rng.random_range(-1.0..1.0)),
            q: spd(s, 0.1, rng),
            r: spd(o, 0.1, rng),
            m0: DVector::from_fn(s, |_, _| rng.random_range(-2.0..2.0)),
            p0: spd(s, 0.1, rng),
        }
    }

    pub fn simulate<R: Rng>(&self, horizon: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let gauss = |cov: &DMatrix<f64>, rng: &mut R| {
            let l = cov.clone().cholesky().expect("spd").l();
            let z = DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
            l * z
        };
        let mut x = &self.m0 + gauss(&self.p0, rng);
        (0..horizon)
            .map(|_| {
                x = &self.f * &x + gauss(&self.q, rng);
                &self.h * &x + gauss(&self.r, rng)
            })
            .collect()
    }

    /// Filtered means and covariances of `x_t` given `y_1..y_t`, for `t = 1..T`.
    pub fn batch_posteriors(&self, ys: &[DVector<f64>]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        let (s, o, horizon) = (self.f.nrows(), self.h.nrows(), ys.len());
        // Prior means and covariances of x_0..x_T.
        let mut means = vec![self.m0.clone()];
        let mut covs = vec![self.p0.clone()];
        for t in 1..=horizon {
            means.push(&self.f * &means[t - 1]);
            covs.push(&self.f * &covs[t - 1] * self.f.transpose() + &self.q);
        }
        // Cov(x_i, x_j) for i <= j is Σ_i (F^{j-i})ᵀ.
        let cross = |i: usize, j: usize| -> DMatrix<f64> {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            let mut c = covs[lo].clone();
            for _ in lo..hi {
                c = &c * self.f.transpose();
            }
            if i <= j {
                c
            } else {
                c.transpose()
            }
        };
        let mut out = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let n = t * o;
            let mut syy = DMatrix::zeros(n, n);
            let mut sxy = DMatrix::zeros(s, n);
            let mut resid = DVector::zeros(n);
            for a in 1..=t {
                let ra = (a - 1) * o;
                resid.rows_mut(ra, o).copy_from(&(&ys[a - 1] - &self.h * &means[a]));
                sxy.view_mut((0, ra), (s, o)).copy_from(&(cross(t, a) * self.h.transpose()));
                for b in 1..=t {
                    let rb = (b - 1) * o;
                    let mut block = &self.h * cross(a, b) * self.h.transpose();
                    if a == b {
                        block += &self.r;
                    }
                    syy.view_mut((ra, rb), (o, o)).copy_from(&block);
                }
            }
            let chol = syy.cholesky().expect("joint observation covariance is positive definite");
            let mean = &means[t] + &sxy * chol.solve(&resid);
            let cov = &covs[t] - &sxy * chol.solve(&sxy.transpose());
            out.push((mean, cov));
        }
        out
    }
}
