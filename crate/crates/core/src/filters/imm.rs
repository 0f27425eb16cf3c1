//! Interacting multiple model filter with KF or EKF branches.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kalman::{filter_mode_step, FilterMode, GaussianBelief, StepDiagnostics};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};

/// Per-mode Gaussian beliefs plus mode probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmBelief {
    pub branches: Vec<GaussianBelief>,
    pub probs: Vec<f64>,
}

impl ImmBelief {
    /// Every branch starts from `initial`, with the given mode probabilities.
    pub fn uniform_branches(initial: &GaussianBelief, probs: Vec<f64>) -> Self {
        ImmBelief {
            branches: vec![initial.clone(); probs.len()],
            probs,
        }
    }

    pub fn num_modes(&self) -> usize {
        self.probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.len() != self.probs.len() || self.probs.is_empty() {
            return Err(Error::Dimension("IMM branch count does not match mode probabilities".into()));
        }
        let sum: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("mode probabilities do not form a simplex (sum {sum})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ImmDiagnostics {
    /// `log N(y; ŷ_j, S_j)` for each branch.
    pub log_likelihoods: Vec<f64>,
    /// Predicted mode probabilities `c_j = Σ_i Π_ij μ_i`.
    pub predicted_probs: Vec<f64>,
    /// Set when every branch likelihood underflowed and `μ` fell back to `c`.
    pub likelihood_underflow: bool,
    pub branches: Vec<StepDiagnostics>,
}

/// Moment-matched mixture of Gaussians: the weighted mean and the weighted covariance
/// plus the spread-of-means term.
pub fn merge_gaussians(beliefs: &[&GaussianBelief], weights: &[f64]) -> GaussianBelief {
    let n = beliefs[0].dim();
    let mut mean = DVector::zeros(n);
    for (b, &w) in beliefs.iter().zip(weights) {
        mean.axpy(w, &b.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (b, &w) in beliefs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let d = &b.mean - &mean;
        cov += (&b.cov + &d * d.transpose()) * w;
    }
    symmetrize(&mut cov);
    GaussianBelief { mean, cov }
}

/// One IMM recursion: mixing, per-mode filtering, mode-probability update and fusion.
/// `transition[i][j]` is the probability of moving from mode `i` to mode `j`;
/// `t` is the index of the produced state.
pub fn imm_step(
    belief: &ImmBelief,
    y: &DVector<f64>,
    modes: &[FilterMode],
    transition: &DMatrix<f64>,
    t: usize,
) -> Result<(ImmBelief, GaussianBelief, ImmDiagnostics)> {
    let m = belief.num_modes();
    if modes.len() != m || transition.nrows() != m || transition.ncols() != m || belief.branches.len() != m {
        return Err(Error::Dimension(format!(
            "IMM with {m} modes got {} filter modes and a {}x{} transition matrix",
            modes.len(),
            transition.nrows(),
            transition.ncols()
        )));
    }

    // Mixing.
    let predicted: Vec<f64> = (0..m)
        .map(|j| (0..m).map(|i| transition[(i, j)] * belief.probs[i]).sum())
        .collect();
    let refs: Vec<&GaussianBelief> = belief.branches.iter().collect();
    let mut log_likelihoods = Vec::with_capacity(m);
    let mut branches = Vec::with_capacity(m);
    let mut diags = Vec::with_capacity(m);
    for j in 0..m {
        let mixed = if predicted[j] > 0.0 {
            let w: Vec<f64> = (0..m).map(|i| transition[(i, j)] * belief.probs[i] / predicted[j]).collect();
            merge_gaussians(&refs, &w)
        } else {
            belief.branches[j].clone()
        };
        let (post, diag) = filter_mode_step(&mixed, y, &modes[j], t)?;
        let ll = linalg::gaussian_logpdf(&diag.innovation, &DVector::zeros(y.len()), &diag.innovation_cov)?;
        log_likelihoods.push(ll);
        branches.push(post);
        diags.push(diag);
    }

    // Mode probabilities in log space.
    let log_unnorm: Vec<f64> = log_likelihoods
        .iter()
        .zip(&predicted)
        .map(|(ll, c)| if *c > 0.0 { ll + c.ln() } else { f64::NEG_INFINITY })
        .collect();
    let norm = linalg::log_sum_exp(&log_unnorm);
    let (probs, likelihood_underflow) = if norm.is_finite() {
        (log_unnorm.iter().map(|l| (l - norm).exp()).collect::<Vec<_>>(), false)
    } else {
        let total: f64 = predicted.iter().sum();
        (predicted.iter().map(|c| c / total).collect(), true)
    };

    let branch_refs: Vec<&GaussianBelief> = branches.iter().collect();
    let fused = merge_gaussians(&branch_refs, &probs);
    Ok((
        ImmBelief { branches, probs },
        fused,
        ImmDiagnostics {
            log_likelihoods,
            predicted_probs: predicted,
            likelihood_underflow,
            branches: diags,
        },
    ))
}
