//! Training and evaluating one estimator, and turning its estimates into metrics.

use std::time::Instant;

use jmf_core::baselines::{observation_estimate, run_classical, ClassicalMethod, CovarianceKnowledge};
use jmf_core::jmfnet::{
    als_train, estimate_jmf, estimate_model_free, fit_feature_scales, fit_model_free_scales, to_db, train_model_free,
    CurveRow, InitialEstimate, JmfNet, ModeNetConfig, ModelFreeNet, TrainConfig, TrajectoryEstimate,
};
use jmf_core::neural::Checkpoint;
use jmf_core::scenarios::Scenario;
use jmf_core::ssm::Trajectory;
use jmf_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::seeds::substream;

/// A ready-to-run estimator.
#[derive(Debug, Clone)]
pub enum Estimator {
    Jmf(JmfNet),
    ModelFree(ModelFreeNet),
    Classical {
        method: ClassicalMethod,
        covariances: CovarianceKnowledge,
        seed: u64,
    },
    /// `x̂_t = H⁺ y_t`.
    Observation,
}

impl Estimator {
    pub fn estimate(&self, scenario: &Scenario, trajs: &[Trajectory], init: InitialEstimate) -> Result<Vec<TrajectoryEstimate>> {
        match self {
            Estimator::Jmf(net) => Ok(estimate_jmf(net, trajs, init, false)),
            Estimator::ModelFree(net) => Ok(estimate_model_free(net, trajs)),
            Estimator::Classical {
                method,
                covariances,
                seed,
            } => run_classical(*method, scenario, trajs, init, *covariances, *seed),
            Estimator::Observation => observation_estimate(scenario, trajs).ok_or_else(|| {
                Error::Config("the observation baseline needs a linear observation map".into())
            }),
        }
    }

    pub fn checkpoint(&self, config_hash: [u8; 32]) -> Option<Checkpoint> {
        match self {
            Estimator::Jmf(net) => Some(net.to_checkpoint(config_hash)),
            Estimator::ModelFree(net) => Some(net.to_checkpoint(config_hash)),
            _ => None,
        }
    }
}

/// Architecture of the model-free regressor: twice the mode network's widths.
pub fn model_free_config(mode_net: &ModeNetConfig) -> ModeNetConfig {
    ModeNetConfig {
        feature_dim: 2 * mode_net.feature_dim,
        hidden: 2 * mode_net.hidden,
        layers: mode_net.layers,
    }
}

/// Freshly initialized learned estimator for `method`, drawn from the seed's init stream.
pub fn initial_learned(method: Method, scenario: &Scenario, mode_net: &ModeNetConfig, seed: u64) -> Result<Estimator> {
    let mut rng = substream(seed, &format!("init/{}", method.name()));
    Ok(match method {
        Method::JmfNet => Estimator::Jmf(JmfNet::new(scenario.knowledge(), mode_net, &mut rng)?),
        Method::KalmanNetAgnostic => {
            let first = scenario.knowledge().into_iter().next().expect("scenarios have modes");
            Estimator::Jmf(JmfNet::agnostic(first, &mut rng))
        }
        Method::MfGru => Estimator::ModelFree(ModelFreeNet::new(
            scenario.obs_dim(),
            scenario.state_dim(),
            &model_free_config(mode_net),
            &mut rng,
        )),
        other => return Err(Error::Config(format!("'{}' is not a learned method", other.name()))),
    })
}

/// Result of training one learned estimator.
#[derive(Debug, Clone)]
pub struct Trained {
    pub estimator: Estimator,
    pub curve: Vec<CurveRow>,
    pub skipped_batches: usize,
    pub wall_time: f64,
}

/// Trains a learned method. The model-free regressor gets twice the epochs.
pub fn train_learned(
    method: Method,
    scenario: &Scenario,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
    mode_net: &ModeNetConfig,
    seed: u64,
) -> Result<Trained> {
    let start = Instant::now();
    let mut shuffle = substream(seed, &format!("shuffle/{}", method.name()));
    let (estimator, curve, skipped) = match initial_learned(method, scenario, mode_net, seed)? {
        Estimator::Jmf(mut net) => {
            fit_feature_scales(&mut net, train);
            let out = als_train(net, train, val, cfg, &mut shuffle)?;
            (Estimator::Jmf(out.net), out.curve, out.skipped_batches)
        }
        Estimator::ModelFree(mut net) => {
            fit_model_free_scales(&mut net, train);
            let doubled = TrainConfig {
                epochs: 2 * cfg.epochs,
                ..cfg.clone()
            };
            let out = train_model_free(net, train, val, &doubled, &mut shuffle)?;
            (Estimator::ModelFree(out.net), out.curve, out.skipped_batches)
        }
        _ => unreachable!("initial_learned only builds learned estimators"),
    };
    Ok(Trained {
        estimator,
        curve,
        skipped_batches: skipped,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// The two covariance variants of a classical method.
pub fn classical_estimators(method: Method, particles: usize, seed: u64) -> Result<Vec<(String, Estimator)>> {
    let cm = match method {
        Method::Kf => ClassicalMethod::Kf,
        Method::Ekf => ClassicalMethod::Ekf,
        Method::Imm => ClassicalMethod::Imm,
        Method::Pf => ClassicalMethod::Pf { particles },
        other => return Err(Error::Config(format!("'{}' is not a classical method", other.name()))),
    };
    Ok([CovarianceKnowledge::Oracle, CovarianceKnowledge::Agnostic]
        .into_iter()
        .map(|cov| {
            (
                cov.name().to_string(),
                Estimator::Classical {
                    method: cm,
                    covariances: cov,
                    seed: crate::seeds::substream_seed(seed, &format!("noise/{}", method.name())),
                },
            )
        })
        .collect())
}

/// Error summary of one estimator on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    /// Mean over trajectories, steps and state components of the squared error,
    /// over trajectories that did not diverge. `None` when all diverged.
    pub mse: Option<f64>,
    pub mse_db: Option<f64>,
    /// Mean over trajectories of `Σ_t ‖x_t − x̂_t‖²`.
    pub loss_sum: Option<f64>,
    pub trajectories: usize,
    pub diverged: usize,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn split_metrics(split: &str, estimates: &[TrajectoryEstimate], trajs: &[Trajectory]) -> SplitMetrics {
    let mut n = 0usize;
    let (mut mse, mut loss) = (0.0, 0.0);
    for (e, t) in estimates.iter().zip(trajs) {
        let m = e.mse(t);
        if e.diverged_at.is_some() || !m.is_finite() {
            continue;
        }
        mse += m;
        loss += e.loss(t);
        n += 1;
    }
    let (mse, loss) = if n == 0 {
        (None, None)
    } else {
        (finite(mse / n as f64), finite(loss / n as f64))
    };
    SplitMetrics {
        split: split.to_string(),
        mse,
        mse_db: mse.map(to_db),
        loss_sum: loss,
        trajectories: trajs.len(),
        diverged: trajs.len() - n,
    }
}

/// Mean squared error per step across trajectories (diverged ones included, so
/// a divergence shows up as a non-finite entry).
pub fn step_profile(estimates: &[TrajectoryEstimate], trajs: &[Trajectory]) -> Vec<f64> {
    let horizon = trajs.iter().map(|t| t.len()).min().unwrap_or(0);
    let mut out = vec![0.0; horizon];
    for (e, t) in estimates.iter().zip(trajs) {
        for (k, v) in e.step_errors(t).into_iter().take(horizon).enumerate() {
            out[k] += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= trajs.len() as f64);
    out
}

/// Ratio of the mean of the last quarter of `profile` to the mean of its first quarter.
pub fn quarter_ratio(profile: &[f64]) -> f64 {
    let q = (profile.len() / 4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&profile[profile.len() - q..]) / mean(&profile[..q])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn traj(states: &[f64]) -> Trajectory {
        Trajectory {
            x0: DVector::from_vec(vec![0.0]),
            states: states.iter().map(|&v| DVector::from_vec(vec![v])).collect(),
            observations: states.iter().map(|&v| DVector::from_vec(vec![v])).collect(),
            modes: vec![],
        }
    }

    fn est(values: &[f64], diverged: bool) -> TrajectoryEstimate {
        TrajectoryEstimate {
            states: values.iter().map(|&v| vec![v]).collect(),
            probs: vec![],
            branches: vec![],
            diverged_at: diverged.then_some(1),
        }
    }

    #[test]
    fn metrics_skip_and_count_divergence() {
        let trajs = [traj(&[0.0, 0.0]), traj(&[0.0, 0.0])];
        let m = split_metrics("test", &[est(&[1.0, 3.0], false), est(&[f64::NAN, f64::NAN], true)], &trajs);
        assert_eq!(m.mse, Some(5.0));
        assert_eq!(m.loss_sum, Some(10.0));
        assert_eq!(m.diverged, 1);
        assert!((m.mse_db.unwrap() - 10.0 * 5f64.log10()).abs() < 1e-12);
        let all = split_metrics("test", &[est(&[f64::NAN, 0.0], true)], &trajs[..1]);
        assert_eq!((all.mse, all.mse_db, all.diverged), (None, None, 1));
    }

    #[test]
    fn quarter_ratio_of_growing_profile() {
        let p: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        assert!((quarter_ratio(&p) - 7.5 / 1.5).abs() < 1e-12);
    }
}
