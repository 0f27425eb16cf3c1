//! Running the model-based filters and the trivial observation baseline over a
//! scenario's trajectories.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    filter_mode_step, imm_step, pf_step, FilterMode, GaussianBelief, ImmBelief, ParticleEnsemble, ParticleModel,
};
use crate::jmfnet::{InitialEstimate, TrajectoryEstimate};
use crate::scenarios::Scenario;
use crate::ssm::{InitialState, ModeProcess, Observation, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalMethod {
    /// Kalman filter with the first mode's model; linear scenarios only.
    Kf,
    /// Extended Kalman filter with the first mode's model.
    Ekf,
    Imm,
    Pf { particles: usize },
}

impl ClassicalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClassicalMethod::Kf => "kf",
            ClassicalMethod::Ekf => "ekf",
            ClassicalMethod::Imm => "imm",
            ClassicalMethod::Pf { .. } => "pf",
        }
    }
}

/// Noise covariances handed to a model-based filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKnowledge {
    /// The generative covariances.
    Oracle,
    /// Identity matrices.
    Agnostic,
}

impl CovarianceKnowledge {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceKnowledge::Oracle => "oracle",
            CovarianceKnowledge::Agnostic => "agnostic",
        }
    }
}

fn filter_modes(scenario: &Scenario, cov: CovarianceKnowledge) -> Vec<FilterMode> {
    let (s, o) = (scenario.state_dim(), scenario.obs_dim());
    scenario
        .filter_modes
        .iter()
        .zip(&scenario.system.modes)
        .map(|(visible, truth)| {
            let (q, r) = match cov {
                CovarianceKnowledge::Oracle => (truth.process_noise.covariance(), truth.obs_noise.covariance()),
                CovarianceKnowledge::Agnostic => (DMatrix::identity(s, s), DMatrix::identity(o, o)),
            };
            FilterMode::from_maps(visible, q, r)
        })
        .collect()
}

fn markov_chain(scenario: &Scenario) -> Result<(DMatrix<f64>, Vec<f64>)> {
    match &scenario.system.mode_process {
        ModeProcess::MarkovChain { transition, initial } => {
            let m = transition.len();
            Ok((DMatrix::from_fn(m, m, |i, j| transition[i][j]), initial.clone()))
        }
        _ => Err(Error::Config(
            "interacting and particle filters need a Markov-chain mode process".into(),
        )),
    }
}

fn initial_cov(scenario: &Scenario) -> DMatrix<f64> {
    match &scenario.system.initial {
        InitialState::Gaussian { covariance, .. } => covariance.clone(),
        InitialState::Point { state } => DMatrix::zeros(state.len(), state.len()),
    }
}

/// Runs one classical filter over every trajectory. A failed step marks the
/// trajectory diverged and fills the remaining estimates with NaN.
pub fn run_classical(
    method: ClassicalMethod,
    scenario: &Scenario,
    trajs: &[Trajectory],
    init: InitialEstimate,
    cov: CovarianceKnowledge,
    seed: u64,
) -> Result<Vec<TrajectoryEstimate>> {
    if method == ClassicalMethod::Kf && !scenario.linear {
        return Err(Error::Config(format!(
            "the Kalman filter needs a linear-Gaussian scenario; '{}' is not",
            scenario.spec.name()
        )));
    }
    let modes = filter_modes(scenario, cov);
    let p0 = initial_cov(scenario);
    let chain = match method {
        ClassicalMethod::Imm | ClassicalMethod::Pf { .. } => Some(markov_chain(scenario)?),
        _ => None,
    };
    let particle_model = match (method, &chain) {
        (ClassicalMethod::Pf { .. }, Some((pi, _))) => Some(ParticleModel::new(modes.clone(), pi.clone())?),
        _ => None,
    };
    let s = scenario.state_dim();
    let mut out = Vec::with_capacity(trajs.len());
    for (idx, tr) in trajs.iter().enumerate() {
        let x0 = DVector::from_vec(init.for_trajectory(tr, idx));
        let mut est = TrajectoryEstimate {
            states: Vec::with_capacity(tr.len()),
            probs: Vec::new(),
            branches: Vec::new(),
            diverged_at: None,
        };
        let run = |est: &mut TrajectoryEstimate| -> Result<()> {
            match method {
                ClassicalMethod::Kf | ClassicalMethod::Ekf => {
                    let mut b = GaussianBelief::new(x0.clone(), p0.clone());
                    for (k, y) in tr.observations.iter().enumerate() {
                        b = filter_mode_step(&b, y, &modes[0], k + 1)?.0;
                        est.states.push(b.mean.as_slice().to_vec());
                    }
                }
                ClassicalMethod::Imm => {
                    let (pi, p_init) = chain.as_ref().expect("chain");
                    let mut b = ImmBelief::uniform_branches(&GaussianBelief::new(x0.clone(), p0.clone()), p_init.clone());
                    for (k, y) in tr.observations.iter().enumerate() {
                        let (next, fused, _) = imm_step(&b, y, &modes, pi, k + 1)?;
                        est.states.push(fused.mean.as_slice().to_vec());
                        est.probs.push(next.probs.clone());
                        b = next;
                    }
                }
                ClassicalMethod::Pf { particles } => {
                    let model = particle_model.as_ref().expect("particle model");
                    let (_, p_init) = chain.as_ref().expect("chain");
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut ens = ParticleEnsemble::sample(particles, &x0, &p0, p_init, &mut rng)?;
                    for (k, y) in tr.observations.iter().enumerate() {
                        let (next, diag) = pf_step(&ens, y, model, k + 1, &mut rng)?;
                        est.states.push(diag.fused_mean.as_slice().to_vec());
                        est.probs.push(next.mode_probs(model.num_modes()));
                        ens = next;
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = run(&mut est) {
            match e {
                Error::Divergence { .. } | Error::NotPositiveDefinite { .. } | Error::NonFinite(_) => {
                    est.diverged_at = Some(est.states.len() + 1);
                    est.states.resize(tr.len(), vec![f64::NAN; s]);
                }
                other => return Err(other),
            }
        }
        out.push(est);
    }
    Ok(out)
}

/// Estimates `x_t = H⁺ y_t` from the first mode's linear observation map, or `None`
/// when that map is nonlinear.
pub fn observation_estimate(scenario: &Scenario, trajs: &[Trajectory]) -> Option<Vec<TrajectoryEstimate>> {
    let h = match &scenario.filter_modes[0].observation {
        Observation::Linear { matrix } => matrix.clone(),
        Observation::Spherical { .. } => return None,
    };
    let pinv = h.clone().pseudo_inverse(1e-12).ok()?;
    Some(
        trajs
            .iter()
            .map(|tr| TrajectoryEstimate {
                states: tr
                    .observations
                    .iter()
                    .map(|y| (&pinv * y).as_slice().to_vec())
                    .collect(),
                probs: Vec::new(),
                branches: Vec::new(),
                diverged_at: None,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::ScenarioSpec;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn kf_refuses_nonlinear_scenarios() {
        let sc = ScenarioSpec::pendulum(0.01).build().unwrap();
        let data = sc.generate(1, &mut rng(0)).unwrap();
        let r = run_classical(ClassicalMethod::Kf, &sc, &data, InitialEstimate::TrueState, CovarianceKnowledge::Oracle, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn observation_baseline_error_is_the_noise_power() {
        let mut spec = ScenarioSpec::lorenz(0.0);
        spec.horizon = 50;
        let sc = spec.build().unwrap();
        // Force the identity-observation modes so the baseline applies on every step.
        let mut sc = sc;
        for m in sc.system.modes.iter_mut() {
            m.observation = Observation::Linear {
                matrix: DMatrix::identity(3, 3),
            };
        }
        sc.filter_modes = sc.system.modes.clone();
        let data = sc.generate(400, &mut rng(1)).unwrap();
        let est = observation_estimate(&sc, &data).unwrap();
        let mse: f64 = est.iter().zip(&data).map(|(e, t)| e.mse(t)).sum::<f64>() / data.len() as f64;
        // 0 dB is unit variance per component.
        assert!((mse - 1.0).abs() < 0.03, "mse {mse}");
    }

    #[test]
    fn kf_beats_every_fixed_diagonal_gain() {
        // Single-mode constant-velocity system with its true covariances.
        let mut spec = ScenarioSpec::linear2();
        if let crate::scenarios::ScenarioKind::Linear2(p) = &mut spec.kind {
            p.transition = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
            p.initial_modes = vec![1.0, 0.0];
        }
        let sc = spec.build().unwrap();
        let data = sc.generate(200, &mut rng(2)).unwrap();
        let kf = run_classical(ClassicalMethod::Kf, &sc, &data, InitialEstimate::TrueState, CovarianceKnowledge::Oracle, 0).unwrap();
        let kf_mse: f64 = kf.iter().zip(&data).map(|(e, t)| e.mse(t)).sum::<f64>() / data.len() as f64;
        let f = crate::scenarios::constant_velocity(1.0);
        let h = crate::scenarios::position_observation();
        for k in 1..=10 {
            let gp = k as f64 / 10.0;
            for gv in [0.05, 0.1, 0.2, 0.4] {
                // Position gain on positions, velocity gain coupling position innovations to velocities.
                let mut gain = DMatrix::zeros(4, 2);
                gain[(0, 0)] = gp;
                gain[(1, 0)] = gv;
                gain[(2, 1)] = gp;
                gain[(3, 1)] = gv;
                let mut total = 0.0;
                for tr in &data {
                    let mut x = tr.x0.clone();
                    let mut err = 0.0;
                    for (y, truth) in tr.observations.iter().zip(&tr.states) {
                        let prior = &f * &x;
                        x = &prior + &gain * (y - &h * &prior);
                        err += (&x - truth).norm_squared() / 4.0;
                    }
                    total += err / tr.len() as f64;
                }
                let fixed = total / data.len() as f64;
                assert!(kf_mse <= fixed, "fixed gain ({gp}, {gv}) mse {fixed} below kf {kf_mse}");
            }
        }
    }

    #[test]
    fn imm_and_pf_run_on_linear2() {
        let sc = ScenarioSpec::linear2().build().unwrap();
        let data = sc.generate(5, &mut rng(3)).unwrap();
        for method in [ClassicalMethod::Imm, ClassicalMethod::Pf { particles: 200 }, ClassicalMethod::Ekf] {
            for cov in [CovarianceKnowledge::Oracle, CovarianceKnowledge::Agnostic] {
                let est = run_classical(method, &sc, &data, InitialEstimate::TrueState, cov, 7).unwrap();
                assert_eq!(est.len(), 5);
                assert!(est.iter().all(|e| e.states.len() == 50 && e.diverged_at.is_none()));
            }
        }
        let a = run_classical(ClassicalMethod::Pf { particles: 100 }, &sc, &data, InitialEstimate::TrueState, CovarianceKnowledge::Oracle, 9).unwrap();
        let b = run_classical(ClassicalMethod::Pf { particles: 100 }, &sc, &data, InitialEstimate::TrueState, CovarianceKnowledge::Oracle, 9).unwrap();
        assert_eq!(a, b);
    }
}
