use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{Observation, StateModel, Transition};
use super::mode_process::ModeProcess;
use super::noise::NoiseModel;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::linalg;

/// One mode of a switching system: deterministic maps plus the noise that drives them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDynamics {
    pub transition: Transition,
    pub observation: Observation,
    pub process_noise: NoiseModel,
    pub obs_noise: NoiseModel,
}

impl StateModel for ModeDynamics {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Point {
        #[serde(with = "linalg::vector")]
        state: DVector<f64>,
    },
    Gaussian {
        #[serde(with = "linalg::vector")]
        mean: DVector<f64>,
        #[serde(with = "linalg::rows")]
        covariance: DMatrix<f64>,
    },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Point { state } => state.len(),
            InitialState::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            InitialState::Point { state } => state,
            InitialState::Gaussian { mean, .. } => mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            InitialState::Point { state } => state.clone(),
            InitialState::Gaussian { mean, covariance } => {
                mean + NoiseModel::Gaussian {
                    covariance: covariance.clone(),
                }
                .sample(rng)
            }
        }
    }
}

/// The full generative model of an `M`-mode jump Markov system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSystem {
    pub modes: Vec<ModeDynamics>,
    pub mode_process: ModeProcess,
    pub initial: InitialState,
}

impl ModeSystem {
    pub fn new(modes: Vec<ModeDynamics>, mode_process: ModeProcess, initial: InitialState) -> Result<Self> {
        let sys = ModeSystem {
            modes,
            mode_process,
            initial,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.modes[0].obs_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .modes
            .first()
            .ok_or_else(|| Error::InvalidModel("a system needs at least one mode".into()))?;
        let (s, o) = (first.state_dim(), first.obs_dim());
        for (j, m) in self.modes.iter().enumerate() {
            if m.state_dim() != s || m.obs_dim() != o {
                return Err(Error::InvalidModel(format!(
                    "mode {j} has dimensions ({}, {}), mode 0 has ({s}, {o})",
                    m.state_dim(),
                    m.obs_dim()
                )));
            }
            if m.observation.input_dim() != Some(s) {
                return Err(Error::InvalidModel(format!("mode {j} observation does not take a {s}-vector")));
            }
            if let Transition::Linear { matrix } = &m.transition {
                if !matrix.is_square() {
                    return Err(Error::InvalidModel(format!("mode {j} transition matrix is not square")));
                }
            }
            if m.process_noise.dim() != s || m.obs_noise.dim() != o {
                return Err(Error::InvalidModel(format!("mode {j} noise dimensions do not match")));
            }
            m.process_noise.validate()?;
            m.obs_noise.validate()?;
        }
        if self.initial.dim() != s {
            return Err(Error::InvalidModel("initial state has the wrong dimension".into()));
        }
        self.mode_process.validate(Some(self.modes.len()))
    }

    /// Draws one labeled trajectory: the mode sequence first, then
    /// `x_t = f_{j_t}(x_{t-1}) + w_t` and `y_t = h_{j_t}(x_t) + v_t`.
    pub fn simulate<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Result<Trajectory> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let modes = self.mode_process.sample(horizon, rng)?;
        let x0 = self.initial.sample(rng);
        let mut x = x0.clone();
        let mut states = Vec::with_capacity(horizon);
        let mut observations = Vec::with_capacity(horizon);
        for (i, &j) in modes.iter().enumerate() {
            let t = i + 1;
            let mode = &self.modes[j];
            x = mode.transition(&x, t) + mode.process_noise.sample(rng);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: t });
            }
            let y = mode.observe(&x) + mode.obs_noise.sample(rng);
            states.push(x.clone());
            observations.push(y);
        }
        Ok(Trajectory {
            x0,
            states,
            observations,
            modes,
        })
    }
}

/// Free function form of [`ModeSystem::simulate`].
pub fn simulate_trajectory<R: Rng + ?Sized>(system: &ModeSystem, horizon: usize, rng: &mut R) -> Result<Trajectory> {
    system.simulate(horizon, rng)
}
