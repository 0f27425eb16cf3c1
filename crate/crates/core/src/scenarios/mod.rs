//! Parameterized benchmark systems with their default constants, model mismatch,
//! and trajectory ingestion.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jmfnet::ModeKnowledge;
use crate::ssm::trajectory::{read_csv, ColumnMap};
use crate::ssm::{
    AccelerationLaw, InitialState, KinematicMotion, ModeDynamics, ModeProcess, ModeSystem, NoiseModel, Observation,
    PendulumLaw, PendulumMotion, Trajectory, Transition,
};

/// Observation-noise family of a variance-matched scenario variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    Laplacian,
    Gmm,
}

impl NoiseFamily {
    /// Zero-mean noise with per-component variance `variance`.
    pub fn noise(self, variance: f64, dim: usize) -> NoiseModel {
        match self {
            NoiseFamily::Gaussian => NoiseModel::isotropic(variance, dim),
            NoiseFamily::Laplacian => NoiseModel::laplacian_matched(variance, dim),
            NoiseFamily::Gmm => NoiseModel::gmm_matched(variance, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear2Params {
    pub dt: f64,
    pub omega: f64,
    pub q_cv: f64,
    pub q_ct: f64,
    pub r: f64,
    pub transition: Vec<Vec<f64>>,
    pub initial_modes: Vec<f64>,
    pub x0: Vec<f64>,
}

impl Default for Linear2Params {
    fn default() -> Self {
        Linear2Params {
            dt: 1.0,
            omega: 0.1,
            q_cv: 0.5,
            q_ct: 2.0,
            r: 5.0,
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            initial_modes: vec![0.5, 0.5],
            x0: vec![0.0, 10.0, 0.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear4Params {
    pub dt: f64,
    pub omega: f64,
    /// Process-noise variance of the CV, CT, CVB and inverse-turn modes.
    pub q: [f64; 4],
    pub r: f64,
    pub noise: NoiseFamily,
    pub transition: Vec<Vec<f64>>,
    pub initial_modes: Vec<f64>,
    pub x0: Vec<f64>,
}

impl Default for Linear4Params {
    fn default() -> Self {
        Linear4Params {
            dt: 0.01,
            omega: 0.1,
            q: [0.5, 2.0, 0.5, 2.0],
            r: 5.0,
            noise: NoiseFamily::Gaussian,
            transition: symmetric_rows(4, 0.7),
            initial_modes: vec![0.25; 4],
            x0: vec![0.0, 10.0, 0.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticParams {
    pub dt: f64,
    /// Constant acceleration of the first mode, per axis.
    pub accel: [f64; 2],
    /// `a·p² + b·p + c` acceleration coefficients of the second mode.
    pub coefficients: [f64; 3],
    pub max_accel: f64,
    /// Bias added to the velocity and acceleration terms of the filter-visible model.
    pub mismatch: f64,
    pub q: [f64; 2],
    pub r: f64,
    pub transition: Vec<Vec<f64>>,
    pub initial_modes: Vec<f64>,
    pub x0: Vec<f64>,
}

impl Default for QuadraticParams {
    fn default() -> Self {
        QuadraticParams {
            dt: 1.0,
            accel: [1.0, 1.0],
            coefficients: [1e-4, 1e-2, 1.0],
            max_accel: 10.0,
            mismatch: 0.0,
            q: [0.5, 2.0],
            r: 5.0,
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            initial_modes: vec![0.5, 0.5],
            x0: vec![0.0, 10.0, 0.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub dt: f64,
    pub g: f64,
    pub length: f64,
    pub gamma: f64,
    pub drive_amplitude: f64,
    pub drive_omega: f64,
    pub kick_probability: f64,
    /// Standard deviation of a kick to the angular acceleration.
    pub kick_sigma: f64,
    /// State-noise covariance is `sigma · I₃`.
    pub sigma: f64,
    pub r: f64,
    pub stay: f64,
    pub x0: Vec<f64>,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            dt: 0.1,
            g: 9.81,
            length: 10.0,
            gamma: 0.2,
            drive_amplitude: 1.0,
            drive_omega: 2.0,
            kick_probability: 0.01,
            kick_sigma: 1.0,
            sigma: 0.01,
            r: 10.0,
            stay: 0.7,
            x0: vec![0.5, 0.0, -(9.81 / 10.0) * 0.5f64.sin()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub dtau: f64,
    pub orders: Vec<usize>,
    /// Per-component observation-noise power in dB.
    pub noise_db: f64,
    pub q: f64,
    pub min_radius: f64,
    pub transition: Vec<Vec<f64>>,
    pub initial_modes: Vec<f64>,
    pub x0: Vec<f64>,
}

impl Default for LorenzParams {
    fn default() -> Self {
        LorenzParams {
            dtau: 0.02,
            orders: vec![2, 4, 5],
            noise_db: -10.0,
            q: 0.1,
            min_radius: 1e-9,
            transition: symmetric_rows(3, 0.6),
            initial_modes: vec![1.0 / 3.0; 3],
            x0: vec![1.0, 1.0, 1.0],
        }
    }
}

/// Which benchmark system, with all of its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScenarioKind {
    Linear2(Linear2Params),
    Linear4(Linear4Params),
    Quadratic(QuadraticParams),
    Pendulum(PendulumParams),
    Lorenz(LorenzParams),
}

/// Number of trajectories per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetSizes {
    pub const DESK: DatasetSizes = DatasetSizes {
        train: 2000,
        val: 500,
        test: 500,
    };
    pub const PAPER: DatasetSizes = DatasetSizes {
        train: 40000,
        val: 10000,
        test: 10000,
    };
}

/// A serializable benchmark definition. Every constant appears explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub horizon: usize,
    pub sizes: DatasetSizes,
    /// Truncated-BPTT segment length used for training, if any.
    pub segment_len: Option<usize>,
}

/// A scenario resolved into its generative system and the model the filters see.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub system: ModeSystem,
    /// Filter-visible per-mode dynamics (may differ from `system.modes`).
    pub filter_modes: Vec<ModeDynamics>,
    /// True when every mode is linear-Gaussian, so exact Kalman filtering applies.
    pub linear: bool,
}

fn symmetric_rows(m: usize, stay: f64) -> Vec<Vec<f64>> {
    let off = (1.0 - stay) / (m - 1) as f64;
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { stay } else { off }).collect())
        .collect()
}

/// Constant-velocity matrix for state `[p_x, v_x, p_y, v_y]`; `dt < 0` moves backwards.
pub fn constant_velocity(dt: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[1., dt, 0., 0., 0., 1., 0., 0., 0., 0., 1., dt, 0., 0., 0., 1.])
}

/// Coordinated-turn matrix with turn angle `θ = ω·dt` per step.
pub fn constant_turn(omega: f64, dt: f64) -> DMatrix<f64> {
    let th = omega * dt;
    let (s, c) = (th.sin(), th.cos());
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0,
            s / omega,
            0.0,
            -(1.0 - c) / omega,
            0.0,
            c,
            0.0,
            -s,
            0.0,
            (1.0 - c) / omega,
            1.0,
            s / omega,
            0.0,
            s,
            0.0,
            c,
        ],
    )
}

/// Position-only observation of `[p_x, v_x, p_y, v_y]`.
pub fn position_observation() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 0., 1., 0.])
}

fn linear_mode(f: DMatrix<f64>, q: f64, obs_noise: NoiseModel) -> ModeDynamics {
    ModeDynamics {
        transition: Transition::Linear { matrix: f },
        observation: Observation::Linear {
            matrix: position_observation(),
        },
        process_noise: NoiseModel::isotropic(q, 4),
        obs_noise,
    }
}

fn point(x0: &[f64]) -> InitialState {
    InitialState::Point {
        state: DVector::from_column_slice(x0),
    }
}

impl ScenarioSpec {
    /// Two-mode CV/CT tracking.
    pub fn linear2() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Linear2(Linear2Params::default()),
            horizon: 50,
            sizes: DatasetSizes::DESK,
            segment_len: None,
        }
    }

    /// Four-mode long-horizon tracking with backward motion and inverse turns.
    pub fn linear4(noise: NoiseFamily) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Linear4(Linear4Params {
                noise,
                ..Linear4Params::default()
            }),
            horizon: 2000,
            sizes: DatasetSizes::DESK,
            segment_len: Some(20),
        }
    }

    /// Constant and position-quadratic acceleration; `mismatch` biases the filter model.
    pub fn quadratic(mismatch: f64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Quadratic(QuadraticParams {
                mismatch,
                ..QuadraticParams::default()
            }),
            horizon: 50,
            sizes: DatasetSizes::DESK,
            segment_len: None,
        }
    }

    /// Four-mode pendulum (free, damped, driven, kicked) with state-noise level `sigma`.
    pub fn pendulum(sigma: f64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Pendulum(PendulumParams {
                sigma,
                ..PendulumParams::default()
            }),
            horizon: 1000,
            sizes: DatasetSizes::DESK,
            segment_len: Some(50),
        }
    }

    /// Three-mode Lorenz system with Taylor orders 2, 4, 5 at observation noise `noise_db`.
    pub fn lorenz(noise_db: f64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Lorenz(LorenzParams {
                noise_db,
                ..LorenzParams::default()
            }),
            horizon: 100,
            sizes: DatasetSizes::DESK,
            segment_len: None,
        }
    }

    /// Default spec by short name.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "linear2" => Self::linear2(),
            "linear4" => Self::linear4(NoiseFamily::Gaussian),
            "linear4_laplacian" => Self::linear4(NoiseFamily::Laplacian),
            "linear4_gmm" => Self::linear4(NoiseFamily::Gmm),
            "quadratic" => Self::quadratic(0.0),
            "pendulum" => Self::pendulum(0.01),
            "lorenz" => Self::lorenz(-10.0),
            other => return Err(Error::Config(format!("unknown scenario '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::Linear2(_) => "linear2",
            ScenarioKind::Linear4(_) => "linear4",
            ScenarioKind::Quadratic(_) => "quadratic",
            ScenarioKind::Pendulum(_) => "pendulum",
            ScenarioKind::Lorenz(_) => "lorenz",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Resolves the spec into its generative system and filter-visible model.
    pub fn build(&self) -> Result<Scenario> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.segment_len == Some(0) {
            return Err(Error::Config("segment length must be at least 1".into()));
        }
        let (modes, process, initial, filter_modes, linear) = match &self.kind {
            ScenarioKind::Linear2(p) => {
                let r = NoiseModel::isotropic(p.r, 2);
                let modes = vec![
                    linear_mode(constant_velocity(p.dt), p.q_cv, r.clone()),
                    linear_mode(constant_turn(p.omega, p.dt), p.q_ct, r),
                ];
                let process = ModeProcess::markov(p.transition.clone(), p.initial_modes.clone())?;
                (modes.clone(), process, point(&p.x0), modes, true)
            }
            ScenarioKind::Linear4(p) => {
                let r = p.noise.noise(p.r, 2);
                let mats = [
                    constant_velocity(p.dt),
                    constant_turn(p.omega, p.dt),
                    constant_velocity(-p.dt),
                    constant_turn(-p.omega, p.dt),
                ];
                let modes: Vec<ModeDynamics> =
                    mats.into_iter().zip(p.q).map(|(f, q)| linear_mode(f, q, r.clone())).collect();
                let process = ModeProcess::markov(p.transition.clone(), p.initial_modes.clone())?;
                let gaussian = p.noise == NoiseFamily::Gaussian;
                (modes.clone(), process, point(&p.x0), modes, gaussian)
            }
            ScenarioKind::Quadratic(p) => {
                if p.mismatch < 0.0 {
                    return Err(Error::Config("mismatch level must be non-negative".into()));
                }
                let laws = [
                    AccelerationLaw::Constant {
                        ax: p.accel[0],
                        ay: p.accel[1],
                    },
                    AccelerationLaw::Quadratic {
                        c2: p.coefficients[0],
                        c1: p.coefficients[1],
                        c0: p.coefficients[2],
                        max_accel: p.max_accel,
                    },
                ];
                let build = |bias: f64| -> Vec<ModeDynamics> {
                    laws.iter()
                        .zip(p.q)
                        .map(|(law, q)| ModeDynamics {
                            transition: Transition::Kinematic(KinematicMotion {
                                dt: p.dt,
                                law: law.clone(),
                                velocity_bias: bias,
                                accel_bias: bias,
                            }),
                            observation: Observation::Linear {
                                matrix: position_observation(),
                            },
                            process_noise: NoiseModel::isotropic(q, 4),
                            obs_noise: NoiseModel::isotropic(p.r, 2),
                        })
                        .collect()
                };
                let process = ModeProcess::markov(p.transition.clone(), p.initial_modes.clone())?;
                (build(0.0), process, point(&p.x0), build(p.mismatch), false)
            }
            ScenarioKind::Pendulum(p) => {
                let laws = [
                    PendulumLaw::Free,
                    PendulumLaw::Damped { gamma: p.gamma },
                    PendulumLaw::Driven {
                        amplitude: p.drive_amplitude,
                        omega: p.drive_omega,
                    },
                    PendulumLaw::Kicked,
                ];
                let state_noise = NoiseModel::isotropic(p.sigma, 3);
                let modes: Vec<ModeDynamics> = laws
                    .iter()
                    .map(|law| ModeDynamics {
                        transition: Transition::Pendulum(PendulumMotion {
                            dt: p.dt,
                            g: p.g,
                            length: p.length,
                            law: *law,
                        }),
                        observation: Observation::Linear {
                            matrix: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
                        },
                        process_noise: match law {
                            PendulumLaw::Kicked => NoiseModel::Sum {
                                terms: vec![
                                    state_noise.clone(),
                                    NoiseModel::Impulse {
                                        probability: p.kick_probability,
                                        sigma: p.kick_sigma,
                                        direction: vec![0.0, 0.0, 1.0],
                                    },
                                ],
                            },
                            _ => state_noise.clone(),
                        },
                        obs_noise: NoiseModel::isotropic(p.r, 1),
                    })
                    .collect();
                let process = ModeProcess::symmetric(4, p.stay);
                (modes.clone(), process, point(&p.x0), modes, false)
            }
            ScenarioKind::Lorenz(p) => {
                let variance = 10f64.powf(p.noise_db / 10.0);
                let last = p.orders.len().saturating_sub(1);
                let modes: Vec<ModeDynamics> = p
                    .orders
                    .iter()
                    .enumerate()
                    .map(|(j, &order)| ModeDynamics {
                        transition: Transition::LorenzTaylor { order, dtau: p.dtau },
                        observation: if j == last {
                            Observation::Spherical {
                                min_radius: p.min_radius,
                            }
                        } else {
                            Observation::Linear {
                                matrix: DMatrix::identity(3, 3),
                            }
                        },
                        process_noise: NoiseModel::isotropic(p.q, 3),
                        obs_noise: NoiseModel::isotropic(variance, 3),
                    })
                    .collect();
                let process = ModeProcess::markov(p.transition.clone(), p.initial_modes.clone())?;
                (modes.clone(), process, point(&p.x0), modes, false)
            }
        };
        let system = ModeSystem::new(modes, process, initial)?;
        Ok(Scenario {
            spec: self.clone(),
            system,
            filter_modes,
            linear,
        })
    }
}

impl Scenario {
    /// Draws `n` labeled trajectories of the scenario's horizon.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Trajectory>> {
        (0..n).map(|_| self.system.simulate(self.spec.horizon, rng)).collect()
    }

    /// Noiseless per-mode maps the learned filters are given.
    pub fn knowledge(&self) -> Vec<ModeKnowledge> {
        self.filter_modes.iter().map(ModeKnowledge::from_dynamics).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.system.obs_dim()
    }
}

/// Reads a trajectory dataset from CSV. Mode labels are left empty.
pub fn ingest_csv(path: &Path, columns: &ColumnMap) -> Result<Vec<Trajectory>> {
    let file = File::open(path)?;
    if file.metadata()?.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    read_csv(file, columns)
}

#[cfg(test)]
mod tests;
