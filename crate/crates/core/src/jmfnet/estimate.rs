//! Running trained networks over whole trajectories, and error metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::filter::{FilterState, JmfNet, StepTape};
use super::nets::{ModelFreeNet, StackTape};
use crate::ssm::Trajectory;

/// How the filter's initial estimate `x̂_{0|0}` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialEstimate {
    /// The true initial state.
    #[default]
    TrueState,
    Zero,
    /// The true initial state plus `N(0, std²)` per component, seeded per trajectory.
    Perturbed { std: f64, seed: u64 },
}

impl InitialEstimate {
    pub fn for_trajectory(&self, traj: &Trajectory, index: usize) -> Vec<f64> {
        match *self {
            InitialEstimate::TrueState => traj.x0.as_slice().to_vec(),
            InitialEstimate::Zero => vec![0.0; traj.state_dim()],
            InitialEstimate::Perturbed { std, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                traj.x0
                    .iter()
                    .map(|v| v + std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect()
            }
        }
    }
}

/// Filter output for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    /// `x̂_{t|t}` for `t = 1..T`.
    pub states: Vec<Vec<f64>>,
    /// Mode probabilities per step (empty for estimators without modes).
    pub probs: Vec<Vec<f64>>,
    /// Per-branch posteriors per step, `M × s` flattened (empty when not recorded).
    pub branches: Vec<Vec<f64>>,
    /// First step whose estimate was non-finite.
    pub diverged_at: Option<usize>,
}

impl TrajectoryEstimate {
    /// Mean over steps and components of the squared error.
    pub fn mse(&self, traj: &Trajectory) -> f64 {
        mse(&self.states, traj)
    }

    /// Squared-error sum `Σ_t ‖x_t − x̂_t‖²`.
    pub fn loss(&self, traj: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&traj.states)
            .map(|(e, x)| e.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum()
    }

    /// Per-step squared errors `‖x_t − x̂_t‖² / s`.
    pub fn step_errors(&self, traj: &Trajectory) -> Vec<f64> {
        let s = traj.state_dim() as f64;
        self.states
            .iter()
            .zip(&traj.states)
            .map(|(e, x)| e.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s)
            .collect()
    }
}

/// Mean squared error per component over a trajectory.
pub fn mse(estimates: &[Vec<f64>], traj: &Trajectory) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (e, x) in estimates.iter().zip(&traj.states) {
        for (a, b) in e.iter().zip(x.iter()) {
            total += (a - b) * (a - b);
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// `10·log₁₀(v)`.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Rows evaluated together in one lock-step batch.
const EVAL_BATCH: usize = 64;

/// Groups trajectory indices by horizon so each group can run in lock-step.
pub(crate) fn groups_by_length(trajs: &[Trajectory], chunk: usize) -> Vec<Vec<usize>> {
    let mut lens: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
    lens.sort_unstable();
    lens.dedup();
    let mut out = Vec::new();
    for len in lens {
        let idx: Vec<usize> = (0..trajs.len()).filter(|&i| trajs[i].len() == len).collect();
        out.extend(idx.chunks(chunk).map(|c| c.to_vec()));
    }
    out
}

/// Runs the learned filter over every trajectory.
pub fn estimate_jmf(net: &JmfNet, trajs: &[Trajectory], init: InitialEstimate, record_branches: bool) -> Vec<TrajectoryEstimate> {
    let (s, o, m) = (net.state_dim(), net.obs_dim(), net.num_modes());
    let mut out: Vec<Option<TrajectoryEstimate>> = vec![None; trajs.len()];
    for group in groups_by_length(trajs, EVAL_BATCH) {
        let b = group.len();
        let states: Vec<FilterState> = group
            .iter()
            .map(|&i| net.initial_state(&init.for_trajectory(&trajs[i], i)))
            .collect();
        let mut bs = net.batch_state(&states);
        let mut ests: Vec<TrajectoryEstimate> = (0..b)
            .map(|_| TrajectoryEstimate {
                states: Vec::new(),
                probs: Vec::new(),
                branches: Vec::new(),
                diverged_at: None,
            })
            .collect();
        let horizon = trajs[group[0]].len();
        let mut y = vec![0.0; b * o];
        let mut tape = StepTape::default();
        for t in 0..horizon {
            for (r, &i) in group.iter().enumerate() {
                y[r * o..(r + 1) * o].copy_from_slice(trajs[i].observations[t].as_slice());
            }
            let diverged = net.step(&mut bs, &y, Some(&mut tape));
            for r in diverged {
                if ests[r].diverged_at.is_none() {
                    ests[r].diverged_at = Some(t + 1);
                }
            }
            for (r, e) in ests.iter_mut().enumerate() {
                e.states.push(bs.fused[r * s..(r + 1) * s].to_vec());
                e.probs.push(tape.probs[r * m..(r + 1) * m].to_vec());
                if record_branches {
                    let mut br = Vec::with_capacity(m * s);
                    for j in 0..m {
                        let row = j * b + r;
                        br.extend_from_slice(&tape.post[row * s..(row + 1) * s]);
                    }
                    e.branches.push(br);
                }
            }
        }
        for (r, e) in ests.into_iter().enumerate() {
            out[group[r]] = Some(e);
        }
    }
    out.into_iter().map(|e| e.expect("every trajectory is evaluated")).collect()
}

/// Runs the model-free regressor over every trajectory.
pub fn estimate_model_free(net: &ModelFreeNet, trajs: &[Trajectory]) -> Vec<TrajectoryEstimate> {
    let (s, o) = (net.state_dim, net.obs_dim);
    let mut out: Vec<Option<TrajectoryEstimate>> = vec![None; trajs.len()];
    for group in groups_by_length(trajs, EVAL_BATCH) {
        let b = group.len();
        let mut hidden = net.stack.zero_hidden(b);
        let mut prev: Vec<f64> = group
            .iter()
            .flat_map(|&i| trajs[i].observations[0].iter().cloned().collect::<Vec<_>>())
            .collect();
        let mut ests: Vec<TrajectoryEstimate> = (0..b)
            .map(|_| TrajectoryEstimate {
                states: Vec::new(),
                probs: Vec::new(),
                branches: Vec::new(),
                diverged_at: None,
            })
            .collect();
        let mut tape = StackTape::default();
        let mut raw = vec![0.0; b * 2 * o];
        for t in 0..trajs[group[0]].len() {
            for (r, &i) in group.iter().enumerate() {
                let y = &trajs[i].observations[t];
                for k in 0..o {
                    raw[r * 2 * o + k] = y[k];
                    raw[r * 2 * o + o + k] = y[k] - prev[r * o + k];
                    prev[r * o + k] = y[k];
                }
            }
            net.stack.forward(b, &raw, &mut hidden, &mut tape);
            for (r, e) in ests.iter_mut().enumerate() {
                let est: Vec<f64> = (0..s)
                    .map(|a| net.output_scale.shift[a] + net.output_scale.scale[a] * tape.head[r * s + a])
                    .collect();
                if e.diverged_at.is_none() && est.iter().any(|v| !v.is_finite()) {
                    e.diverged_at = Some(t + 1);
                }
                e.states.push(est);
            }
        }
        for (r, e) in ests.into_iter().enumerate() {
            out[group[r]] = Some(e);
        }
    }
    out.into_iter().map(|e| e.expect("every trajectory is evaluated")).collect()
}
