//! The learned switching filter: per-mode model predictions corrected by a shared
//! learned gain, fused with learned mode probabilities.
//!
//! Everything here works on a batch of `B` samples in lock-step. Per-sample values
//! are row-major `B × dim`; per-branch values are `(M·B) × dim` with row `j·B + b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nets::{GainNet, GainTape, ModePredictorNet, StackHidden, StackTape};
use crate::neural::GruScratch;
use crate::ssm::{ModeDynamics, Observation, StateModel, Transition};

/// What the filter knows about one mode: its noiseless transition and observation maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeKnowledge {
    pub transition: Transition,
    pub observation: Observation,
}

impl ModeKnowledge {
    pub fn from_dynamics(d: &ModeDynamics) -> Self {
        ModeKnowledge {
            transition: d.transition.clone(),
            observation: d.observation.clone(),
        }
    }
}

impl StateModel for ModeKnowledge {
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

/// The recursive state of one filtered trajectory. There is no covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// `x̂_{t|t}`.
    pub fused: Vec<f64>,
    /// Previous per-branch posterior `x̂^j_{t|t}`, `M × s`.
    pub branch_post: Vec<f64>,
    /// Previous per-branch prior `x̂^j_{t|t−1}`, `M × s`.
    pub branch_prior: Vec<f64>,
    /// Last observation, absent before the first step.
    pub prev_obs: Option<Vec<f64>>,
    /// Mode-network hidden state per GRU layer.
    pub mode_hidden: Vec<Vec<f64>>,
    /// Gain-network hidden state per branch, `M × hidden`.
    pub gain_hidden: Vec<f64>,
    /// Index of the last produced estimate (0 before the first step).
    pub time: usize,
}

/// The filter: per-mode knowledge, an optional mode network and the shared gain network.
/// Without a mode network the mode probabilities are uniform, which for a single mode
/// is the switch-agnostic filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JmfNet {
    pub modes: Vec<ModeKnowledge>,
    pub mode_net: Option<ModePredictorNet>,
    pub gain_net: GainNet,
}

/// Batched recursive state.
#[derive(Debug, Clone)]
pub struct BatchState {
    pub rows: usize,
    pub fused: Vec<f64>,
    pub post: Vec<f64>,
    pub prior: Vec<f64>,
    pub prev_obs: Vec<f64>,
    pub has_prev_obs: Vec<bool>,
    pub mode_hidden: StackHidden,
    pub gain_hidden: Vec<f64>,
    pub time: Vec<usize>,
}

/// Everything one batched step records for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct StepTape {
    pub mode: Option<StackTape>,
    /// `B × M`.
    pub probs: Vec<f64>,
    pub innovation: Vec<f64>,
    /// Transition Jacobians, `(M·B) × s × s`.
    pub f_jac: Vec<f64>,
    /// Observation Jacobians, `(M·B) × o × s`.
    pub h_jac: Vec<f64>,
    pub gain: GainTape,
    pub post: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Which network's parameter gradients a backward pass accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    ModeNet,
    GainNet,
    Both,
}

impl GradTarget {
    fn mode(self) -> bool {
        matches!(self, GradTarget::ModeNet | GradTarget::Both)
    }
    fn gain(self) -> bool {
        matches!(self, GradTarget::GainNet | GradTarget::Both)
    }
}

/// Gradients for both networks (empty when a network is absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub mode: Vec<f64>,
    pub gain: Vec<f64>,
}

/// Gradients at the fusion interface for one step, exposed for checking the
/// closed forms against the full backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceGradients {
    /// `∂L/∂μ`, `B × M`.
    pub probs: Vec<f64>,
    /// `∂L/∂K^j`, `(M·B) × s × o`.
    pub gains: Vec<f64>,
}

impl JmfNet {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.gain_net.state_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.gain_net.obs_dim
    }

    /// Fresh state with `x̂_{0|0} = x0` and zero recurrent memory.
    pub fn initial_state(&self, x0: &[f64]) -> FilterState {
        let m = self.num_modes();
        FilterState {
            fused: x0.to_vec(),
            branch_post: x0.repeat(m),
            branch_prior: x0.repeat(m),
            prev_obs: None,
            mode_hidden: match &self.mode_net {
                Some(net) => net.stack.layers.iter().map(|g| vec![0.0; g.hidden]).collect(),
                None => Vec::new(),
            },
            gain_hidden: vec![0.0; m * self.gain_net.hidden()],
            time: 0,
        }
    }

    pub fn batch_state(&self, states: &[FilterState]) -> BatchState {
        let (b, m, s, o) = (states.len(), self.num_modes(), self.state_dim(), self.obs_dim());
        let hk = self.gain_net.hidden();
        let mut bs = BatchState {
            rows: b,
            fused: Vec::with_capacity(b * s),
            post: vec![0.0; m * b * s],
            prior: vec![0.0; m * b * s],
            prev_obs: vec![0.0; b * o],
            has_prev_obs: Vec::with_capacity(b),
            mode_hidden: match &self.mode_net {
                Some(net) => net.stack.zero_hidden(b),
                None => Vec::new(),
            },
            gain_hidden: vec![0.0; m * b * hk],
            time: Vec::with_capacity(b),
        };
        for (i, st) in states.iter().enumerate() {
            bs.fused.extend_from_slice(&st.fused);
            for j in 0..m {
                let r = j * b + i;
                bs.post[r * s..(r + 1) * s].copy_from_slice(&st.branch_post[j * s..(j + 1) * s]);
                bs.prior[r * s..(r + 1) * s].copy_from_slice(&st.branch_prior[j * s..(j + 1) * s]);
                bs.gain_hidden[r * hk..(r + 1) * hk].copy_from_slice(&st.gain_hidden[j * hk..(j + 1) * hk]);
            }
            if let Some(y) = &st.prev_obs {
                bs.prev_obs[i * o..(i + 1) * o].copy_from_slice(y);
            }
            bs.has_prev_obs.push(st.prev_obs.is_some());
            for (l, h) in st.mode_hidden.iter().enumerate() {
                let n = h.len();
                bs.mode_hidden[l][i * n..(i + 1) * n].copy_from_slice(h);
            }
            bs.time.push(st.time);
        }
        bs
    }

    pub fn unbatch_state(&self, bs: &BatchState) -> Vec<FilterState> {
        let (b, m, s, o) = (bs.rows, self.num_modes(), self.state_dim(), self.obs_dim());
        let hk = self.gain_net.hidden();
        (0..b)
            .map(|i| {
                let mut st = FilterState {
                    fused: bs.fused[i * s..(i + 1) * s].to_vec(),
                    branch_post: Vec::with_capacity(m * s),
                    branch_prior: Vec::with_capacity(m * s),
                    prev_obs: bs.has_prev_obs[i].then(|| bs.prev_obs[i * o..(i + 1) * o].to_vec()),
                    mode_hidden: bs
                        .mode_hidden
                        .iter()
                        .map(|h| {
                            let n = h.len() / b;
                            h[i * n..(i + 1) * n].to_vec()
                        })
                        .collect(),
                    gain_hidden: Vec::with_capacity(m * hk),
                    time: bs.time[i],
                };
                for j in 0..m {
                    let r = j * b + i;
                    st.branch_post.extend_from_slice(&bs.post[r * s..(r + 1) * s]);
                    st.branch_prior.extend_from_slice(&bs.prior[r * s..(r + 1) * s]);
                    st.gain_hidden.extend_from_slice(&bs.gain_hidden[r * hk..(r + 1) * hk]);
                }
                st
            })
            .collect()
    }

    /// Advances every row by one observation (`y` is `B × o`). Fills `tape` when given.
    /// Rows whose fused estimate becomes non-finite are reported by index.
    pub fn step(&self, st: &mut BatchState, y: &[f64], mut tape: Option<&mut StepTape>) -> Vec<usize> {
        let (b, m, s, o) = (st.rows, self.num_modes(), self.state_dim(), self.obs_dim());
        let n_in = self.gain_net.input_dim();

        for i in 0..b {
            if !st.has_prev_obs[i] {
                st.prev_obs[i * o..(i + 1) * o].copy_from_slice(&y[i * o..(i + 1) * o]);
                st.has_prev_obs[i] = true;
            }
            st.time[i] += 1;
        }

        // Mode probabilities.
        let mut probs = vec![0.0; b * m];
        match &self.mode_net {
            Some(net) => {
                let mut raw = vec![0.0; b * 2 * o];
                for i in 0..b {
                    for k in 0..o {
                        raw[i * 2 * o + k] = y[i * o + k];
                        raw[i * 2 * o + o + k] = y[i * o + k] - st.prev_obs[i * o + k];
                    }
                }
                let mut mt = StackTape::default();
                net.stack.forward(b, &raw, &mut st.mode_hidden, &mut mt);
                probs.copy_from_slice(&mt.head);
                if let Some(t) = tape.as_deref_mut() {
                    t.mode = Some(mt);
                }
            }
            None => probs.fill(1.0 / m as f64),
        }

        // Branch predictions from the shared fused estimate.
        let rows = m * b;
        let mut prior = vec![0.0; rows * s];
        let mut innovation = vec![0.0; rows * o];
        let mut f_jac = vec![0.0; rows * s * s];
        let mut h_jac = vec![0.0; rows * o * s];
        let mut gain_in = vec![0.0; rows * n_in];
        for j in 0..m {
            let know = &self.modes[j];
            for i in 0..b {
                let r = j * b + i;
                let x = DVector::from_column_slice(&st.fused[i * s..(i + 1) * s]);
                let t = st.time[i];
                let p = know.transition(&x, t);
                let fj = know.transition_jacobian(&x, t);
                let yhat = know.observe(&p);
                let hj = know.observation_jacobian(&p);
                for a in 0..s {
                    prior[r * s + a] = p[a];
                    for c in 0..s {
                        f_jac[r * s * s + a * s + c] = fj[(a, c)];
                    }
                }
                for a in 0..o {
                    innovation[r * o + a] = y[i * o + a] - yhat[a];
                    for c in 0..s {
                        h_jac[r * o * s + a * s + c] = hj[(a, c)];
                    }
                }
                let inp = &mut gain_in[r * n_in..(r + 1) * n_in];
                for a in 0..o {
                    inp[a] = y[i * o + a] - st.prev_obs[i * o + a];
                    inp[o + a] = innovation[r * o + a];
                }
                for a in 0..s {
                    inp[2 * o + a] = st.post[r * s + a] - st.prior[r * s + a];
                }
                inp[2 * o + s + j] = 1.0;
            }
        }

        // Learned gains and branch posteriors.
        let mut gt = GainTape::default();
        self.gain_net.forward(rows, &gain_in, &mut st.gain_hidden, &mut gt);
        let mut post = prior.clone();
        for r in 0..rows {
            let k = &gt.gain[r * s * o..(r + 1) * s * o];
            for a in 0..s {
                let mut acc = 0.0;
                for c in 0..o {
                    acc += k[a * o + c] * innovation[r * o + c];
                }
                post[r * s + a] += acc;
            }
        }

        // Fusion.
        let mut diverged = Vec::new();
        for i in 0..b {
            for a in 0..s {
                st.fused[i * s + a] = (0..m).map(|j| probs[i * m + j] * post[(j * b + i) * s + a]).sum();
            }
            if st.fused[i * s..(i + 1) * s].iter().any(|v| !v.is_finite()) {
                diverged.push(i);
            }
        }

        st.prev_obs.copy_from_slice(&y[..b * o]);
        st.prior = prior;
        if let Some(t) = tape {
            t.probs = probs;
            t.innovation = innovation;
            t.f_jac = f_jac;
            t.h_jac = h_jac;
            t.gain = gt;
            t.post = post.clone();
            t.fused = st.fused.clone();
        }
        st.post = post;
        diverged
    }

    /// Reverse pass over a recorded unroll. `g_fused[t]` is `∂L/∂x̂_{t|t}` from the
    /// loss at step `t` (`B × s`). Recurrent state entering the first tape is treated
    /// as constant. Returns parameter gradients and the fusion-interface gradients of
    /// every step.
    pub fn backward(
        &self,
        tapes: &[StepTape],
        g_fused: &[Vec<f64>],
        target: GradTarget,
        want_interface: bool,
    ) -> (Gradients, Vec<InterfaceGradients>) {
        let (m, s, o) = (self.num_modes(), self.state_dim(), self.obs_dim());
        let b = g_fused.first().map_or(0, |g| g.len() / s);
        let rows = m * b;
        let n_in = self.gain_net.input_dim();
        let hk = self.gain_net.hidden();

        let mut grads = Gradients {
            mode: vec![0.0; self.mode_net.as_ref().map_or(0, |n| n.num_params())],
            gain: vec![0.0; self.gain_net.num_params()],
        };
        let mut interface = Vec::new();
        let mut scratch = GruScratch::default();

        let mut carry_fused = vec![0.0; b * s];
        let mut carry_post = vec![0.0; rows * s];
        let mut carry_prior = vec![0.0; rows * s];
        let mut carry_mode: StackHidden = match &self.mode_net {
            Some(net) => net.stack.zero_hidden(b),
            None => Vec::new(),
        };
        let mut carry_gain = vec![0.0; rows * hk];
        let run_mode = target.mode() && self.mode_net.is_some();

        for (t, tape) in tapes.iter().enumerate().rev() {
            let mut gf = g_fused[t].clone();
            gf.iter_mut().zip(&carry_fused).for_each(|(a, c)| *a += c);

            // Fusion.
            let mut g_probs = vec![0.0; b * m];
            let mut g_post = carry_post.clone();
            for j in 0..m {
                for i in 0..b {
                    let r = j * b + i;
                    let mu = tape.probs[i * m + j];
                    let mut dot = 0.0;
                    for a in 0..s {
                        dot += gf[i * s + a] * tape.post[r * s + a];
                        g_post[r * s + a] += mu * gf[i * s + a];
                    }
                    g_probs[i * m + j] = dot;
                }
            }
            if run_mode {
                let net = self.mode_net.as_ref().unwrap();
                let mut gh = g_probs.clone();
                net.stack.backward(
                    b,
                    tape.mode.as_ref().expect("mode tape"),
                    &mut gh,
                    &mut carry_mode,
                    &mut grads.mode,
                    &mut scratch,
                );
            }

            // Branch posterior `post = prior + K·innovation`.
            let mut g_gain = vec![0.0; rows * s * o];
            let mut g_innov = vec![0.0; rows * o];
            let mut g_prior = carry_prior.clone();
            for r in 0..rows {
                let k = &tape.gain.gain[r * s * o..(r + 1) * s * o];
                for a in 0..s {
                    let gp = g_post[r * s + a];
                    g_prior[r * s + a] += gp;
                    for c in 0..o {
                        g_gain[r * s * o + a * o + c] = gp * tape.innovation[r * o + c];
                        g_innov[r * o + c] += k[a * o + c] * gp;
                    }
                }
            }
            if want_interface {
                interface.push(InterfaceGradients {
                    probs: g_probs.clone(),
                    gains: g_gain.clone(),
                });
            }

            // Gain network.
            let mut g_in = vec![0.0; rows * n_in];
            let gain_grads = if target.gain() { Some(grads.gain.as_mut_slice()) } else { None };
            self.gain_net
                .backward(rows, &tape.gain, &mut g_gain, &mut carry_gain, gain_grads, &mut g_in, &mut scratch);
            for r in 0..rows {
                let gi = &g_in[r * n_in..(r + 1) * n_in];
                for c in 0..o {
                    g_innov[r * o + c] += gi[o + c];
                }
                for a in 0..s {
                    carry_post[r * s + a] = gi[2 * o + a];
                    carry_prior[r * s + a] = -gi[2 * o + a];
                }
            }

            // Innovation `y − h(prior)` and prior `f(x̂_{t−1|t−1})`.
            for r in 0..rows {
                let hj = &tape.h_jac[r * o * s..(r + 1) * o * s];
                for c in 0..o {
                    let gi = g_innov[r * o + c];
                    for a in 0..s {
                        g_prior[r * s + a] -= hj[c * s + a] * gi;
                    }
                }
            }
            carry_fused.fill(0.0);
            for j in 0..m {
                for i in 0..b {
                    let r = j * b + i;
                    let fj = &tape.f_jac[r * s * s..(r + 1) * s * s];
                    for a in 0..s {
                        let gp = g_prior[r * s + a];
                        for c in 0..s {
                            carry_fused[i * s + c] += fj[a * s + c] * gp;
                        }
                    }
                }
            }
        }
        interface.reverse();
        (grads, interface)
    }
}
