//! The two recurrent networks of the filter and the model-free regressor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{Activation, Dense, Gru, GruCache, GruScratch, LayoutBuilder};

/// Fixed affine input normalization `(v − shift) / scale`, fitted once on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScale {
    pub fn identity(n: usize) -> Self {
        FeatureScale {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        let n = self.len();
        for (r, o) in raw.chunks(n).zip(out.chunks_mut(n)) {
            for k in 0..n {
                o[k] = (r[k] - self.shift[k]) / self.scale[k];
            }
        }
    }

    /// Maps a gradient w.r.t. normalized values back to raw values.
    pub fn backprop(&self, g_norm: &[f64], g_raw: &mut [f64]) {
        let n = self.len();
        for (g, o) in g_norm.chunks(n).zip(g_raw.chunks_mut(n)) {
            for k in 0..n {
                o[k] = g[k] / self.scale[k];
            }
        }
    }

    /// Clamps tiny scales so constant features do not blow up.
    pub fn from_moments(shift: Vec<f64>, scale: Vec<f64>) -> Self {
        let scale = scale.into_iter().map(|s| if s.is_finite() && s > 1e-8 { s } else { 1.0 }).collect();
        FeatureScale { shift, scale }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeNetConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for ModeNetConfig {
    fn default() -> Self {
        ModeNetConfig {
            feature_dim: 32,
            hidden: 64,
            layers: 2,
        }
    }
}

/// Recurrent state of a stack of GRU layers, one `rows×hidden` buffer per layer.
pub type StackHidden = Vec<Vec<f64>>;

/// Forward values of one step of a dense → stacked GRU → dense network.
#[derive(Debug, Clone, Default)]
pub struct StackTape {
    pub input: Vec<f64>,
    pub features: Vec<f64>,
    pub caches: Vec<GruCache>,
    pub outputs: Vec<Vec<f64>>,
    pub head: Vec<f64>,
}

/// Dense feature layer, stacked GRUs and a dense head. Shared by the mode
/// predictor (softmax head) and the model-free regressor (linear head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentStack {
    pub input: Dense,
    pub layers: Vec<Gru>,
    pub head: Dense,
    pub scale: FeatureScale,
    pub params: Vec<f64>,
}

impl RecurrentStack {
    fn build(input_dim: usize, feature_dim: usize, hidden: usize, layers: usize, out: usize, head: Activation) -> Self {
        let mut layout = LayoutBuilder::new();
        let input = Dense::new(&mut layout, input_dim, feature_dim, Activation::Relu);
        let grus = (0..layers)
            .map(|l| Gru::new(&mut layout, if l == 0 { feature_dim } else { hidden }, hidden))
            .collect();
        let head = Dense::new(&mut layout, hidden, out, head);
        RecurrentStack {
            input,
            layers: grus,
            head,
            scale: FeatureScale::identity(input_dim),
            params: vec![0.0; layout.len()],
        }
    }

    fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut params = std::mem::take(&mut self.params);
        self.input.init(&mut params, rng);
        for g in &self.layers {
            g.init(&mut params, rng);
        }
        self.head.init(&mut params, rng);
        self.params = params;
    }

    pub fn input_dim(&self) -> usize {
        self.input.input
    }

    pub fn output_dim(&self) -> usize {
        self.head.output
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn zero_hidden(&self, rows: usize) -> StackHidden {
        self.layers.iter().map(|g| vec![0.0; rows * g.hidden]).collect()
    }

    /// One step for `rows` samples; `raw` is `rows × input_dim`. Advances `hidden`
    /// and writes the head output into `tape.head`.
    pub fn forward(&self, rows: usize, raw: &[f64], hidden: &mut StackHidden, tape: &mut StackTape) {
        let p = &self.params;
        tape.input.resize(rows * self.input_dim(), 0.0);
        self.scale.apply(raw, &mut tape.input);
        tape.features.resize(rows * self.input.output, 0.0);
        self.input.forward(p, rows, &tape.input, &mut tape.features);
        tape.caches.resize_with(self.layers.len(), GruCache::default);
        tape.outputs.resize_with(self.layers.len(), Vec::new);
        for (l, g) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; rows * g.hidden];
            let x = if l == 0 { &tape.features } else { &tape.outputs[l - 1] };
            g.forward(p, rows, &hidden[l], x, &mut next, &mut tape.caches[l]);
            hidden[l].copy_from_slice(&next);
            tape.outputs[l] = next;
        }
        tape.head.resize(rows * self.head.output, 0.0);
        self.head.forward(p, rows, tape.outputs.last().unwrap(), &mut tape.head);
    }

    /// Backward through one step. `g_head` is overwritten; `g_hidden` holds the
    /// gradient w.r.t. the hidden state this step produced and is replaced by the
    /// gradient w.r.t. the state it consumed.
    pub fn backward(
        &self,
        rows: usize,
        tape: &StackTape,
        g_head: &mut [f64],
        g_hidden: &mut StackHidden,
        grads: &mut [f64],
        scratch: &mut GruScratch,
    ) {
        let p = &self.params;
        let top = self.layers.len() - 1;
        self.head.backward(p, rows, &tape.outputs[top], &tape.head, g_head, Some(grads), Some(&mut g_hidden[top]));
        let mut g_below = vec![0.0; rows * self.input.output.max(self.hidden())];
        for l in (0..self.layers.len()).rev() {
            let g = &self.layers[l];
            let mut gh_prev = vec![0.0; rows * g.hidden];
            let gx_len = rows * g.input;
            g_below[..gx_len].fill(0.0);
            g.backward(
                p,
                rows,
                &tape.caches[l],
                &g_hidden[l],
                &mut gh_prev,
                Some(grads),
                Some(&mut g_below[..gx_len]),
                scratch,
            );
            g_hidden[l] = gh_prev;
            if l > 0 {
                for (a, b) in g_hidden[l - 1].iter_mut().zip(&g_below[..gx_len]) {
                    *a += b;
                }
            }
        }
        let n = rows * self.input.output;
        self.input.backward(p, rows, &tape.input, &tape.features, &mut g_below[..n], Some(grads), None);
    }
}

/// Mode-probability network: observation features → dense → stacked GRU → softmax.
/// Its input per step is `[y_t, y_t − y_{t−1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePredictorNet {
    pub num_modes: usize,
    pub obs_dim: usize,
    pub stack: RecurrentStack,
}

impl ModePredictorNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, num_modes: usize, cfg: &ModeNetConfig, rng: &mut R) -> Self {
        let mut net = Self::zeros(obs_dim, num_modes, cfg);
        net.stack.init(rng);
        net
    }

    /// All parameters zero: the output is uniform for any input.
    pub fn zeros(obs_dim: usize, num_modes: usize, cfg: &ModeNetConfig) -> Self {
        ModePredictorNet {
            num_modes,
            obs_dim,
            stack: RecurrentStack::build(2 * obs_dim, cfg.feature_dim, cfg.hidden, cfg.layers, num_modes, Activation::Softmax),
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.obs_dim
    }

    pub fn num_params(&self) -> usize {
        self.stack.params.len()
    }
}

/// Gain network: `n_I` → dense(4·n_I) → GRU(6·n_I) → dense(s·o).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainNet {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub num_modes: usize,
    pub input: Dense,
    pub gru: Gru,
    pub output: Dense,
    pub scale: FeatureScale,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GainTape {
    pub input: Vec<f64>,
    pub features: Vec<f64>,
    pub cache: GruCache,
    pub hidden: Vec<f64>,
    pub gain: Vec<f64>,
}

impl GainNet {
    pub fn zeros(state_dim: usize, obs_dim: usize, num_modes: usize) -> Self {
        let n_in = 2 * obs_dim + state_dim + num_modes;
        let mut layout = LayoutBuilder::new();
        let input = Dense::new(&mut layout, n_in, 4 * n_in, Activation::Relu);
        let gru = Gru::new(&mut layout, 4 * n_in, 6 * n_in);
        let output = Dense::new(&mut layout, 6 * n_in, state_dim * obs_dim, Activation::Identity);
        GainNet {
            state_dim,
            obs_dim,
            num_modes,
            input,
            gru,
            output,
            scale: FeatureScale::identity(n_in),
            params: vec![0.0; layout.len()],
        }
    }

    /// Random hidden layers with a zero output layer, so training starts from `K = 0`
    /// (open-loop prediction) rather than from a random and possibly unstable gain.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, obs_dim: usize, num_modes: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(state_dim, obs_dim, num_modes);
        let mut params = std::mem::take(&mut net.params);
        net.input.init(&mut params, rng);
        net.gru.init(&mut params, rng);
        net.params = params;
        net
    }

    /// `n_I = 2o + s + M`.
    pub fn input_dim(&self) -> usize {
        self.input.input
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// One step for `rows` branch inputs. Advances `hidden` and writes the gains
    /// (row-major `s×o` per row) into `tape.gain`.
    pub fn forward(&self, rows: usize, raw: &[f64], hidden: &mut [f64], tape: &mut GainTape) {
        let p = &self.params;
        tape.input.resize(rows * self.input_dim(), 0.0);
        self.scale.apply(raw, &mut tape.input);
        tape.features.resize(rows * self.input.output, 0.0);
        self.input.forward(p, rows, &tape.input, &mut tape.features);
        tape.hidden.resize(rows * self.hidden(), 0.0);
        self.gru.forward(p, rows, hidden, &tape.features, &mut tape.hidden, &mut tape.cache);
        hidden.copy_from_slice(&tape.hidden);
        tape.gain.resize(rows * self.output.output, 0.0);
        self.output.forward(p, rows, &tape.hidden, &mut tape.gain);
    }

    /// Backward through one step. `g_gain` is overwritten; `g_hidden` is the gradient
    /// w.r.t. the produced hidden state on entry and w.r.t. the consumed one on exit.
    /// The raw-input gradient is written to `g_input`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        rows: usize,
        tape: &GainTape,
        g_gain: &mut [f64],
        g_hidden: &mut [f64],
        mut grads: Option<&mut [f64]>,
        g_input: &mut [f64],
        scratch: &mut GruScratch,
    ) {
        let p = &self.params;
        self.output
            .backward(p, rows, &tape.hidden, &tape.gain, g_gain, grads.as_deref_mut(), Some(g_hidden));
        let mut gh_prev = vec![0.0; rows * self.hidden()];
        let mut g_feat = vec![0.0; rows * self.input.output];
        self.gru.backward(
            p,
            rows,
            &tape.cache,
            g_hidden,
            &mut gh_prev,
            grads.as_deref_mut(),
            Some(&mut g_feat),
            scratch,
        );
        g_hidden.copy_from_slice(&gh_prev);
        let mut g_norm = vec![0.0; rows * self.input_dim()];
        self.input
            .backward(p, rows, &tape.input, &tape.features, &mut g_feat, grads, Some(&mut g_norm));
        self.scale.backprop(&g_norm, g_input);
    }
}

/// Model-free baseline: `[y_t, y_t − y_{t−1}]` → dense → stacked GRU → linear state
/// estimate, de-normalized with a fixed state scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFreeNet {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub stack: RecurrentStack,
    pub output_scale: FeatureScale,
}

impl ModelFreeNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, state_dim: usize, cfg: &ModeNetConfig, rng: &mut R) -> Self {
        let mut stack = RecurrentStack::build(2 * obs_dim, cfg.feature_dim, cfg.hidden, cfg.layers, state_dim, Activation::Identity);
        stack.init(rng);
        ModelFreeNet {
            state_dim,
            obs_dim,
            stack,
            output_scale: FeatureScale::identity(state_dim),
        }
    }

    pub fn num_params(&self) -> usize {
        self.stack.params.len()
    }
}
