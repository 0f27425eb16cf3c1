//! Dense and GRU layers over a flat parameter vector, batched row-major.
//!
//! A layer only stores its shape and an offset into the owning network's
//! parameter vector, so a network's parameters and gradients are each one
//! contiguous `Vec<f64>`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::{matmul_gtx, matmul_gw, matmul_xwt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softmax,
}

/// Hands out consecutive parameter ranges while a network is being built.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn take(&mut self, n: usize) -> usize {
        let start = self.len;
        self.len += n;
        start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax over each row of a `rows×n` buffer, with max subtraction.
pub fn softmax_rows(buf: &mut [f64], n: usize) {
    for row in buf.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Fills `[start, start + fan_out·fan_in)` with `U(−1/√fan_in, 1/√fan_in)`.
fn init_uniform<R: Rng + ?Sized>(params: &mut [f64], start: usize, fan_out: usize, fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for p in &mut params[start..start + fan_out * fan_in] {
        *p = rng.random_range(-bound..bound);
    }
}

/// `y = act(W x + b)` with `W` of shape `output×input`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub offset: usize,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(layout: &mut LayoutBuilder, input: usize, output: usize, activation: Activation) -> Self {
        let offset = layout.take(output * input + output);
        Dense {
            offset,
            input,
            output,
            activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.output * self.input + self.output
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.output * self.input
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.output * self.input;
        start..start + self.output
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        init_uniform(params, self.offset, self.output, self.input, rng);
        params[self.bias_range()].fill(0.0);
    }

    /// Forward pass for `rows` stacked inputs; writes the activated output.
    pub fn forward(&self, params: &[f64], rows: usize, x: &[f64], y: &mut [f64]) {
        let (i, o) = (self.input, self.output);
        let w = &params[self.weight_range()];
        let b = &params[self.bias_range()];
        for row in y[..rows * o].chunks_mut(o) {
            row.copy_from_slice(b);
        }
        matmul_xwt(rows, i, o, &x[..rows * i], w, &mut y[..rows * o], true);
        match self.activation {
            Activation::Identity => {}
            Activation::Relu => y[..rows * o].iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => y[..rows * o].iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => softmax_rows(&mut y[..rows * o], o),
        }
    }

    /// Converts the gradient w.r.t. the activated output `gy` into the gradient w.r.t.
    /// the pre-activation, in place.
    fn pre_activation_grad(&self, y: &[f64], gy: &mut [f64]) {
        match self.activation {
            Activation::Identity => {}
            Activation::Relu => gy.iter_mut().zip(y).for_each(|(g, v)| {
                if *v <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => gy.iter_mut().zip(y).for_each(|(g, v)| *g *= 1.0 - v * v),
            Activation::Softmax => {
                let o = self.output;
                for (grow, yrow) in gy.chunks_mut(o).zip(y.chunks(o)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, p)| g * p).sum();
                    grow.iter_mut().zip(yrow).for_each(|(g, p)| *g = p * (*g - dot));
                }
            }
        }
    }

    /// Backward pass. `gy` holds the output gradient and is overwritten. Parameter
    /// gradients are added to `grads` when given; the input gradient is added to `gx`
    /// when given.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        rows: usize,
        x: &[f64],
        y: &[f64],
        gy: &mut [f64],
        grads: Option<&mut [f64]>,
        gx: Option<&mut [f64]>,
    ) {
        let (i, o) = (self.input, self.output);
        let gy = &mut gy[..rows * o];
        self.pre_activation_grad(&y[..rows * o], gy);
        if let Some(grads) = grads {
            matmul_gtx(rows, o, i, gy, &x[..rows * i], &mut grads[self.weight_range()]);
            let gb = &mut grads[self.bias_range()];
            for row in gy.chunks(o) {
                gb.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
        }
        if let Some(gx) = gx {
            matmul_gw(rows, o, i, gy, &params[self.weight_range()], &mut gx[..rows * i]);
        }
    }
}

/// Gated recurrent unit:
/// `z = σ(W_z[h,x] + b_z)`, `r = σ(W_r[h,x] + b_r)`,
/// `c = tanh(W_c[r⊙h, x] + b_c)`, `h' = (1 − z)⊙h + z⊙c`.
///
/// Parameters are laid out as the stacked gate weights `[W_z; W_r]`
/// (`2·hidden × (hidden + input)`), their biases, then `W_c` and `b_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gru {
    pub offset: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Values saved by [`Gru::forward`] for the backward pass, for `rows` stacked samples.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    /// `[h, x]` per row.
    pub hx: Vec<f64>,
    /// `[r⊙h, x]` per row.
    pub rhx: Vec<f64>,
    /// `[z, r]` per row.
    pub zr: Vec<f64>,
    pub cand: Vec<f64>,
}

impl Gru {
    pub fn new(layout: &mut LayoutBuilder, input: usize, hidden: usize) -> Self {
        let offset = layout.take(3 * hidden * (hidden + input) + 3 * hidden);
        Gru { offset, input, hidden }
    }

    pub fn num_params(&self) -> usize {
        3 * self.hidden * (self.hidden + self.input) + 3 * self.hidden
    }

    fn cols(&self) -> usize {
        self.hidden + self.input
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 4] {
        let (h, c) = (self.hidden, self.cols());
        let w_zr = self.offset..self.offset + 2 * h * c;
        let b_zr = w_zr.end..w_zr.end + 2 * h;
        let w_c = b_zr.end..b_zr.end + h * c;
        let b_c = w_c.end..w_c.end + h;
        [w_zr, b_zr, w_c, b_c]
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let [w_zr, b_zr, w_c, b_c] = self.ranges();
        init_uniform(params, w_zr.start, 2 * self.hidden, self.cols(), rng);
        params[b_zr].fill(0.0);
        init_uniform(params, w_c.start, self.hidden, self.cols(), rng);
        params[b_c].fill(0.0);
    }

    /// Advances `rows` hidden states by one step, writing `h_next` and filling `cache`.
    pub fn forward(&self, params: &[f64], rows: usize, h: &[f64], x: &[f64], h_next: &mut [f64], cache: &mut GruCache) {
        let (hd, inp, c) = (self.hidden, self.input, self.cols());
        let [w_zr, b_zr, w_c, b_c] = self.ranges();
        cache.hx.resize(rows * c, 0.0);
        cache.rhx.resize(rows * c, 0.0);
        cache.zr.resize(rows * 2 * hd, 0.0);
        cache.cand.resize(rows * hd, 0.0);
        for r in 0..rows {
            cache.hx[r * c..r * c + hd].copy_from_slice(&h[r * hd..(r + 1) * hd]);
            cache.hx[r * c + hd..(r + 1) * c].copy_from_slice(&x[r * inp..(r + 1) * inp]);
            cache.zr[r * 2 * hd..(r + 1) * 2 * hd].copy_from_slice(&params[b_zr.clone()]);
            cache.cand[r * hd..(r + 1) * hd].copy_from_slice(&params[b_c.clone()]);
        }
        matmul_xwt(rows, c, 2 * hd, &cache.hx, &params[w_zr], &mut cache.zr, true);
        cache.zr.iter_mut().for_each(|v| *v = sigmoid(*v));
        for r in 0..rows {
            let gates = &cache.zr[r * 2 * hd..(r + 1) * 2 * hd];
            for k in 0..hd {
                cache.rhx[r * c + k] = gates[hd + k] * h[r * hd + k];
            }
            cache.rhx[r * c + hd..(r + 1) * c].copy_from_slice(&x[r * inp..(r + 1) * inp]);
        }
        matmul_xwt(rows, c, hd, &cache.rhx, &params[w_c], &mut cache.cand, true);
        cache.cand.iter_mut().for_each(|v| *v = v.tanh());
        for r in 0..rows {
            for k in 0..hd {
                let z = cache.zr[r * 2 * hd + k];
                let hp = h[r * hd + k];
                h_next[r * hd + k] = hp + z * (cache.cand[r * hd + k] - hp);
            }
        }
    }

    /// Backward pass for one step. `gh_next` is the gradient w.r.t. the new hidden
    /// state. Writes the gradient w.r.t. the previous hidden state into `gh_prev`,
    /// adds the input gradient to `gx` and the parameter gradients to `grads` when given.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        rows: usize,
        cache: &GruCache,
        gh_next: &[f64],
        gh_prev: &mut [f64],
        grads: Option<&mut [f64]>,
        gx: Option<&mut [f64]>,
        scratch: &mut GruScratch,
    ) {
        let (hd, inp, c) = (self.hidden, self.input, self.cols());
        let [w_zr, b_zr, w_c, b_c] = self.ranges();
        scratch.da_c.resize(rows * hd, 0.0);
        scratch.da_zr.resize(rows * 2 * hd, 0.0);
        scratch.d_cols.clear();
        scratch.d_cols.resize(rows * c, 0.0);

        for r in 0..rows {
            for k in 0..hd {
                let g = gh_next[r * hd + k];
                let z = cache.zr[r * 2 * hd + k];
                let cand = cache.cand[r * hd + k];
                let hp = cache.hx[r * c + k];
                gh_prev[r * hd + k] = g * (1.0 - z);
                scratch.da_c[r * hd + k] = g * z * (1.0 - cand * cand);
                scratch.da_zr[r * 2 * hd + k] = g * (cand - hp) * z * (1.0 - z);
            }
        }
        // Through the candidate: gradient w.r.t. [r⊙h, x].
        matmul_gw(rows, hd, c, &scratch.da_c, &params[w_c.clone()], &mut scratch.d_cols);
        for r in 0..rows {
            for k in 0..hd {
                let d_rh = scratch.d_cols[r * c + k];
                let rg = cache.zr[r * 2 * hd + hd + k];
                let hp = cache.hx[r * c + k];
                gh_prev[r * hd + k] += d_rh * rg;
                scratch.da_zr[r * 2 * hd + hd + k] = d_rh * hp * rg * (1.0 - rg);
            }
        }
        if let Some(grads) = grads {
            matmul_gtx(rows, hd, c, &scratch.da_c, &cache.rhx, &mut grads[w_c]);
            matmul_gtx(rows, 2 * hd, c, &scratch.da_zr, &cache.hx, &mut grads[w_zr.clone()]);
            let gbc = &mut grads[b_c];
            for row in scratch.da_c.chunks(hd) {
                gbc.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
            let gbzr = &mut grads[b_zr];
            for row in scratch.da_zr.chunks(2 * hd) {
                gbzr.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
        }
        // Through the gates: gradient w.r.t. [h, x]. The input columns keep the
        // candidate-path contribution and accumulate this one.
        for r in 0..rows {
            scratch.d_cols[r * c..r * c + hd].fill(0.0);
        }
        matmul_gw(rows, 2 * hd, c, &scratch.da_zr, &params[w_zr], &mut scratch.d_cols);
        for r in 0..rows {
            for k in 0..hd {
                gh_prev[r * hd + k] += scratch.d_cols[r * c + k];
            }
        }
        if let Some(gx) = gx {
            for r in 0..rows {
                for k in 0..inp {
                    gx[r * inp + k] += scratch.d_cols[r * c + hd + k];
                }
            }
        }
    }
}

/// Reusable buffers for [`Gru::backward`].
#[derive(Debug, Clone, Default)]
pub struct GruScratch {
    da_c: Vec<f64>,
    da_zr: Vec<f64>,
    d_cols: Vec<f64>,
}
