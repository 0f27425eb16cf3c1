use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn gru_scalar(params: &[f64], h: f64, x: f64) -> f64 {
    let mut layout = LayoutBuilder::new();
    let cell = Gru::new(&mut layout, 1, 1);
    let mut out = [0.0];
    cell.forward(params, 1, &[h], &[x], &mut out, &mut GruCache::default());
    out[0]
}

#[test]
fn gru_zero_weights_zero_state() {
    let p = vec![0.0; 9];
    assert_eq!(gru_scalar(&p, 0.0, 3.0), 0.0);
}

#[test]
fn gru_closed_update_gate_keeps_state() {
    // Layout: W_zr (2×2), b_zr (2), W_c (1×2), b_c (1).
    let mut p = vec![0.3; 9];
    p[4] = -50.0;
    let h = 0.42;
    assert!((gru_scalar(&p, h, 1.0) - h).abs() < 1e-9);
}

#[test]
fn gru_unit_weights_hand_value() {
    let mut p = vec![1.0; 9];
    p[4] = 0.0;
    p[5] = 0.0;
    p[8] = 0.0;
    let z = 1.0 / (1.0 + (-1.0f64).exp());
    let want = z * 1.0f64.tanh();
    let got = gru_scalar(&p, 0.0, 1.0);
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.556770).abs() < 1e-5);
}

#[test]
fn dense_squared_norm_gradient() {
    let mut layout = LayoutBuilder::new();
    let d = Dense::new(&mut layout, 2, 2, Activation::Identity);
    let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let x = [1.0, 2.0];
    let mut y = [0.0; 2];
    d.forward(&params, 1, &x, &mut y);
    let mut gy = [2.0 * y[0], 2.0 * y[1]];
    let mut grads = vec![0.0; 6];
    d.backward(&params, 1, &x, &y, &mut gy, Some(&mut grads), None);
    // dL/dW_ik = 2 (Wx)_i x_k with W = I.
    assert_eq!(&grads[..4], &[2.0, 4.0, 4.0, 8.0]);
    let numeric = numeric_gradient(
        |p| {
            let mut y = [0.0; 2];
            d.forward(p, 1, &x, &mut y);
            y[0] * y[0] + y[1] * y[1]
        },
        &params,
        1e-5,
    );
    assert!(max_relative_error(&grads, &numeric, 1e-6) < 1e-4);
}

#[test]
fn constant_loss_has_zero_gradient() {
    let mut layout = LayoutBuilder::new();
    let d = Dense::new(&mut layout, 3, 2, Activation::Tanh);
    let mut params = vec![0.0; layout.len()];
    d.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
    let x = [0.1, 0.2, 0.3];
    let mut y = [0.0; 2];
    d.forward(&params, 1, &x, &mut y);
    let mut gy = [0.0; 2];
    let mut grads = vec![0.0; layout.len()];
    d.backward(&params, 1, &x, &y, &mut gy, Some(&mut grads), None);
    assert!(grads.iter().all(|g| *g == 0.0));
}

/// Loss `Σ c ⊙ y` over a batch of 3 rows, checked against central differences for
/// both parameters and inputs.
fn check_dense(activation: Activation, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = LayoutBuilder::new();
    let d = Dense::new(&mut layout, 4, 3, activation);
    let mut params = vec![0.0; layout.len()];
    d.init(&mut params, &mut rng);
    for p in params.iter_mut() {
        *p += rand::Rng::random_range(&mut rng, -0.3..0.3);
    }
    let rows = 3;
    let x: Vec<f64> = (0..rows * 4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let c: Vec<f64> = (0..rows * 3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let loss = |p: &[f64], x: &[f64]| {
        let mut y = vec![0.0; rows * 3];
        d.forward(p, rows, x, &mut y);
        y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut y = vec![0.0; rows * 3];
    d.forward(&params, rows, &x, &mut y);
    let mut gy = c.clone();
    let mut grads = vec![0.0; layout.len()];
    let mut gx = vec![0.0; rows * 4];
    d.backward(&params, rows, &x, &y, &mut gy, Some(&mut grads), Some(&mut gx));
    let num_p = numeric_gradient(|p| loss(p, &x), &params, 1e-5);
    let num_x = numeric_gradient(|xx| loss(&params, xx), &x, 1e-5);
    assert!(max_relative_error(&grads, &num_p, 1e-6) < 1e-4, "{activation:?} params");
    assert!(max_relative_error(&gx, &num_x, 1e-6) < 1e-4, "{activation:?} inputs");
}

#[test]
fn dense_gradients_match_finite_differences() {
    for (i, act) in [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Softmax]
        .into_iter()
        .enumerate()
    {
        check_dense(act, 10 + i as u64);
    }
}

/// Unrolls a GRU for `steps` steps on a batch and returns `Σ_t Σ c_t ⊙ h_t`.
struct GruProblem {
    cell: Gru,
    rows: usize,
    h0: Vec<f64>,
    xs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
}

impl GruProblem {
    fn new(input: usize, hidden: usize, rows: usize, steps: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = LayoutBuilder::new();
        let cell = Gru::new(&mut layout, input, hidden);
        let mut params = vec![0.0; layout.len()];
        cell.init(&mut params, &mut rng);
        for p in params.iter_mut() {
            *p += rand::Rng::random_range(&mut rng, -0.5..0.5);
        }
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect() };
        let h0 = draw(rows * hidden);
        let xs = (0..steps).map(|_| draw(rows * input)).collect();
        let cs = (0..steps).map(|_| draw(rows * hidden)).collect();
        (GruProblem { cell, rows, h0, xs, cs }, params)
    }

    fn loss(&self, params: &[f64], xs: &[Vec<f64>]) -> f64 {
        let hd = self.cell.hidden;
        let mut h = self.h0.clone();
        let mut next = vec![0.0; self.rows * hd];
        let mut cache = GruCache::default();
        let mut total = 0.0;
        for (x, c) in xs.iter().zip(&self.cs) {
            self.cell.forward(params, self.rows, &h, x, &mut next, &mut cache);
            total += next.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            std::mem::swap(&mut h, &mut next);
        }
        total
    }

    fn gradients(&self, params: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let hd = self.cell.hidden;
        let steps = self.xs.len();
        let mut hs = vec![self.h0.clone()];
        let mut caches = Vec::new();
        for x in &self.xs {
            let mut next = vec![0.0; self.rows * hd];
            let mut cache = GruCache::default();
            self.cell.forward(params, self.rows, hs.last().unwrap(), x, &mut next, &mut cache);
            hs.push(next);
            caches.push(cache);
        }
        let mut grads = vec![0.0; params.len()];
        let mut gxs = vec![vec![0.0; self.rows * self.cell.input]; steps];
        let mut gh = vec![0.0; self.rows * hd];
        let mut scratch = GruScratch::default();
        for t in (0..steps).rev() {
            let g_next: Vec<f64> = gh.iter().zip(&self.cs[t]).map(|(a, b)| a + b).collect();
            self.cell.backward(
                params,
                self.rows,
                &caches[t],
                &g_next,
                &mut gh,
                Some(&mut grads),
                Some(&mut gxs[t]),
                &mut scratch,
            );
        }
        (grads, gxs, gh)
    }
}

#[test]
fn gru_three_step_scalar_gradients() {
    let (prob, params) = GruProblem::new(1, 1, 1, 3, 7);
    let (grads, _, _) = prob.gradients(&params);
    let numeric = numeric_gradient(|p| prob.loss(p, &prob.xs), &params, 1e-5);
    assert!(max_relative_error(&grads, &numeric, 1e-6) < 1e-4);
}

#[test]
fn gru_batched_gradients_including_inputs() {
    let (prob, params) = GruProblem::new(3, 4, 2, 4, 8);
    let (grads, gxs, _) = prob.gradients(&params);
    let numeric = numeric_gradient(|p| prob.loss(p, &prob.xs), &params, 1e-5);
    assert!(max_relative_error(&grads, &numeric, 1e-6) < 1e-4);
    for t in 0..prob.xs.len() {
        let num_x = numeric_gradient(
            |x| {
                let mut xs = prob.xs.clone();
                xs[t] = x.to_vec();
                prob.loss(&params, &xs)
            },
            &prob.xs[t],
            1e-5,
        );
        assert!(max_relative_error(&gxs[t], &num_x, 1e-6) < 1e-4, "step {t}");
    }
}

#[test]
fn gru_gates_stay_in_unit_interval() {
    let (prob, params) = GruProblem::new(2, 3, 2, 1, 9);
    let mut cache = GruCache::default();
    let mut out = vec![0.0; 6];
    prob.cell.forward(&params, 2, &prob.h0, &[50.0, -80.0, 3.0, 1e3], &mut out, &mut cache);
    assert!(cache.zr.iter().all(|g| (0.0..=1.0).contains(g)));
    assert!(out.iter().all(|v| v.is_finite()));
}

proptest::proptest! {
    #[test]
    fn softmax_is_a_simplex(logits in proptest::collection::vec(-700.0f64..700.0, 1..8)) {
        let mut v = logits.clone();
        softmax_rows(&mut v, logits.len());
        let sum: f64 = v.iter().sum();
        proptest::prop_assert!((sum - 1.0).abs() < 1e-9);
        proptest::prop_assert!(v.iter().all(|p| *p >= 0.0));
    }
}
