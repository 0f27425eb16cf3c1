//! Alternating training of the two networks, and training of the baselines.

use std::collections::HashMap;
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::estimate::{estimate_jmf, estimate_model_free, groups_by_length, InitialEstimate};
use super::filter::{FilterState, GradTarget, JmfNet, StepTape};
use super::nets::{FeatureScale, ModelFreeNet, StackHidden, StackTape};
use crate::error::{Error, Result};
use crate::neural::{clip_gradients, segment_for_tbptt, shuffled_batches, AdamState, GruScratch, Segment};
use crate::ssm::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Truncated-BPTT segment length; `None` trains on whole trajectories.
    pub segment_len: Option<usize>,
    pub initial_estimate: InitialEstimate,
    /// Fraction of skipped (non-finite) batches in one pass that aborts training.
    pub max_skip_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 5e-4,
            clip_norm: 2.5,
            segment_len: None,
            initial_estimate: InitialEstimate::TrueState,
            max_skip_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        if self.segment_len == Some(0) {
            return Err(Error::Config("segment length must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of a training curve. `phase` is `init`, `mode`, `gain` or `joint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub phase: String,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    /// Parameters with the lowest validation loss seen.
    pub net: N,
    pub curve: Vec<CurveRow>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub skipped_batches: usize,
}

/// Per-component mean and standard deviation of `[y_t, y_t − y_{t−1}]` over a dataset,
/// with the difference centred at zero.
fn observation_feature_scale(trajs: &[Trajectory]) -> FeatureScale {
    let o = trajs[0].obs_dim();
    let mut sum = vec![0.0; 2 * o];
    let mut sq = vec![0.0; 2 * o];
    let mut n = 0.0;
    for tr in trajs {
        for t in 0..tr.len() {
            let y = &tr.observations[t];
            let prev = if t == 0 { y } else { &tr.observations[t - 1] };
            for k in 0..o {
                sum[k] += y[k];
                sq[k] += y[k] * y[k];
                let d = y[k] - prev[k];
                sq[o + k] += d * d;
            }
            n += 1.0;
        }
    }
    let mut shift = vec![0.0; 2 * o];
    let mut scale = vec![0.0; 2 * o];
    for k in 0..o {
        shift[k] = sum[k] / n;
        scale[k] = (sq[k] / n - shift[k] * shift[k]).max(0.0).sqrt();
        scale[o + k] = (sq[o + k] / n).sqrt();
    }
    FeatureScale::from_moments(shift, scale)
}

/// Fits the fixed input normalizations of the filter's networks to training data.
/// Observation and innovation features share the RMS observation increment; the
/// state-correction feature uses the RMS state increment.
pub fn fit_feature_scales(net: &mut JmfNet, trajs: &[Trajectory]) {
    if trajs.is_empty() {
        return;
    }
    let (s, o, m) = (net.state_dim(), net.obs_dim(), net.num_modes());
    let obs = observation_feature_scale(trajs);
    if let Some(mode_net) = &mut net.mode_net {
        mode_net.stack.scale = obs.clone();
    }
    let mut dx = vec![0.0; s];
    let mut n = 0.0;
    for tr in trajs {
        let mut prev = &tr.x0;
        for x in &tr.states {
            for a in 0..s {
                dx[a] += (x[a] - prev[a]).powi(2);
            }
            prev = x;
            n += 1.0;
        }
    }
    let mut scale = Vec::with_capacity(2 * o + s + m);
    scale.extend_from_slice(&obs.scale[o..]);
    scale.extend_from_slice(&obs.scale[o..]);
    scale.extend(dx.iter().map(|v| (v / n).sqrt()));
    scale.extend(std::iter::repeat_n(1.0, m));
    net.gain_net.scale = FeatureScale::from_moments(vec![0.0; 2 * o + s + m], scale);
}

/// Mean per-step loss `‖x_t − x̂_{t|t}‖²` of the filter over a dataset. Diverged
/// trajectories make the result infinite.
pub fn validation_loss(net: &JmfNet, trajs: &[Trajectory], init: InitialEstimate) -> f64 {
    let ests = estimate_jmf(net, trajs, init, false);
    mean_step_loss(ests.iter().zip(trajs).map(|(e, tr)| (e.loss(tr), tr.len())))
}

fn mean_step_loss(items: impl Iterator<Item = (f64, usize)>) -> f64 {
    let (mut total, mut steps) = (0.0, 0usize);
    for (loss, len) in items {
        total += if loss.is_finite() { loss } else { f64::INFINITY };
        steps += len;
    }
    total / steps.max(1) as f64
}

/// Filter states at the start of every segment, from one forward pass with the
/// current parameters.
fn boundary_states(
    net: &JmfNet,
    trajs: &[Trajectory],
    segments: &[Segment],
    init: InitialEstimate,
) -> HashMap<(usize, usize), FilterState> {
    let mut wanted: HashMap<usize, Vec<usize>> = HashMap::new();
    for seg in segments.iter().filter(|s| s.carries_state()) {
        wanted.entry(seg.trajectory).or_default().push(seg.offset);
    }
    let mut out = HashMap::new();
    if wanted.is_empty() {
        return out;
    }
    let o = net.obs_dim();
    let mut subset: Vec<usize> = wanted.keys().copied().collect();
    subset.sort_unstable();
    let sub_trajs: Vec<Trajectory> = subset.iter().map(|&i| trajs[i].clone()).collect();
    for group in groups_by_length(&sub_trajs, 64) {
        let states: Vec<FilterState> = group
            .iter()
            .map(|&k| net.initial_state(&init.for_trajectory(&trajs[subset[k]], subset[k])))
            .collect();
        let mut bs = net.batch_state(&states);
        let b = group.len();
        let horizon = sub_trajs[group[0]].len();
        let mut y = vec![0.0; b * o];
        for t in 0..horizon {
            let mut any = false;
            for (r, &k) in group.iter().enumerate() {
                if wanted[&subset[k]].contains(&t) {
                    any = true;
                }
                y[r * o..(r + 1) * o].copy_from_slice(sub_trajs[k].observations[t].as_slice());
            }
            if any {
                let snap = net.unbatch_state(&bs);
                for (r, &k) in group.iter().enumerate() {
                    if wanted[&subset[k]].contains(&t) {
                        out.insert((subset[k], t), snap[r].clone());
                    }
                }
            }
            net.step(&mut bs, &y, None);
        }
    }
    out
}

/// Forward and backward over one mini-batch of equal-length segments. Returns the
/// mean per-step loss, or `None` when any row diverged.
fn batch_gradients(
    net: &JmfNet,
    trajs: &[Trajectory],
    batch: &[Segment],
    boundaries: &HashMap<(usize, usize), FilterState>,
    init: InitialEstimate,
    target: GradTarget,
) -> Option<(f64, super::filter::Gradients)> {
    let (s, o) = (net.state_dim(), net.obs_dim());
    let b = batch.len();
    let len = batch[0].len;
    let states: Vec<FilterState> = batch
        .iter()
        .map(|seg| match boundaries.get(&(seg.trajectory, seg.offset)) {
            Some(st) => st.clone(),
            None => net.initial_state(&init.for_trajectory(&trajs[seg.trajectory], seg.trajectory)),
        })
        .collect();
    let mut bs = net.batch_state(&states);
    let mut tapes = Vec::with_capacity(len);
    let mut g_fused = Vec::with_capacity(len);
    let mut y = vec![0.0; b * o];
    let norm = 1.0 / (b * len) as f64;
    let mut loss = 0.0;
    for t in 0..len {
        for (r, seg) in batch.iter().enumerate() {
            y[r * o..(r + 1) * o].copy_from_slice(trajs[seg.trajectory].observations[seg.offset + t].as_slice());
        }
        let mut tape = StepTape::default();
        if !net.step(&mut bs, &y, Some(&mut tape)).is_empty() {
            return None;
        }
        let mut g = vec![0.0; b * s];
        for (r, seg) in batch.iter().enumerate() {
            let x = &trajs[seg.trajectory].states[seg.offset + t];
            for a in 0..s {
                let e = x[a] - bs.fused[r * s + a];
                loss += e * e * norm;
                g[r * s + a] = -2.0 * e * norm;
            }
        }
        tapes.push(tape);
        g_fused.push(g);
    }
    if !loss.is_finite() {
        return None;
    }
    let (grads, _) = net.backward(&tapes, &g_fused, target, false);
    if grads.mode.iter().chain(&grads.gain).any(|v| !v.is_finite()) {
        return None;
    }
    Some((loss, grads))
}

/// Which network one training pass updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pass {
    Mode,
    Gain,
}

/// Optimizer state of both networks.
pub(crate) struct Optimizers {
    pub mode: Option<AdamState>,
    pub gain: AdamState,
}

impl Optimizers {
    pub fn new(net: &JmfNet, lr: f64) -> Self {
        Optimizers {
            mode: net.mode_net.as_ref().map(|n| AdamState::new(n.num_params(), lr)),
            gain: AdamState::new(net.gain_net.num_params(), lr),
        }
    }
}

/// One pass over all mini-batches updating only the network selected by `pass`.
/// Returns the mean training loss of the used batches and the number skipped.
pub(crate) fn run_pass<R: Rng + ?Sized>(
    net: &mut JmfNet,
    opt: &mut Optimizers,
    train: &[Trajectory],
    segments: &[Segment],
    cfg: &TrainConfig,
    pass: Pass,
    epoch: usize,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let init = cfg.initial_estimate;
    let target = match pass {
        Pass::Mode => GradTarget::ModeNet,
        Pass::Gain => GradTarget::GainNet,
    };
    let boundaries = boundary_states(net, train, segments, init);
    let batches = shuffled_batches(segments, cfg.batch_size, rng);
    let (mut loss_sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for batch in &batches {
        match batch_gradients(net, train, batch, &boundaries, init, target) {
            Some((loss, mut grads)) => {
                match pass {
                    Pass::Mode => {
                        let mode_net = net.mode_net.as_mut().expect("mode pass needs a mode network");
                        clip_gradients(&mut grads.mode, cfg.clip_norm);
                        opt.mode.as_mut().expect("mode optimizer").update(&mut mode_net.stack.params, &grads.mode);
                    }
                    Pass::Gain => {
                        clip_gradients(&mut grads.gain, cfg.clip_norm);
                        opt.gain.update(&mut net.gain_net.params, &grads.gain);
                    }
                }
                loss_sum += loss;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("epoch {epoch} {pass:?} pass skipped {skipped} of {} batches with non-finite loss", batches.len());
    }
    if skipped as f64 > cfg.max_skip_fraction * batches.len() as f64 {
        return Err(Error::TrainingAborted(format!(
            "epoch {epoch}: {skipped} of {} batches diverged",
            batches.len()
        )));
    }
    let train_loss = if used > 0 { loss_sum / used as f64 } else { f64::NAN };
    Ok((train_loss, skipped))
}

/// Alternating training: each epoch runs a pass over all mini-batches updating only
/// the mode network, then a pass updating only the gain network. Each network keeps
/// one Adam state for the whole run. The parameters with the best validation loss
/// are returned. A filter without a mode network only runs the gain pass.
pub fn als_train<R: Rng + ?Sized>(
    mut net: JmfNet,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome<JmfNet>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let init = cfg.initial_estimate;
    let lengths: Vec<usize> = train.iter().map(|t| t.len()).collect();
    let segments = segment_for_tbptt(&lengths, cfg.segment_len.unwrap_or(usize::MAX));
    let mut opt = Optimizers::new(&net, cfg.learning_rate);

    let initial_val_loss = validation_loss(&net, val, init);
    let mut curve = vec![CurveRow {
        epoch: 0,
        phase: "init".into(),
        train_loss: f64::NAN,
        val_loss: initial_val_loss,
        wall_time: start.elapsed().as_secs_f64(),
    }];
    let mut best = (initial_val_loss, net.clone());
    let mut skipped_total = 0;

    let passes: Vec<Pass> = if net.mode_net.is_some() {
        vec![Pass::Mode, Pass::Gain]
    } else {
        vec![Pass::Gain]
    };
    for epoch in 1..=cfg.epochs {
        for &pass in &passes {
            let (train_loss, skipped) = run_pass(&mut net, &mut opt, train, &segments, cfg, pass, epoch, rng)?;
            skipped_total += skipped;
            let val_loss = validation_loss(&net, val, init);
            let phase = match (pass, passes.len()) {
                (Pass::Gain, 1) => "joint",
                (Pass::Mode, _) => "mode",
                (Pass::Gain, _) => "gain",
            };
            info!("epoch {epoch} {phase}: train {train_loss:.4} val {val_loss:.4}");
            curve.push(CurveRow {
                epoch,
                phase: phase.into(),
                train_loss,
                val_loss,
                wall_time: start.elapsed().as_secs_f64(),
            });
            if val_loss < best.0 {
                best = (val_loss, net.clone());
            }
        }
    }
    Ok(TrainOutcome {
        net: best.1,
        curve,
        initial_val_loss,
        best_val_loss: best.0,
        skipped_batches: skipped_total,
    })
}

/// Fits the model-free regressor's input normalization and output de-normalization.
pub fn fit_model_free_scales(net: &mut ModelFreeNet, trajs: &[Trajectory]) {
    if trajs.is_empty() {
        return;
    }
    net.stack.scale = observation_feature_scale(trajs);
    let s = net.state_dim;
    let (mut sum, mut sq, mut n) = (vec![0.0; s], vec![0.0; s], 0.0);
    for tr in trajs {
        for x in &tr.states {
            for a in 0..s {
                sum[a] += x[a];
                sq[a] += x[a] * x[a];
            }
            n += 1.0;
        }
    }
    let shift: Vec<f64> = sum.iter().map(|v| v / n).collect();
    let scale = sq.iter().zip(&shift).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
    net.output_scale = FeatureScale::from_moments(shift, scale);
}

fn model_free_val_loss(net: &ModelFreeNet, trajs: &[Trajectory]) -> f64 {
    let ests = estimate_model_free(net, trajs);
    mean_step_loss(ests.iter().zip(trajs).map(|(e, tr)| (e.loss(tr), tr.len())))
}

/// Hidden state and previous observation at the start of each carried segment.
fn model_free_boundaries(
    net: &ModelFreeNet,
    trajs: &[Trajectory],
    segments: &[Segment],
) -> HashMap<(usize, usize), (Vec<Vec<f64>>, Vec<f64>)> {
    let mut wanted: HashMap<usize, Vec<usize>> = HashMap::new();
    for seg in segments.iter().filter(|s| s.carries_state()) {
        wanted.entry(seg.trajectory).or_default().push(seg.offset);
    }
    let mut out = HashMap::new();
    if wanted.is_empty() {
        return out;
    }
    let o = net.obs_dim;
    let mut subset: Vec<usize> = wanted.keys().copied().collect();
    subset.sort_unstable();
    let sub_trajs: Vec<Trajectory> = subset.iter().map(|&i| trajs[i].clone()).collect();
    let mut tape = StackTape::default();
    for group in groups_by_length(&sub_trajs, 64) {
        let b = group.len();
        let mut hidden = net.stack.zero_hidden(b);
        let mut prev: Vec<f64> = group
            .iter()
            .flat_map(|&k| sub_trajs[k].observations[0].as_slice().to_vec())
            .collect();
        let mut raw = vec![0.0; b * 2 * o];
        for t in 0..sub_trajs[group[0]].len() {
            for (r, &k) in group.iter().enumerate() {
                if wanted[&subset[k]].contains(&t) {
                    let h = hidden.iter().map(|hl| {
                        let n = hl.len() / b;
                        hl[r * n..(r + 1) * n].to_vec()
                    });
                    out.insert((subset[k], t), (h.collect(), prev[r * o..(r + 1) * o].to_vec()));
                }
                let y = &sub_trajs[k].observations[t];
                for c in 0..o {
                    raw[r * 2 * o + c] = y[c];
                    raw[r * 2 * o + o + c] = y[c] - prev[r * o + c];
                    prev[r * o + c] = y[c];
                }
            }
            net.stack.forward(b, &raw, &mut hidden, &mut tape);
        }
    }
    out
}

/// Trains the model-free regressor with Adam on the same per-step loss.
pub fn train_model_free<R: Rng + ?Sized>(
    mut net: ModelFreeNet,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome<ModelFreeNet>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let (s, o) = (net.state_dim, net.obs_dim);
    let lengths: Vec<usize> = train.iter().map(|t| t.len()).collect();
    let segments = segment_for_tbptt(&lengths, cfg.segment_len.unwrap_or(usize::MAX));
    let mut adam = AdamState::new(net.num_params(), cfg.learning_rate);
    let initial_val_loss = model_free_val_loss(&net, val);
    let mut curve = vec![CurveRow {
        epoch: 0,
        phase: "init".into(),
        train_loss: f64::NAN,
        val_loss: initial_val_loss,
        wall_time: start.elapsed().as_secs_f64(),
    }];
    let mut best = (initial_val_loss, net.clone());
    let mut skipped_total = 0;
    let mut scratch = GruScratch::default();

    for epoch in 1..=cfg.epochs {
        let boundaries = model_free_boundaries(&net, train, &segments);
        let batches = shuffled_batches(&segments, cfg.batch_size, rng);
        let (mut loss_sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
        for batch in &batches {
            let b = batch.len();
            let len = batch[0].len;
            let mut hidden: StackHidden = net.stack.zero_hidden(b);
            let mut prev = vec![0.0; b * o];
            for (r, seg) in batch.iter().enumerate() {
                match boundaries.get(&(seg.trajectory, seg.offset)) {
                    Some((h, p)) => {
                        for (l, hl) in h.iter().enumerate() {
                            let n = hl.len();
                            hidden[l][r * n..(r + 1) * n].copy_from_slice(hl);
                        }
                        prev[r * o..(r + 1) * o].copy_from_slice(p);
                    }
                    None => prev[r * o..(r + 1) * o]
                        .copy_from_slice(train[seg.trajectory].observations[seg.offset].as_slice()),
                }
            }
            let norm = 1.0 / (b * len) as f64;
            let mut tapes = Vec::with_capacity(len);
            let mut g_heads = Vec::with_capacity(len);
            let mut loss = 0.0;
            let mut raw = vec![0.0; b * 2 * o];
            for t in 0..len {
                for (r, seg) in batch.iter().enumerate() {
                    let y = &train[seg.trajectory].observations[seg.offset + t];
                    for k in 0..o {
                        raw[r * 2 * o + k] = y[k];
                        raw[r * 2 * o + o + k] = y[k] - prev[r * o + k];
                        prev[r * o + k] = y[k];
                    }
                }
                let mut tape = StackTape::default();
                net.stack.forward(b, &raw, &mut hidden, &mut tape);
                let mut g = vec![0.0; b * s];
                for (r, seg) in batch.iter().enumerate() {
                    let x = &train[seg.trajectory].states[seg.offset + t];
                    for a in 0..s {
                        let sc = net.output_scale.scale[a];
                        let est = net.output_scale.shift[a] + sc * tape.head[r * s + a];
                        let e = x[a] - est;
                        loss += e * e * norm;
                        g[r * s + a] = -2.0 * e * norm * sc;
                    }
                }
                tapes.push(tape);
                g_heads.push(g);
            }
            if !loss.is_finite() {
                skipped += 1;
                continue;
            }
            let mut grads = vec![0.0; net.num_params()];
            let mut g_hidden = net.stack.zero_hidden(b);
            for t in (0..len).rev() {
                net.stack
                    .backward(b, &tapes[t], &mut g_heads[t], &mut g_hidden, &mut grads, &mut scratch);
            }
            clip_gradients(&mut grads, cfg.clip_norm);
            adam.update(&mut net.stack.params, &grads);
            loss_sum += loss;
            used += 1;
        }
        skipped_total += skipped;
        if skipped as f64 > cfg.max_skip_fraction * batches.len() as f64 {
            return Err(Error::TrainingAborted(format!(
                "epoch {epoch}: {skipped} of {} batches diverged",
                batches.len()
            )));
        }
        let val_loss = model_free_val_loss(&net, val);
        let train_loss = if used > 0 { loss_sum / used as f64 } else { f64::NAN };
        info!("epoch {epoch} model-free: train {train_loss:.4} val {val_loss:.4}");
        curve.push(CurveRow {
            epoch,
            phase: "joint".into(),
            train_loss,
            val_loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if val_loss < best.0 {
            best = (val_loss, net.clone());
        }
    }
    Ok(TrainOutcome {
        net: best.1,
        curve,
        initial_val_loss,
        best_val_loss: best.0,
        skipped_batches: skipped_total,
    })
}
