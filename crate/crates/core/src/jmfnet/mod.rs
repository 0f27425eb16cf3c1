//! The learned switching filter, its training, and the learned baselines.

pub mod estimate;
pub mod filter;
pub mod nets;
pub mod train;

use rand::Rng;

pub use estimate::{estimate_jmf, estimate_model_free, mse, to_db, InitialEstimate, TrajectoryEstimate};
pub use filter::{
    BatchState, FilterState, GradTarget, Gradients, InterfaceGradients, JmfNet, ModeKnowledge, StepTape,
};
pub use nets::{FeatureScale, GainNet, ModeNetConfig, ModePredictorNet, ModelFreeNet, RecurrentStack};
pub use train::{
    als_train, fit_feature_scales, fit_model_free_scales, train_model_free, validation_loss, CurveRow, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};
use crate::neural::{Checkpoint, NamedTensor};
use crate::ssm::Trajectory;

impl JmfNet {
    /// Randomly initialized filter over the given modes.
    pub fn new<R: Rng + ?Sized>(modes: Vec<ModeKnowledge>, mode_cfg: &ModeNetConfig, rng: &mut R) -> Result<Self> {
        let first = modes.first().ok_or_else(|| Error::InvalidModel("the filter needs at least one mode".into()))?;
        let (s, o, m) = (first.transition.state_dim(), first.observation.obs_dim(), modes.len());
        let mode_net = ModePredictorNet::new(o, m, mode_cfg, rng);
        let gain_net = GainNet::new(s, o, m, rng);
        Ok(JmfNet {
            modes,
            mode_net: Some(mode_net),
            gain_net,
        })
    }

    /// Switch-agnostic filter: a single mode, no mode network.
    pub fn agnostic<R: Rng + ?Sized>(mode: ModeKnowledge, rng: &mut R) -> Self {
        let (s, o) = (mode.transition.state_dim(), mode.observation.obs_dim());
        JmfNet {
            modes: vec![mode],
            mode_net: None,
            gain_net: GainNet::new(s, o, 1, rng),
        }
    }

    pub fn to_checkpoint(&self, config_hash: [u8; 32]) -> Checkpoint {
        let mut tensors = vec![
            NamedTensor::vector("gain.params", self.gain_net.params.clone()),
            NamedTensor::vector("gain.scale", self.gain_net.scale.scale.clone()),
            NamedTensor::vector("gain.shift", self.gain_net.scale.shift.clone()),
        ];
        if let Some(net) = &self.mode_net {
            tensors.push(NamedTensor::vector("mode.params", net.stack.params.clone()));
            tensors.push(NamedTensor::vector("mode.scale", net.stack.scale.scale.clone()));
            tensors.push(NamedTensor::vector("mode.shift", net.stack.scale.shift.clone()));
        }
        Checkpoint { config_hash, tensors }
    }

    /// Loads parameters saved by [`JmfNet::to_checkpoint`] into a filter of the same shape.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        load_into(&mut self.gain_net.params, ck, "gain.params")?;
        load_into(&mut self.gain_net.scale.scale, ck, "gain.scale")?;
        load_into(&mut self.gain_net.scale.shift, ck, "gain.shift")?;
        if let Some(net) = &mut self.mode_net {
            load_into(&mut net.stack.params, ck, "mode.params")?;
            load_into(&mut net.stack.scale.scale, ck, "mode.scale")?;
            load_into(&mut net.stack.scale.shift, ck, "mode.shift")?;
        }
        Ok(())
    }

    /// Squared-error sum of the filtered trajectory, or `None` if it diverged.
    pub fn trajectory_loss(&self, traj: &Trajectory, x0_hat: &[f64]) -> Option<f64> {
        let mut bs = self.batch_state(&[self.initial_state(x0_hat)]);
        let mut loss = 0.0;
        for (y, x) in traj.observations.iter().zip(&traj.states) {
            if !self.step(&mut bs, y.as_slice(), None).is_empty() {
                return None;
            }
            loss += x.iter().zip(&bs.fused).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Some(loss)
    }
}

impl ModelFreeNet {
    pub fn to_checkpoint(&self, config_hash: [u8; 32]) -> Checkpoint {
        Checkpoint {
            config_hash,
            tensors: vec![
                NamedTensor::vector("mf.params", self.stack.params.clone()),
                NamedTensor::vector("mf.scale", self.stack.scale.scale.clone()),
                NamedTensor::vector("mf.shift", self.stack.scale.shift.clone()),
                NamedTensor::vector("mf.out_scale", self.output_scale.scale.clone()),
                NamedTensor::vector("mf.out_shift", self.output_scale.shift.clone()),
            ],
        }
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        load_into(&mut self.stack.params, ck, "mf.params")?;
        load_into(&mut self.stack.scale.scale, ck, "mf.scale")?;
        load_into(&mut self.stack.scale.shift, ck, "mf.shift")?;
        load_into(&mut self.output_scale.scale, ck, "mf.out_scale")?;
        load_into(&mut self.output_scale.shift, ck, "mf.out_shift")
    }
}

fn load_into(dst: &mut [f64], ck: &Checkpoint, name: &str) -> Result<()> {
    let t = ck.get(name)?;
    if t.data.len() != dst.len() {
        return Err(Error::Dimension(format!(
            "checkpoint tensor '{name}' has {} values, the network expects {}",
            t.data.len(),
            dst.len()
        )));
    }
    dst.copy_from_slice(&t.data);
    Ok(())
}
