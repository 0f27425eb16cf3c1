//! Model-based filters: KF, EKF, IMM and a bootstrap particle filter.

pub mod imm;
pub mod kalman;
pub mod particle;

pub use crate::linalg::gaussian_logpdf;
pub use imm::{imm_step, merge_gaussians, ImmBelief, ImmDiagnostics};
pub use kalman::{ekf_step, filter_mode_step, kf_step, FilterMode, GaussianBelief, LinearModel, StepDiagnostics};
pub use particle::{
    genealogy_standard_error, pf_step, systematic_resample, ParticleDiagnostics,
    ParticleEnsemble, ParticleModel,
};
