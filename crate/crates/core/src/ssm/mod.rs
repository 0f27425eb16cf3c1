//! Mode-switching state-space models and trajectory simulation.

pub mod dynamics;
pub mod jacobian;
pub mod mode_process;
pub mod noise;
pub mod system;
pub mod trajectory;

pub use dynamics::{
    AccelerationLaw, KinematicMotion, Observation, PendulumLaw, PendulumMotion, StateModel, Transition,
};
pub use jacobian::finite_difference_jacobian;
pub use mode_process::{sample_mode_sequence, ModeProcess};
pub use noise::NoiseModel;
pub use system::{simulate_trajectory, InitialState, ModeDynamics, ModeSystem};
pub use trajectory::{load_binary, read_binary, read_csv, save_binary, write_binary, write_csv, ColumnMap, Trajectory};
