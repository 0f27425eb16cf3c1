//! Dense and GRU layers with hand-written reverse-mode gradients, Adam, gradient
//! clipping, truncated-BPTT segmentation and parameter checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod tbptt;

pub use adam::{clip_gradients, AdamState};
pub use checkpoint::{config_hash, Checkpoint, NamedTensor};
pub use gradcheck::{max_relative_error, numeric_gradient};
pub use layers::{sigmoid, softmax_rows, Activation, Dense, Gru, GruCache, GruScratch, LayoutBuilder};
pub use tbptt::{segment_for_tbptt, shuffled_batches, Segment};

#[cfg(test)]
mod tests;
