//! Dense layers, losses, reverse-mode gradients and Adam.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use loss::{bce_loss, huber_loss, mse_tracking_loss, TrackingScales, BCE_CLAMP, HUBER_DELTA};
pub use mlp::{mlp_forward, mlp_on_tape, Activation, Mlp, MlpSpec};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{NeuralError, Tensor2};

/// Componentwise maximum of `edge_features` rows per segment; empty
/// segments are zero.
pub fn max_aggregate(
    edge_features: &Tensor2,
    segment_ids: &[usize],
    n_segments: usize,
) -> Result<Tensor2, NeuralError> {
    let mut tape = Tape::new();
    let x = tape.leaf(edge_features.clone())?;
    let y = tape.segment_max(x, segment_ids, n_segments)?;
    Ok(tape.value(y)?.clone())
}
