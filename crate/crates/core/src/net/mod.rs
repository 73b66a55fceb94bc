//! Networks and the reverse-mode machinery that differentiates through
//! integrator steps.

pub mod adam;
pub mod mlp;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{Activation, Layer, Mlp, MlpBinding, MlpConfig};
pub use tape::{Gradients, NodeId, Tape};

/// A vector field `A(x, t)` that can record itself onto a tape, so that
/// Jacobians with respect to `x` and `t` are available by reverse sweeps.
pub trait TapeField {
    fn dim(&self) -> usize;
    fn record(&self, tape: &mut Tape, x: NodeId, t: NodeId) -> NodeId;
}

impl TapeField for Mlp {
    fn dim(&self) -> usize {
        self.config().output_dim
    }

    fn record(&self, tape: &mut Tape, x: NodeId, t: NodeId) -> NodeId {
        let binding = self.bind(tape);
        self.forward_taped(tape, &binding, x, Some(t))
    }
}
