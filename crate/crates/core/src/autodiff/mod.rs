//! Reverse-mode automatic differentiation, fully connected networks, and
//! first-order optimizers.

mod graph;
mod mlp;
mod optim;
mod params;

pub use graph::{Binding, Gradients, Graph, NodeId};
pub use mlp::{mlp_init, Activation, Forward, Mlp, MlpSpec};
pub use optim::{adam_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::ParameterStore;

pub(crate) use params::{bytes_to_f64s, f64s_to_bytes};
