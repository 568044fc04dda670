//! A small dense-tensor reverse-mode automatic differentiation engine.
//!
//! Computation is recorded on a [`Tape`] as it runs; [`Tape::backward`]
//! walks the recorded nodes in reverse to produce [`Gradients`]. Parameters
//! live in a [`ParamSet`] between steps and are updated with [`AdamState`].

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod fd;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::CheckpointError;
pub use error::{Result, TensorError};
pub use fd::{finite_difference_grad, relative_error};
pub use params::{BoundParams, ParamSet};
pub use tape::{sigmoid, ExprNode, Gradients, Tape, Var, LAYER_NORM_EPS, LEAKY_SLOPE};
pub use tensor::Tensor;
