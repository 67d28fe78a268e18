//! The two-layer MLP, its loss and gradient, and parameter-vector algebra.

mod batch;
mod mlp;
mod vector;

pub use batch::Batch;
pub use mlp::{
    evaluate, forward, init_params, loss_and_grad, loss_and_grad_into, LossReport, MlpShape,
};
pub use vector::{ParamVector, PARAM_MAGIC};
