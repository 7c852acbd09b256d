//! Small tensor engine: a fixed vocabulary of layers with hand-written
//! reverse passes, Adam, and binary checkpoints.

mod checkpoint;
mod kernels;
mod network;
mod params;
mod real;
mod tensor;

pub use checkpoint::Checkpoint;
pub use network::{InputGrads, Inputs, LayerKind, LayerSpec, Network, NetworkBuilder, Tokens, Trace};
pub use params::{
    accumulate, clip_grad_norm, grad_norm, Grads, Param, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use real::{gemm, Real};
pub use tensor::Tensor;
