//! A small dense network: ReLU hidden layers, a linear or logits head,
//! hand-written reverse-mode gradients and Adam.

mod check;
mod network;
mod optim;
mod train;

pub use check::{check_gradient, random_gradient_checks, rel_error, GradCheck, FD_STEP};
pub use network::{
    argmax, forward, grad, loss, predict, softmax_rows, Activation, Layer, LossKind, NetworkSpec,
    OutputHead, Parameters,
};
pub use optim::{Adam, AdamConfig};
pub use train::{
    train, BatchInputs, MaskGranularity, Model, TrainConfig, TrainResult, MODEL_VERSION,
};
