//! Tensors, reverse-mode differentiation and the RMSprop optimizer.

pub mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::RmsProp;
pub use params::{ParamId, ParamStore, Parameter};
pub(crate) use params::{hex_digest, sha256_hex};
pub use tape::{one_hot, one_hot_index, Gradients, NodeId, Tape};
pub use tensor::Tensor;

use crate::error::Result;

/// Cross-correlation of `input` (`C_in×H×W` or `N×C_in×H×W`) with
/// `kernels` (`C_out×C_in×k×k`).
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let k = tape.input(kernels.clone());
    let y = tape.conv2d(x, k, stride, padding)?;
    Ok(tape.value(y).clone())
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|v| v.max(0.0)).collect(),
    )
}

/// `weight · input + bias`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let w = tape.input(weight.clone());
    let b = tape.input(bias.clone());
    let y = tape.linear(x, w, b)?;
    Ok(tape.value(y).clone())
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let y = tape.global_avg_pool(x)?;
    Ok(tape.value(y).clone())
}

/// `−log softmax(scores)[true index]` for a one-hot `target`.
pub fn softmax_cross_entropy(scores: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.input(scores.clone());
    let l = tape.softmax_cross_entropy(s, target)?;
    tape.value(l).item()
}
