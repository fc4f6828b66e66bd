//! Dense `f64` tensors, a reverse-mode tape, and the primitive ops the model
//! is assembled from.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use params::{ParamId, ParamStore};
pub use rng::{Rng, RngState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Default epsilon for instance normalization and style statistics.
pub const NORM_EPS: f64 = 1e-5;

/// Evaluates a single tape op on plain tensors.
fn eval<F>(inputs: &[&Tensor], f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    eval(&[input, kernel, bias], |t, v| t.conv2d(v[0], v[1], v[2], stride, pad))
}

pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    eval(&[x], |t, v| t.instance_norm(v[0], eps))
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    eval(&[x], |t, v| t.global_avg_pool(v[0]))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    eval(&[x], |t, v| Ok(t.sigmoid(v[0]))).expect("elementwise op cannot fail")
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    eval(&[a, b], |t, v| t.matmul(v[0], v[1]))
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    eval(&[a, b], |t, v| t.concat_channels(v[0], v[1]))
}
