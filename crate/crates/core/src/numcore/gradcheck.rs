use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the largest relative error over all coordinates:
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `step` overrides the default per-coordinate step of `1e-4·max(1, |x_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: Option<f64>) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |input: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(&mut tape, v)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::shape("grad_check", "function must return a scalar"));
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(v).expect("leaf gradient is always populated");

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x.data()[i];
        let h = step.unwrap_or(1e-4 * xi.abs().max(1.0));
        probe.data_mut()[i] = xi + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = xi - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = xi;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
