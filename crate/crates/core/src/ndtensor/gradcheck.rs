use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Maximum per-coordinate disagreement between the tape gradient of `f` at `x`
/// and central differences `(f(x+h) − f(x−h)) / 2h`.
///
/// Each coordinate's error is `|analytic − numeric| / max(1, |analytic|, |numeric|)`,
/// i.e. relative for gradients of magnitude above one and absolute below.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |point: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point)?;
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone())?;
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if !err.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
