//! Central finite differences, for checking analytic gradients.
//!
//! Only forward evaluations are used here, so the result is independent of
//! every backward rule.

use crate::{Param, Tensor};

/// `∂f/∂p` by central differences with step `h`, perturbing one element of
/// `param` at a time. `f` must read the parameter's current value.
pub fn numeric_gradient(param: &Param, h: f64, mut f: impl FnMut() -> f64) -> Tensor {
    let original = param.value();
    let mut grad = Tensor::zeros(original.raw_dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let mut plus = original.clone();
        plus[&idx] += h;
        param.set(plus);
        let fp = f();
        let mut minus = original.clone();
        minus[&idx] -= h;
        param.set(minus);
        let fm = f();
        *g = (fp - fm) / (2.0 * h);
    }
    param.set(original);
    grad
}

/// `max |a - b| / max(max |a|, max |b|)`, with a floor of `1e-12` on the
/// denominator.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    diff / scale
}
