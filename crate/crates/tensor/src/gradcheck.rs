//! Central finite differences against the reverse sweep.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every coordinate of every input of the scalar function `f`.
///
/// `f` receives fresh leaves carrying the values of `inputs`; it is called once
/// for the analytic gradient and twice per coordinate for
/// `(f(x+eps) - f(x-eps)) / 2eps`. Returns the largest relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(TensorError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    if !out.all_finite() {
        return Err(TensorError::numeric("grad_check", format!("f = {}", out.item())));
    }
    out.backward()?;

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let probe: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i != which {
                    return t.detach();
                }
                let mut v = t.to_vec();
                v[coord] += delta;
                Tensor::from_vec(t.shape(), v).expect("shape preserved")
            })
            .collect();
        let y = f(&probe)?.item();
        if !y.is_finite() {
            return Err(TensorError::numeric("grad_check", format!("f = {y}")));
        }
        Ok(y)
    };

    let mut worst: f64 = 0.0;
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (coord, &a) in analytic.iter().enumerate() {
            let numeric = (eval(which, coord, eps)? - eval(which, coord, -eps)?) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
