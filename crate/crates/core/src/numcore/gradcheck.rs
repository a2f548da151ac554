use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences with the given step.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
pub fn gradcheck<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 1e-8 && step < 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "gradcheck step must lie in (1e-8, 1e-2), got {step}"
        )));
    }
    if !point.is_finite() {
        return Err(Error::InvalidArgument("gradcheck point is not finite".into()));
    }

    let mut g = Graph::new();
    let x = g.param(point.clone());
    let loss = f(&mut g, x)?;
    g.backward(loss)?;
    let analytic = g.grad(x).expect("param leaf").to_vec();

    let eval = |p: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.param(p);
        let loss = f(&mut g, x)?;
        Ok(g.value(loss).item())
    };

    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFiniteGradient {
                index: i,
                which: "analytic",
            });
        }
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(Error::NonFiniteGradient {
                index: i,
                which: "numeric",
            });
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
