use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::error::{bail, Result};

/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`, over the listed coordinates.
pub fn central_difference_error<F>(
    analytic: &[f64],
    mut f: F,
    x: &[f64],
    eps: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        bail!(Contract, "grad_check eps must be positive, got {}", eps);
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe)?;
        probe[i] = orig - eps;
        let down = f(&probe)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Compares the tape gradient of a scalar function against central
/// differences at every coordinate of `x`.
///
/// `f` builds the scalar on a fresh graph from the bound input.
pub fn grad_check<F>(mut f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(&x.clone().with_requires_grad(true));
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic: Vec<f64> = match g.grad(xv) {
        Some(d) => d.to_vec(),
        None => vec![0.0; x.len()],
    };
    let shape = x.shape().to_vec();
    let eval = |vals: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(vals.to_vec(), &shape)?;
        let out = f(&mut g, xv)?;
        Ok(g.scalar(out))
    };
    central_difference_error(&analytic, eval, x.data(), eps, 0..x.len())
}
