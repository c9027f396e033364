//! Central-difference gradient validation.

use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::scalar::Real;

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport<T> {
    /// `max |a - n| / max(1, |a|, |n|)` over all coordinates.
    pub max_rel_error: T,
    /// Coordinate where the maximum was reached.
    pub worst_index: usize,
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
}

/// Compares reverse-mode gradients of the scalar program `f` at
/// `point` against central differences with step `eps`.
///
/// `f` receives a fresh graph and the input variable and must return a
/// one-element tensor.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, eps: T) -> Result<GradCheckReport<T>>
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..point.numel()).collect();
    grad_check_coords(f, point, eps, &all)
}

/// Like [`grad_check`] but only perturbs the listed coordinates; the
/// report's `analytic` and `numeric` hold those coordinates in order and
/// `worst_index` is a coordinate of `point`.
pub fn grad_check_coords<T, F>(f: F, point: &Tensor<T>, eps: T, coords: &[usize]) -> Result<GradCheckReport<T>>
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if let Some(&bad) = coords.iter().find(|&&i| i >= point.numel()) {
        return Err(crate::error::Error::shape(
            "grad_check_coords",
            format!("coordinate {bad} out of range for {} values", point.numel()),
        ));
    }
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let loss = f(&mut g, x)?;
    g.backward(loss)?;
    let analytic = g
        .grad(x)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); point.numel()]);

    let eval = |p: Tensor<T>| -> Result<T> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let y = f(&mut g, x)?;
        Ok(g.value(y).item())
    };

    let analytic: Vec<T> = coords.iter().map(|&i| analytic[i]).collect();
    let mut numeric = Vec::with_capacity(coords.len());
    let mut max_rel_error = T::zero();
    let mut worst_index = 0;
    for (j, &i) in coords.iter().enumerate() {
        let mut plus = point.clone();
        plus.data[i] += eps;
        let mut minus = point.clone();
        minus.data[i] -= eps;
        let n = (eval(plus)? - eval(minus)?) / (eps + eps);
        let a = analytic[j];
        let denom = T::one().max(a.abs()).max(n.abs());
        let rel = (a - n).abs() / denom;
        if rel > max_rel_error || rel.is_nan() {
            max_rel_error = rel;
            worst_index = i;
        }
        numeric.push(n);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
