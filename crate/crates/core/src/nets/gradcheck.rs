//! Scalar objectives over lists of parameter sets, and a central
//! finite-difference harness for checking their analytic gradients.

use crate::error::{ensure_finite, Result};
use crate::nets::mlp::ParamSet;

/// A scalar loss differentiable with respect to an ordered list of
/// parameter sets. Everything else the loss depends on (batches, frozen
/// noise, fixed networks) lives inside the implementor.
pub trait Objective {
    fn value(&self, params: &[&ParamSet]) -> Result<f64>;

    /// Loss value plus one gradient array per parameter set, each shaped
    /// exactly like the set's flat values.
    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// Evaluates `objective` and its gradients, rejecting non-finite results.
pub fn value_and_grad(
    objective: &dyn Objective,
    params: &[&ParamSet],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (value, grads) = objective.value_and_grad(params)?;
    ensure_finite(&[value], "loss value")?;
    for g in &grads {
        ensure_finite(g, "loss gradient")?;
    }
    Ok((value, grads))
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// `(param set index, value index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Floor on the relative-error denominator so entries whose true gradient
/// is numerically zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences with step `h`
/// on every parameter.
pub fn finite_difference_check(
    objective: &dyn Objective,
    params: &[&ParamSet],
    h: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = value_and_grad(objective, params)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut owned: Vec<ParamSet> = params.iter().map(|p| (*p).clone()).collect();
    for set in 0..owned.len() {
        for i in 0..owned[set].len() {
            let base = owned[set].values()[i];
            let eval_at = |owned: &mut Vec<ParamSet>, x: f64| -> Result<f64> {
                let mut v = owned[set].values().to_vec();
                v[i] = x;
                owned[set] = owned[set].with_values_unversioned(v);
                let refs: Vec<&ParamSet> = owned.iter().collect();
                objective.value(&refs)
            };
            let plus = eval_at(&mut owned, base + h)?;
            let minus = eval_at(&mut owned, base - h)?;
            eval_at(&mut owned, base)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[set][i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (set, i);
            }
        }
    }
    Ok(report)
}
