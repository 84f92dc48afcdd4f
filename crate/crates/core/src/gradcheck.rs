//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max_k |analytic_k - numeric_k| / max(1, |analytic_k|)`.
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Analytic gradient of `loss` at `params`, flattened in store order.
pub fn analytic_gradient<T, F>(params: &ParamStore<T>, loss: &F) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(params, true);
    let l = loss(&mut tape, &bound)?;
    let mut adj = tape.backward(l)?;
    Ok(bound.gradients(params, &mut adj).into_iter().flat_map(|g| g.into_data()).collect())
}

/// Loss value only, parameters bound as constants.
pub fn evaluate<T, F>(params: &ParamStore<T>, loss: &F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(params, false);
    let l = loss(&mut tape, &bound)?;
    Ok(tape.value(l).item())
}

/// Coordinates probed when at most `budget` may be checked: evenly strided.
fn probe_coords(total: usize, budget: Option<usize>) -> Vec<usize> {
    match budget {
        Some(b) if b < total && b > 0 => (0..b).map(|i| i * total / b).collect(),
        _ => (0..total).collect(),
    }
}

/// Compares a supplied analytic gradient to central differences of `loss`.
pub fn compare_with_finite_differences<T, F>(
    params: &ParamStore<T>,
    analytic: &[T],
    step: f64,
    budget: Option<usize>,
    loss: &F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &Bound) -> Result<Var>,
{
    let h = T::of(step);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_coord: 0, coords_checked: 0 };
    for k in probe_coords(analytic.len(), budget) {
        let x = params.flat_get(k);
        probe.flat_set(k, x + h);
        let up = evaluate(&probe, loss);
        probe.flat_set(k, x - h);
        let down = evaluate(&probe, loss);
        probe.flat_set(k, x);
        let (up, down) = match (up, down) {
            (Ok(u), Ok(d)) if u.is_finite() && d.is_finite() => (u.as_f64(), d.as_f64()),
            _ => return Err(Error::NonFinite { op: format!("grad_check probe at coordinate {k}") }),
        };
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[k].as_f64();
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err > report.max_rel_error || report.coords_checked == 0 {
            report.max_rel_error = err;
            report.worst_coord = k;
        }
        report.coords_checked += 1;
    }
    Ok(report)
}

/// Checks the tape gradient of `loss` against central differences.
pub fn grad_check<T, F>(params: &ParamStore<T>, step: f64, budget: Option<usize>, loss: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &Bound) -> Result<Var>,
{
    let analytic = analytic_gradient(params, &loss)?;
    compare_with_finite_differences(params, &analytic, step, budget, &loss)
}
