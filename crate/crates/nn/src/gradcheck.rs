//! Central finite-difference verification of graph gradients.

use crate::error::NnError;
use crate::graph::{Graph, Var};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
    pub max_abs_error: f64,
}

/// Compares the analytic gradient of the scalar built by `loss` against
/// `(L(θ + ε) − L(θ − ε)) / 2ε` for every parameter. The error per
/// parameter is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(params: &ParamSet<f64>, loss: F, eps: f64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NnError>,
{
    grad_check_with_floor(params, loss, eps, 1e-8)
}

/// As [`grad_check`] with an explicit denominator floor. Finite differences
/// carry roundoff near `ε_machine·|L| / ε`, so entries far below that scale
/// need a larger floor to be compared meaningfully.
pub fn grad_check_with_floor<F>(params: &ParamSet<f64>, loss: F, eps: f64, floor: f64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NnError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |p: &ParamSet<f64>| -> Result<f64, NnError> {
        let mut g = Graph::new(p);
        let l = loss(&mut g)?;
        Ok(g.scalar(l))
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_params: params.count(),
        max_abs_error: 0.0,
    };
    for i in 0..params.flat_len() {
        let x = params.flat_get(i);
        probe.flat_set(i, x + eps);
        let up = eval(&probe)?;
        probe.flat_set(i, x - eps);
        let down = eval(&probe)?;
        probe.flat_set(i, x);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.flat_get(i);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        if err > report.max_relative_error || i == 0 {
            report = GradCheckReport { max_relative_error: err, worst_index: i, analytic: a, numeric, ..report };
        }
    }
    Ok(report)
}
