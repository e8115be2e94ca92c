//! Central finite-difference checks of tape gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Param;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
            checked: self.checked + other.checked,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval(loss_fn: &dyn Fn(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let loss = loss_fn(&mut g)?;
    Ok(g.value(loss).item())
}

/// Compares the tape gradient of `loss_fn` with respect to `param` against
/// `(L(θ+h) − L(θ−h)) / 2h`, entry by entry. At most `max_entries` entries
/// are checked, spread evenly over the tensor.
pub fn check_param(
    param: &Param,
    loss_fn: &dyn Fn(&mut Graph) -> Result<Var>,
    step: f64,
    max_entries: usize,
) -> Result<GradCheck> {
    param.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g)?;
    g.backward(loss)?;
    let analytic = param.grad().unwrap_or_else(|| vec![0.0; param.numel()]);
    param.zero_grad();

    let numel = param.numel();
    let stride = numel.div_ceil(max_entries.max(1)).max(1);
    let base = param.snapshot().into_data();
    let mut report = GradCheck::default();
    for idx in (0..numel).step_by(stride) {
        let mut probe = base.clone();
        probe[idx] = base[idx] + step;
        param.set_data(&probe)?;
        let plus = eval(loss_fn)?;
        probe[idx] = base[idx] - step;
        param.set_data(&probe)?;
        let minus = eval(loss_fn)?;
        param.set_data(&base)?;

        let numeric = (plus - minus) / (2.0 * step);
        report.max_abs_err = report.max_abs_err.max((analytic[idx] - numeric).abs());
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic[idx], numeric));
        report.checked += 1;
    }
    Ok(report)
}

/// [`check_param`] over several parameters, merged.
pub fn check_params(
    params: &[Param],
    loss_fn: &dyn Fn(&mut Graph) -> Result<Var>,
    step: f64,
    max_entries: usize,
) -> Result<GradCheck> {
    params.iter().try_fold(GradCheck::default(), |acc, p| {
        Ok(acc.merge(check_param(p, loss_fn, step, max_entries)?))
    })
}
