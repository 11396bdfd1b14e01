//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::Gradients;
use crate::numerics::params::Params;

/// Outcome of a gradient check: the worst relative error seen per parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares `analytic` gradients against central differences of `loss_fn`
/// evaluated at `params`, entry by entry.
///
/// The relative error divides by `max(|analytic|, |numeric|, 0.01)` so that
/// floating-point noise on near-zero gradients does not trip the threshold
/// while genuinely wrong gradients (even scaled ones) still fail.
pub fn grad_check(
    params: &Params,
    analytic: &Gradients,
    loss_fn: impl Fn(&Params) -> f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::Contract("finite-difference step must be > 0".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension("gradient/parameter count mismatch".into()));
    }
    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let n = params.value(i).data().len();
        let mut max_rel: f64 = 0.0;
        for k in 0..n {
            let saved = work.value(i).data()[k];
            work.value_mut(i).data_mut()[k] = saved + step;
            let up = loss_fn(&work);
            work.value_mut(i).data_mut()[k] = saved - step;
            let down = loss_fn(&work);
            work.value_mut(i).data_mut()[k] = saved;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(i).data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-2);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
        per_param.push(ParamCheck {
            name: params.name(i).to_string(),
            max_rel_error: max_rel,
            pass: max_rel < tolerance,
        });
    }
    let pass = per_param.iter().all(|p| p.pass);
    Ok(GradCheckReport {
        per_param,
        tolerance,
        pass,
    })
}

/// Same check restricted to a deterministic subset of scalar entries per
/// parameter, for larger instances.
pub fn grad_check_sampled(
    params: &Params,
    analytic: &Gradients,
    loss_fn: impl Fn(&Params) -> f64,
    step: f64,
    tolerance: f64,
    max_entries_per_param: usize,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::Contract("finite-difference step must be > 0".into()));
    }
    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let n = params.value(i).data().len();
        let stride = (n / max_entries_per_param).max(1);
        let mut max_rel: f64 = 0.0;
        for k in (0..n).step_by(stride) {
            let saved = work.value(i).data()[k];
            work.value_mut(i).data_mut()[k] = saved + step;
            let up = loss_fn(&work);
            work.value_mut(i).data_mut()[k] = saved - step;
            let down = loss_fn(&work);
            work.value_mut(i).data_mut()[k] = saved;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(i).data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-2);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
        per_param.push(ParamCheck {
            name: params.name(i).to_string(),
            max_rel_error: max_rel,
            pass: max_rel < tolerance,
        });
    }
    let pass = per_param.iter().all(|p| p.pass);
    Ok(GradCheckReport {
        per_param,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Tape;
    use crate::numerics::matrix::Matrix;

    /// Linear loss: finite differences are exact up to rounding.
    #[test]
    fn linear_model_is_exact() {
        let mut params = Params::new();
        let w = params.add("w", Matrix::from_vec(2, 2, vec![0.3, -0.7, 1.1, 0.0]).unwrap());
        let build = |p: &Params| {
            let mut t = Tape::new();
            let wid = t.param(p, w);
            let s = t.sum_all(wid);
            t.value(s).at(0, 0)
        };
        let mut t = Tape::new();
        let wid = t.param(&params, w);
        let s = t.sum_all(wid);
        let analytic = t.backward(s, &params).unwrap();
        let report = grad_check(&params, &analytic, build, 1e-4, 1e-8).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut params = Params::new();
        let w = params.add("w", Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let build = |p: &Params| {
            let v = p.value(0);
            v.at(0, 0) * v.at(0, 0) + 3.0 * v.at(0, 1)
        };
        let mut analytic = Gradients::zeros_like(&params);
        // true gradient is (2x, 3); corrupt by doubling
        analytic.get_mut(w).set(0, 0, 4.0 * params.value(0).at(0, 0));
        analytic.get_mut(w).set(0, 1, 6.0);
        let report = grad_check(&params, &analytic, build, 1e-5, 1e-4).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn zero_step_is_rejected() {
        let params = Params::new();
        let analytic = Gradients::zeros_like(&params);
        assert!(grad_check(&params, &analytic, |_| 0.0, 0.0, 1e-4).is_err());
    }
}
