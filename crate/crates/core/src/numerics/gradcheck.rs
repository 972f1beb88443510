//! Central finite-difference verification of analytic gradients.

use crate::par::{self, Execution};

use super::tensor::Tensor;

/// Smallest denominator used when forming a relative error.
pub const REL_FLOOR: f64 = 1e-12;

/// Outcome for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Elements where `f` was non-finite at a perturbed point.
    pub non_finite: Vec<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` against `(f(p + h e) - f(p - h e)) / 2h` for every
/// element of every parameter. Non-finite evaluations are recorded on the
/// offending parameter rather than aborting the check.
pub fn finite_diff_check<F>(
    f: F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
    exec: Execution,
) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> f64 + Sync,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per param");
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |e| (p, e)))
        .collect();
    let numeric: Vec<f64> = par::map(exec, &coords, |&(p, e)| {
        let eval = |delta: f64| {
            let mut shifted = params.to_vec();
            let v = &mut shifted[p].data_mut()[e];
            *v += delta;
            f(&shifted)
        };
        (eval(step) - eval(-step)) / (2.0 * step)
    });

    let mut checks: Vec<ParamCheck> = params
        .iter()
        .enumerate()
        .map(|(index, _)| ParamCheck {
            index,
            max_rel_error: 0.0,
            worst_element: 0,
            analytic: 0.0,
            numeric: 0.0,
            non_finite: Vec::new(),
            passed: true,
        })
        .collect();
    for (&(p, e), &n) in coords.iter().zip(&numeric) {
        let check = &mut checks[p];
        let a = analytic[p].data()[e];
        if !n.is_finite() || !a.is_finite() {
            check.non_finite.push(e);
            check.passed = false;
            continue;
        }
        let err = relative_error(a, n);
        if err > check.max_rel_error || (e == 0 && check.max_rel_error == 0.0) {
            check.max_rel_error = err;
            check.worst_element = e;
            check.analytic = a;
            check.numeric = n;
        }
        if err >= tolerance {
            check.passed = false;
        }
    }
    GradCheckReport {
        params: checks,
        tolerance,
    }
}
