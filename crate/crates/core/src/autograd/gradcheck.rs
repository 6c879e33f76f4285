//! Central-difference gradient checker.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked entries of `|analytic - numeric| / max(1, |analytic|)`
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` builds the loss from the parameters, which are inserted into a fresh
/// graph as trainable leaves in the given order. `f` must be deterministic.
pub fn finite_diff_check<T, F>(params: &[Tensor<T>], eps: f64, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    finite_diff_check_sampled(params, eps, usize::MAX, f)
}

/// Like [`finite_diff_check`], but probes at most `max_per_param` evenly
/// spaced entries of each parameter.
pub fn finite_diff_check_sampled<T, F>(
    params: &[Tensor<T>],
    eps: f64,
    max_per_param: usize,
    mut f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    let mut eval = |ps: &[Tensor<T>], with_grad: bool| -> Result<(f64, Vec<Vec<T>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.variable(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let value = g.data(loss)[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {value}")));
        }
        let mut grads = Vec::new();
        if with_grad {
            g.backward(loss)?;
            for (v, p) in vars.iter().zip(ps) {
                grads.push(g.grad(*v).map_or_else(|| vec![T::zero(); p.numel()], <[T]>::to_vec));
            }
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(params, true)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let step = n.div_ceil(max_per_param.min(n).max(1)).max(1);
        for ei in (0..n).step_by(step) {
            let orig = p.data()[ei];
            work[pi].data_mut()[ei] = orig + T::lit(eps);
            let (plus, _) = eval(&work, false)?;
            work[pi].data_mut()[ei] = orig - T::lit(eps);
            let (minus, _) = eval(&work, false)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][ei].as_f64();
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {pi}[{ei}]")));
            }
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                if rel >= report.max_rel_error {
                    report.worst = Some((pi, ei));
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
