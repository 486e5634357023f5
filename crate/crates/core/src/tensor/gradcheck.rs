use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over every element.
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Checks the reverse-mode gradient of `forward` against central
/// differences for every element of every parameter.
///
/// `forward` must be a pure function of the parameter values: it is called
/// once on a graph with gradient-tracking leaves and then twice per element
/// on fresh graphs.
pub fn grad_check<F>(params: &[Tensor], eps: f64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone().with_grad())).collect();
    let loss = forward(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();
    compare_with_finite_differences(params, &analytic, eps, |ps| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let loss = forward(&mut g, &vars)?;
        g.value(loss).item()
    })
}

/// Compares a supplied gradient with central differences of `value`.
pub fn compare_with_finite_differences<F>(
    params: &[Tensor],
    analytic: &[Vec<f64>],
    eps: f64,
    value: F,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Parameter(format!(
            "grad_check epsilon {eps} outside [1e-7, 1e-3]"
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::dim("grad_check", &[params.len()], &[analytic.len()]));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.len() != params[pi].numel() {
            return Err(Error::dim("grad_check", params[pi].shape(), &[grad.len()]));
        }
        for ei in 0..grad.len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let up = value(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let down = value(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (grad[ei] - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
