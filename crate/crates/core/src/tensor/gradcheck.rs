//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, NodeId, ParamStore};
use crate::error::{AidError, Result};

/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn evaluate<F>(f: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(AidError::Probe(format!(
            "probe function must return a scalar, got shape {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(AidError::Probe(format!("probe function returned {v}")));
    }
    Ok(v)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// `(f(x+eps) - f(x-eps)) / 2eps` for every entry of every parameter.
///
/// Parameter values are restored before returning; gradients are left zeroed.
pub fn grad_check<F>(params: &mut ParamStore, eps: f64, tol: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    params.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    if !g.value(out).all_finite() {
        return Err(AidError::Probe("non-finite probe value".into()));
    }
    let grads = g.backward(out)?;
    params.accumulate(&grads)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    params.zero_grad();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
        tol,
    };
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..params.value(id).len() {
            let orig = params.value(id).data()[j];
            params.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = evaluate(&mut f, params)?;
            params.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = evaluate(&mut f, params)?;
            params.get_mut(id).value.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel;
                report.worst = Some((params.get(id).name.clone(), j));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
