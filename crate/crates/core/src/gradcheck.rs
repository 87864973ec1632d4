//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

mod suite;

pub use suite::{check_suite, covered_layer_kinds, CaseResult, KINK_MARGIN};

/// Compares the autodiff gradient of a scalar function against central
/// differences and returns `max_i |auto_i - fd_i| / max(1, |fd_i|)`.
///
/// `f` receives a fresh graph and the node holding `x` and must return a
/// scalar node. Inputs should sit at least `1e-3` away from kinks (ReLU at 0,
/// clamp boundaries); those points are not differentiable and are excluded.
pub fn grad_check<F>(mut f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xn = g.param(x.clone());
    let out = f(&mut g, xn)?;
    check_finite(g.value(out), "f(x)")?;
    let auto = g.backward(out)?.take(xn).expect("input is a requires-grad leaf");

    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let err = (auto.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn eval<F>(f: &mut F, x: &Tensor) -> Result<f64>
where
    F: FnMut(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let out = f(&mut g, xn)?;
    check_finite(g.value(out), "f(x ± eps)")?;
    Ok(g.value(out).sum())
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if !t.is_scalar() {
        return Err(Error::Contract(format!("grad_check needs a scalar function, got shape {:?}", t.shape())));
    }
    if !t.all_finite() {
        return Err(Error::Contract(format!("grad_check: {what} is not finite ({})", t.item())));
    }
    Ok(())
}
