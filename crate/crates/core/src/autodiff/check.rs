//! Central-difference gradient checking.

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Graphs whose leaky-rectifier inputs come closer than this to zero are
/// rejected: a step of `eps` could cross the kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the reverse-mode gradient of scalar node `loss` w.r.t. every
/// element of `leaf` with central differences of step `eps`.
///
/// The graph must have all inputs set. Leaf values are restored on return.
pub fn grad_check<T: Scalar>(g: &mut Graph<T>, loss: NodeId, leaf: NodeId, eps: f64) -> Result<GradCheck> {
    g.forward()?;
    if g.min_abs_preactivation() < KINK_MARGIN {
        return Err(Error::Contract(format!(
            "a leaky-rectifier input lies within {KINK_MARGIN} of zero; finite differences are unreliable"
        )));
    }
    let grads = g.backward(loss)?;
    let base = g
        .value(leaf)
        .cloned()
        .ok_or_else(|| Error::Contract(format!("leaf `{}` has no value", g.name(leaf))))?;
    let analytic: Vec<f64> = match grads.get(leaf) {
        Some(t) => t.data().iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; base.numel()],
    };

    let mut numeric = Vec::with_capacity(base.numel());
    let eval = |g: &mut Graph<T>, i: usize, delta: f64| -> Result<f64> {
        let mut t = base.clone();
        let v = &mut t.data_mut()[i];
        *v = T::of(v.as_f64() + delta);
        g.set_value(leaf, t)?;
        g.forward()?;
        Ok(g.value(loss).expect("evaluated").data()[0].as_f64())
    };
    for i in 0..base.numel() {
        let plus = eval(g, i, eps);
        let minus = plus.and_then(|p| eval(g, i, -eps).map(|m| (p, m)));
        match minus {
            Ok((p, m)) => numeric.push((p - m) / (2.0 * eps)),
            Err(e) => {
                g.set_value(leaf, base)?;
                return Err(e);
            }
        }
    }
    g.set_value(leaf, base)?;
    g.forward()?;

    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}
