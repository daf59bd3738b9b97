//! Central-difference gradient checking.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences, one scalar parameter at a time, and returns the worst
/// relative error `|analytic - numeric| / max(1, |analytic|)`.
///
/// `build` receives a fresh tape and one leaf per entry of `params` and must
/// return a `1 x 1` loss node.
pub fn grad_check<F>(build: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::Usage("grad_check: step must be positive".into()));
    }

    let eval = |theta: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = theta.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| tape.grad(id).clone()).collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            let rel = libm::fabs(a - numeric) / libm::fabs(a).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
