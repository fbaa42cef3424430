//! Central finite-difference gradient checking.

use super::{NodeId, ParamStore, Tape, Tensor};
use crate::error::Result;

/// Worst relative error observed by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `eps`, perturbing every element of every input.
///
/// Relative error is measured per input tensor as
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-12)`.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let vars: Vec<NodeId> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss, &mut ParamStore::new())?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<NodeId> = perturbed.iter().map(|x| t.input(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        t.value(l).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let rel = relative_error(analytic.data(), &numeric);
        if rel > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: rel,
                worst_input: i,
            };
        }
    }
    Ok(report)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}
