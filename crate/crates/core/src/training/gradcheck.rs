use crate::error::Result;
use crate::transformer::ModelWeights;

use super::backward::{backward, forward_logits};
use super::loss::Objective;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where it occurs.
    pub worst: (String, usize),
    /// Analytic and numeric values at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Checks every parameter of `model` against central differences with step
/// `h`. Gradients smaller than `floor` are compared in absolute terms.
pub fn gradient_check(
    model: &ModelWeights<f64>,
    batch: &[Vec<u32>],
    objective: &Objective<'_, f64>,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let (_, grads) = backward(model, batch, objective)?;
    let loss = |m: &ModelWeights<f64>| -> Result<f64> {
        let logits = forward_logits(m, batch)?;
        Ok(objective.loss_and_grad(&logits)?.0)
    };
    let names = model.param_names();
    let mut probe = model.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (p, name) in names.iter().enumerate() {
        let analytic = grads.tensors()[p].data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.params_mut()[p].data_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (name.clone(), i);
                report.worst_values = (a, numeric);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
