use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::train::LossMaskMode;
use super::LmExample;
use crate::error::Result;

/// Gradient magnitudes below this are compared in absolute terms: central
/// differences carry roughly `1e-16 * |loss| / eps` of rounding noise.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    /// Parameter where the maximum occurred, as `(tensor name, flat index)`.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Compares the analytic gradient of the mean batch loss with central
/// differences `(L(p + eps) - L(p - eps)) / 2 eps`, on up to
/// `samples_per_tensor` entries of every parameter tensor chosen with `seed`.
pub fn gradient_check<M: Model>(
    model: &M,
    batch: &[&LmExample],
    mode: LossMaskMode,
    epsilon: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, _, grads) = model.loss_and_grad(batch, mode)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, v, _)| (n, v.to_vec()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in picks {
            let orig = probe.tensors_mut()[ti][i];
            probe.tensors_mut()[ti][i] = orig + epsilon;
            let (plus, _, _) = probe.loss_and_grad(batch, mode)?;
            probe.tensors_mut()[ti][i] = orig - epsilon;
            let (minus, _, _) = probe.loss_and_grad(batch, mode)?;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (name.clone(), i);
            }
        }
    }
    Ok(report)
}
