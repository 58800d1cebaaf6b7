//! Finite-difference verification of the analytic BPTT gradient.

use super::{loss_and_gradient, LstmModel, LstmParams};
use crate::dataset::{Frame, InputWindow};

/// Max over all parameters of `|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8)`,
/// where `g_fd` is the central difference of the squared-error loss.
pub fn gradient_check(model: &LstmModel, window: &InputWindow, target: f64, epsilon: f64) -> f64 {
    gradient_check_with(model, &window.frames, target, epsilon, |m, f, t| loss_and_gradient(m, f, t).1)
}

/// As [`gradient_check`] but with a caller-supplied analytic gradient.
pub fn gradient_check_with<G>(model: &LstmModel, frames: &[Frame], target: f64, epsilon: f64, analytic: G) -> f64
where
    G: Fn(&LstmModel, &[Frame], f64) -> LstmParams,
{
    let grad = analytic(model, frames, target).to_vec();
    let base = model.params.to_vec();
    let mut probe = model.clone();
    let mut flat = base.clone();
    let loss_at = |probe: &mut LstmModel, flat: &[f64]| {
        probe.params.copy_from_slice(flat);
        let e = probe.run(frames) - target;
        e * e
    };

    let mut worst = 0.0f64;
    for k in 0..base.len() {
        flat[k] = base[k] + epsilon;
        let up = loss_at(&mut probe, &flat);
        flat[k] = base[k] - epsilon;
        let down = loss_at(&mut probe, &flat);
        flat[k] = base[k];
        let fd = (up - down) / (2.0 * epsilon);
        let a = grad[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
