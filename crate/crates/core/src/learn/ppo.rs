//! PPO building blocks as pure functions: generalized advantage estimation,
//! the clipped surrogate, Gaussian log-probabilities, the distillation loss,
//! and global gradient-norm clipping.

use nalgebra::DMatrix;

/// Generalized advantage estimation over one environment's trajectory.
///
/// `bootstrap_value` is the value of the state after the last step and is
/// ignored (treated as zero) when that step terminated. Returns
/// (advantages, returns) with returns = advantages + values.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_value * mask - values[t];
        acc = delta + gamma * lambda * mask * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Per-sample clipped surrogate objective
/// min(ratio * adv, clamp(ratio, 1-eps, 1+eps) * adv).
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    unclipped.min(clipped)
}

/// Derivative of the clipped surrogate with respect to the new log-prob:
/// ratio * advantage where the unclipped branch is active, zero otherwise.
pub fn clipped_objective_grad_logp(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Diagonal-Gaussian log-density of `action` under (mean, log_std).
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;
    log_std.iter().map(|ls| ls + HALF_LN_2PI_E).sum()
}

/// Mean squared action difference between the student means and the teacher
/// actions, plus its gradient with respect to the student means. Gradients
/// never flow into the teacher.
pub fn distill_loss(student_mean: &DMatrix<f64>, teacher: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    assert_eq!(student_mean.shape(), teacher.shape());
    let n = (student_mean.nrows() * student_mean.ncols()) as f64;
    let diff = student_mean - teacher;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.map(|d| 2.0 * d / n);
    (loss, grad)
}

/// Scales the gradient vector so its global L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
