//! Composite training reward: exponential imitation terms, an adversarial
//! motion-prior style term, and an acceleration-based energy penalty.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::humanoid::{geodesic_angle, JointState, MotionTrack};
use crate::observe::amp_features;
use crate::simulator::Proprioception;
use crate::Result;

/// Weights for the composite reward and the imitation terms.
///
/// `w` are the imitation mixture weights (position, rotation, velocity,
/// angular velocity) and must sum to 1; `lambda` are the matching sharpness
/// coefficients. `alpha` mixes (pose, amp, energy) into the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: [f64; 3],
    pub w: [f64; 4],
    pub lambda: [f64; 4],
    pub energy_coef: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: [0.6, 0.3, 0.1],
            w: [0.5, 0.3, 0.1, 0.1],
            lambda: [100.0, 10.0, 0.1, 0.1],
            energy_coef: 3e-5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| *a < 0.0)
            || self.w.iter().any(|w| *w < 0.0)
            || self.lambda.iter().any(|l| *l < 0.0)
            || self.energy_coef < 0.0
        {
            return Err(Error::config("reward", "weights must be non-negative"));
        }
        let sum: f64 = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("w", format!("must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Per-term reward values; `total` is exactly the alpha-weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_pose: f64,
    pub r_amp: f64,
    pub r_energy: f64,
    pub total: f64,
}

/// Borrowed reference-frame quantities for reward evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RefFrame<'a> {
    pub rotations: &'a [UnitQuaternion<f64>],
    pub positions: &'a [Vector3<f64>],
    pub velocities: &'a [Vector3<f64>],
    pub angular_velocities: &'a [Vector3<f64>],
}

impl<'a> RefFrame<'a> {
    pub fn from_track(track: &'a MotionTrack, frame: usize) -> Self {
        RefFrame {
            rotations: &track.rotations[frame],
            positions: &track.positions[frame],
            velocities: &track.velocities[frame],
            angular_velocities: &track.angular_velocities[frame],
        }
    }
}

fn stacked_norm(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Imitation reward: four exponential terms on position (stacked norm),
/// rotation (geodesic angle summed over joints), velocity and angular
/// velocity errors. Equals the sum of weights iff all errors are zero.
pub fn pose_reward(sim: &dyn JointState, reference: &RefFrame, cfg: &RewardConfig) -> f64 {
    let pos_err = stacked_norm(sim.positions(), reference.positions);
    let rot_err: f64 = sim
        .rotations()
        .iter()
        .zip(reference.rotations)
        .map(|(a, b)| geodesic_angle(a, b))
        .sum();
    let vel_err = stacked_norm(sim.velocities(), reference.velocities);
    let ang_err = stacked_norm(sim.angular_velocities(), reference.angular_velocities);
    cfg.w[0] * (-cfg.lambda[0] * pos_err).exp()
        + cfg.w[1] * (-cfg.lambda[1] * rot_err).exp()
        + cfg.w[2] * (-cfg.lambda[2] * vel_err).exp()
        + cfg.w[3] * (-cfg.lambda[3] * ang_err).exp()
}

/// Smoothness penalty: negative mean squared joint angular acceleration,
/// scaled by the energy coefficient. Always <= 0. The action pair is part of
/// the transition context but the penalty itself is acceleration-based.
pub fn energy_reward(
    _prev_action: &[f64],
    _action: &[f64],
    joint_accels: &[Vector3<f64>],
    cfg: &RewardConfig,
) -> f64 {
    if joint_accels.is_empty() {
        return 0.0;
    }
    let mean_sq = joint_accels.iter().map(|a| a.norm_squared()).sum::<f64>()
        / joint_accels.len() as f64;
    -cfg.energy_coef * mean_sq
}

const AMP_REWARD_MAX: f64 = 5.0;

/// Style reward from a discriminator logit over a proprioception window:
/// r = -log(max(1 - sigmoid(logit), eps)), clipped to [0, 5]. Higher when
/// the discriminator judges the motion real.
pub fn amp_reward<D: Fn(&[f64]) -> f64>(window_features: &[f64], discriminator: D) -> f64 {
    amp_reward_from_logit(discriminator(window_features))
}

pub fn amp_reward_from_logit(logit: f64) -> f64 {
    let d = 1.0 / (1.0 + (-logit).exp());
    (-(1.0 - d).max(1e-12).ln()).clamp(0.0, AMP_REWARD_MAX)
}

/// Flattens the last `window_len` proprioception frames into discriminator
/// features, repeating the oldest frame when the episode is younger than the
/// window.
pub fn amp_window_features(
    history: &std::collections::VecDeque<Proprioception>,
    window_len: usize,
) -> Vec<f64> {
    assert!(!history.is_empty(), "history must hold the current frame");
    let mut out = Vec::new();
    let n = history.len();
    for i in 0..window_len {
        // Left-pad with the oldest frame.
        let idx = (n + i).saturating_sub(window_len).min(n - 1);
        out.extend(amp_features(&history[idx]));
    }
    out
}

/// Full composite reward for one transition.
#[allow(clippy::too_many_arguments)]
pub fn composite<D: Fn(&[f64]) -> f64>(
    sim: &dyn JointState,
    reference: &RefFrame,
    window_features: &[f64],
    discriminator: D,
    prev_action: &[f64],
    action: &[f64],
    joint_accels: &[Vector3<f64>],
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let r_pose = pose_reward(sim, reference, cfg);
    let r_amp = amp_reward(window_features, discriminator);
    let r_energy = energy_reward(prev_action, action, joint_accels, cfg);
    RewardBreakdown {
        r_pose,
        r_amp,
        r_energy,
        total: cfg.alpha[0] * r_pose + cfg.alpha[1] * r_amp + cfg.alpha[2] * r_energy,
    }
}
