//! Rollout-time policy snapshot: assembles teacher or student observations
//! from an environment, samples actions, and scores transitions with the
//! composite reward.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{displacement_set, Keypoint2DSet};
use crate::humanoid::{build_reference_goal, rotation_difference};
use crate::observe::{
    amp_features, augment, student_observation, synth_local_features, teacher_observation,
    AugmentConfig, GlobalCue, GoalFeatures, ObsVariant,
};
use crate::rewards::{
    amp_reward_from_logit, composite, pose_reward, RefFrame, RewardBreakdown, RewardConfig,
};
use crate::simulator::{Action, Env, RewardSignal, RolloutAgent};

use super::net::{Mlp, PolicyNet};
use super::ppo::gaussian_log_prob;

/// How goal information reaches the policy.
#[derive(Debug, Clone)]
pub enum GoalMode {
    /// Privileged reference tuple (the teacher's input).
    Teacher,
    /// Synthetic visual features plus the selected global cue.
    Student {
        variant: ObsVariant,
        /// Gaussian noise on the local feature vector.
        feature_noise: f64,
        /// Rotation noise (rad) on the predicted next root orientation.
        tau_noise: f64,
        /// Positional noise (m) on the explicit root estimate
        /// (plus-3d-root variant only).
        root_noise: f64,
        augment: AugmentConfig,
    },
}

/// Immutable policy/value/discriminator snapshot used during collection.
pub struct Agent<'a> {
    pub policy: &'a PolicyNet,
    pub value: &'a Mlp,
    /// Discriminator for the style reward; absent when alpha_amp is zero.
    pub discriminator: Option<&'a Mlp>,
    /// Teacher policy queried on teacher observations for distillation.
    pub teacher: Option<&'a PolicyNet>,
    pub reward_cfg: &'a RewardConfig,
    pub goal: GoalMode,
    pub amp_window: usize,
    /// Deterministic mean actions (evaluation mode).
    pub deterministic: bool,
}

impl<'a> Agent<'a> {
    fn teacher_obs(env: &Env) -> Vec<f64> {
        let goal = build_reference_goal(env.track(), &env.proprio, env.frame)
            .expect("rollout keeps frame in range");
        teacher_observation(&env.proprio, &goal)
    }

    fn student_obs(&self, env: &mut Env) -> Vec<f64> {
        let GoalMode::Student {
            variant,
            feature_noise,
            tau_noise,
            root_noise,
            augment: aug,
        } = &self.goal
        else {
            unreachable!("student_obs called in teacher mode");
        };
        let next = env.frame + 1;
        let track = env.pool[env.bundle_idx].track.clone();

        let mut features =
            synth_local_features(&track, next, *feature_noise, &mut env.rng).expect("frame valid");
        if aug.feature_dropout > 0.0 && env.rng.gen::<f64>() < aug.feature_dropout {
            features.iter_mut().for_each(|v| *v = 0.0);
        }

        let tau_hat = track.rotations[next][0];
        let tau_pred = if *tau_noise > 0.0 {
            let axis = Vector3::new(
                StandardNormal.sample(&mut env.rng),
                StandardNormal.sample(&mut env.rng),
                StandardNormal.sample(&mut env.rng),
            );
            UnitQuaternion::from_scaled_axis(axis * *tau_noise) * tau_hat
        } else {
            tau_hat
        };
        let delta_tau = rotation_difference(&env.proprio.rotations[0], &tau_pred);

        let global = match variant {
            ObsVariant::ImgfeatOnly => GlobalCue::None,
            ObsVariant::Plus3dRoot => {
                let noise = Vector3::new(
                    StandardNormal.sample(&mut env.rng),
                    StandardNormal.sample(&mut env.rng),
                    StandardNormal.sample(&mut env.rng),
                ) * *root_noise;
                let target = track.positions[next][0] + noise;
                GlobalCue::RootDisplacement(target - env.proprio.positions[0])
            }
            ObsVariant::PlusPixelray => {
                let bundle = env.pool[env.bundle_idx].clone();
                let j = track.spec.joint_count();
                match (&bundle.keypoints, &bundle.cameras) {
                    (Some(kps), Some(cams)) => {
                        let kp = augment(&kps[next], aug, &mut env.rng);
                        let (cam, c2w) = &cams[next];
                        let set =
                            displacement_set(&env.proprio.positions, &kp, cam, c2w, bundle.scale)
                                .expect("joint counts match");
                        GlobalCue::Rays {
                            displacements: set.displacements,
                            confidence: set.confidence,
                        }
                    }
                    // Motion-only sample: fully masked keypoint block.
                    _ => {
                        let masked = Keypoint2DSet::all_masked(j);
                        GlobalCue::Rays {
                            displacements: vec![Vector3::zeros(); masked.len()],
                            confidence: vec![0.0; masked.len()],
                        }
                    }
                }
            }
        };
        student_observation(
            &env.proprio,
            &GoalFeatures {
                features,
                delta_tau,
                global,
            },
        )
    }
}

impl<'a> RolloutAgent for Agent<'a> {
    fn observe(&self, env: &mut Env) -> Vec<f64> {
        match self.goal {
            GoalMode::Teacher => Self::teacher_obs(env),
            GoalMode::Student { .. } => self.student_obs(env),
        }
    }

    fn decide(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64) {
        let mean = self.policy.mlp.forward(obs);
        let action: Vec<f64> = if self.deterministic {
            mean.clone()
        } else {
            mean.iter()
                .zip(&self.policy.log_std)
                .map(|(m, ls)| {
                    let eps: f64 = StandardNormal.sample(rng);
                    m + ls.exp() * eps
                })
                .collect()
        };
        let log_prob = gaussian_log_prob(&action, &mean, &self.policy.log_std);
        let value = self.value.forward(obs)[0];
        (action, log_prob, value)
    }

    fn value(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs)[0]
    }

    fn teacher_action(&self, env: &Env) -> Option<Vec<f64>> {
        self.teacher
            .map(|t| t.mlp.forward(&Self::teacher_obs(env)))
    }

    fn reward(&self, env: &Env, action: &Action) -> RewardSignal {
        let reference = RefFrame::from_track(env.track(), env.frame);
        let accels = env.joint_accelerations();
        let flat_action: Vec<f64> = action
            .offsets
            .iter()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect();
        let breakdown: RewardBreakdown = match self.discriminator {
            Some(disc) => {
                let window = crate::rewards::amp_window_features(&env.history, self.amp_window);
                let b = composite(
                    &env.proprio,
                    &reference,
                    &window,
                    |w| disc.forward(w)[0],
                    &flat_action,
                    &flat_action,
                    &accels,
                    self.reward_cfg,
                );
                return RewardSignal {
                    total: b.total,
                    breakdown: [b.r_pose, b.r_amp, b.r_energy],
                    amp_window: Some(window),
                };
            }
            None => {
                let r_pose = pose_reward(&env.proprio, &reference, self.reward_cfg);
                let r_amp = amp_reward_from_logit(0.0);
                let r_energy = crate::rewards::energy_reward(
                    &flat_action,
                    &flat_action,
                    &accels,
                    self.reward_cfg,
                );
                RewardBreakdown {
                    r_pose,
                    r_amp,
                    r_energy,
                    total: self.reward_cfg.alpha[0] * r_pose
                        + self.reward_cfg.alpha[1] * r_amp
                        + self.reward_cfg.alpha[2] * r_energy,
                }
            }
        };
        RewardSignal {
            total: breakdown.total,
            breakdown: [breakdown.r_pose, breakdown.r_amp, breakdown.r_energy],
            amp_window: None,
        }
    }
}

/// Heading-invariant discriminator features for every full window of a
/// reference track; the "real" pool for discriminator training.
pub fn real_windows_from_track(
    track: &crate::humanoid::MotionTrack,
    window: usize,
) -> Vec<Vec<f64>> {
    let n = track.len();
    if n < window {
        return Vec::new();
    }
    let frame_feats: Vec<Vec<f64>> = (0..n)
        .map(|f| {
            let state = crate::simulator::Proprioception {
                rotations: track.rotations[f].clone(),
                positions: track.positions[f].clone(),
                velocities: track.velocities[f].clone(),
                angular_velocities: track.angular_velocities[f].clone(),
            };
            amp_features(&state)
        })
        .collect();
    (0..=n - window)
        .map(|start| {
            let mut w = Vec::with_capacity(window * frame_feats[0].len());
            for feats in &frame_feats[start..start + window] {
                w.extend_from_slice(feats);
            }
            w
        })
        .collect()
}

/// Rolls the policy out over one full sequence from frame 0, with
/// deterministic mean actions and no mid-episode resets (a fallen humanoid
/// keeps being simulated; the clip protocol handles failures). Returns the
/// simulated joint positions per frame and the simulated motion in
/// reference-motion form for replay dumps.
pub fn eval_trajectory(
    model: &std::sync::Arc<crate::simulator::SimModel>,
    bundle: &std::sync::Arc<crate::simulator::MotionBundle>,
    agent: &Agent,
    seed: u64,
) -> (
    crate::metrics::JointTrajectory,
    Vec<crate::humanoid::MotionFrame>,
) {
    use rand::SeedableRng;
    let mut env = crate::simulator::Env::new(
        model.clone(),
        std::sync::Arc::new(vec![bundle.clone()]),
        ChaCha8Rng::seed_from_u64(seed),
        agent.amp_window,
    )
    .expect("bundle is valid");
    env.fixed_start = Some(0);
    env.reset_to(0, 0);

    let frames = bundle.track.len();
    let mut positions = Vec::with_capacity(frames);
    let mut motion = Vec::with_capacity(frames);
    let record = |env: &crate::simulator::Env,
                  positions: &mut crate::metrics::JointTrajectory,
                  motion: &mut Vec<crate::humanoid::MotionFrame>| {
        positions.push(env.proprio.positions.clone());
        motion.push(crate::humanoid::MotionFrame {
            root_translation: env.proprio.positions[0],
            root_orientation: env.proprio.rotations[0],
            joint_rotations: env.proprio.rotations[1..].to_vec(),
        });
    };
    record(&env, &mut positions, &mut motion);
    for _ in 0..frames - 1 {
        let obs = agent.observe(&mut env);
        let (action_flat, _, _) = agent.decide(&obs, &mut env.rng);
        let action = Action::from_flat(&action_flat, env.model.cfg.action_bound);
        let outcome = env.step(&action);
        if outcome.diverged {
            // Freeze the last valid pose for the remaining frames.
            while positions.len() < frames {
                positions.push(positions.last().unwrap().clone());
                motion.push(motion.last().unwrap().clone());
            }
            break;
        }
        record(&env, &mut positions, &mut motion);
    }
    (positions, motion)
}
