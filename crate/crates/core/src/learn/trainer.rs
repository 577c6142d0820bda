//! The training loop: rollout collection, the joint PPO + distillation
//! update, discriminator updates, and the teacher/student entry points.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::observe::{amp_feature_dim, feature_dim, student_layout, teacher_layout, ObsLayout};
use crate::rewards::RewardConfig;
use crate::simulator::{batch_rollout, Env, EnvRollout, MotionBundle, SimModel};
use crate::Result;

use super::agent::{real_windows_from_track, Agent, GoalMode};
use super::net::{Mlp, Optimizer, PolicyNet};
use super::ppo::{
    clip_global_norm, clipped_objective, clipped_objective_grad_logp, distill_loss,
    gae_advantages, gaussian_entropy, gaussian_log_prob,
};
use super::TrainConfig;

/// Which gradient sources drive the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    PpoOnly,
    DistillOnly,
    PpoDistill,
}

impl Strategy {
    pub fn uses_ppo(&self) -> bool {
        matches!(self, Strategy::PpoOnly | Strategy::PpoDistill)
    }

    pub fn uses_distill(&self) -> bool {
        matches!(self, Strategy::DistillOnly | Strategy::PpoDistill)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::PpoOnly => "ppo-only",
            Strategy::DistillOnly => "distill-only",
            Strategy::PpoDistill => "ppo-distill",
        }
    }
}

/// Everything needed to construct a [`Trainer`].
pub struct TrainerSetup {
    pub model: Arc<SimModel>,
    pub pool: Arc<Vec<Arc<MotionBundle>>>,
    pub env_count: usize,
    pub horizon: usize,
    pub seed: u64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub goal: GoalMode,
    pub strategy: Strategy,
    pub teacher: Option<PolicyNet>,
}

/// Per-iteration training statistics, streamed to the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationStats {
    pub step: u64,
    pub mean_reward: f64,
    pub r_pose: f64,
    pub r_amp: f64,
    pub r_energy: f64,
    pub l_ppo: f64,
    pub l_distill: f64,
    pub grad_norm: f64,
    pub post_clip_norm: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub ratio_dev_first: f64,
    pub log_std_mean: f64,
    pub incidents: u64,
    pub episode_terminations: u64,
}

/// Flattened rollout batch ready for minibatch updates.
pub struct FlatBatch {
    pub obs: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub teacher_actions: Option<DMatrix<f64>>,
    pub amp_windows: Vec<Vec<f64>>,
    pub mean_reward: f64,
    pub breakdown_means: [f64; 3],
    pub terminations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainOutcome {
    ReachedThreshold,
    BudgetExhausted,
    Completed,
}

/// Result of a training run: final networks, the per-iteration statistics,
/// and how the run ended.
pub struct TrainRun {
    pub policy: PolicyNet,
    pub value: Mlp,
    pub discriminator: Option<Mlp>,
    pub stats: Vec<IterationStats>,
    pub outcome: TrainOutcome,
    pub layout: ObsLayout,
    pub env_steps: u64,
}

fn mix_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Policy loss and gradients over one minibatch: the clipped PPO surrogate
/// (when `use_ppo`), the distillation term (when teacher actions are given),
/// and the entropy bonus. Returns (l_ppo, l_distill, flat gradients with the
/// log-std block appended).
#[allow(clippy::too_many_arguments)]
pub fn policy_minibatch_grads(
    policy: &PolicyNet,
    obs: &DMatrix<f64>,
    actions: &DMatrix<f64>,
    logp_old: &[f64],
    advantages: &[f64],
    teacher: Option<&DMatrix<f64>>,
    cfg: &TrainConfig,
    use_ppo: bool,
) -> (f64, f64, Vec<f64>) {
    let m = obs.nrows();
    let act_dim = policy.action_dim();
    let sigma_sq: Vec<f64> = policy.log_std.iter().map(|ls| (2.0 * ls).exp()).collect();

    let (mean, cache) = policy.mlp.forward_cached(obs);
    let mut grad_mean = DMatrix::zeros(m, act_dim);
    let mut grad_log_std = vec![0.0; act_dim];
    let mut l_ppo = 0.0;
    let mut l_distill = 0.0;

    if use_ppo {
        for r in 0..m {
            let mean_row: Vec<f64> = mean.row(r).iter().copied().collect();
            let act_row: Vec<f64> = actions.row(r).iter().copied().collect();
            let logp_new = gaussian_log_prob(&act_row, &mean_row, &policy.log_std);
            let ratio = (logp_new - logp_old[r]).exp();
            let adv = advantages[r];
            l_ppo -= clipped_objective(ratio, adv, cfg.clip_eps);
            let g_logp = -clipped_objective_grad_logp(ratio, adv, cfg.clip_eps) / m as f64;
            for d in 0..act_dim {
                let z = act_row[d] - mean_row[d];
                grad_mean[(r, d)] += g_logp * z / sigma_sq[d];
                grad_log_std[d] += g_logp * (z * z / sigma_sq[d] - 1.0);
            }
        }
        l_ppo /= m as f64;
        if cfg.entropy_coef > 0.0 {
            for g in grad_log_std.iter_mut() {
                *g -= cfg.entropy_coef;
            }
        }
    }

    if let Some(teach) = teacher {
        let (l_d, g_d) = distill_loss(&mean, teach);
        l_distill = l_d;
        grad_mean += g_d * cfg.distill_weight;
    }

    let (grads, _) = policy.mlp.backward(&cache, &grad_mean);
    let mut flat = grads.flatten();
    flat.extend_from_slice(&grad_log_std);
    (l_ppo, l_distill, flat)
}

pub struct Trainer {
    pub model: Arc<SimModel>,
    pub envs: Vec<Env>,
    pub policy: PolicyNet,
    pub value: Mlp,
    pub discriminator: Option<Mlp>,
    pub teacher: Option<PolicyNet>,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub goal: GoalMode,
    pub strategy: Strategy,
    pub layout: ObsLayout,
    pub horizon: usize,
    opt_policy: Optimizer,
    opt_value: Optimizer,
    opt_disc: Optimizer,
    rng: ChaCha8Rng,
    real_windows: Vec<Vec<f64>>,
    pub env_steps: u64,
    pub incidents: u64,
    pub stats: Vec<IterationStats>,
}

impl Trainer {
    pub fn new(setup: TrainerSetup) -> Result<Self> {
        setup.train.validate()?;
        setup.reward.validate()?;
        if setup.pool.is_empty() {
            return Err(Error::config("corpus", "no reference motions loaded"));
        }
        if setup.strategy.uses_distill() && setup.teacher.is_none() {
            return Err(Error::config(
                "teacher",
                "distillation strategies require a teacher checkpoint",
            ));
        }
        let j = setup.model.spec.joint_count();
        let layout = match &setup.goal {
            GoalMode::Teacher => teacher_layout(j),
            GoalMode::Student { variant, .. } => student_layout(j, feature_dim(j), *variant),
        };
        let obs_dim = layout.total();
        let act_dim = 3 * (j - 1);

        if let Some(t) = &setup.teacher {
            let expected = teacher_layout(j).total();
            if t.mlp.input_dim() != expected {
                return Err(Error::structural(format!(
                    "teacher expects obs dim {}, teacher layout is {expected}",
                    t.mlp.input_dim()
                )));
            }
        }

        let mut net_rng = ChaCha8Rng::seed_from_u64(mix_seed(setup.seed, 1));
        let mut policy_dims = vec![obs_dim];
        policy_dims.extend(&setup.policy_hidden);
        policy_dims.push(act_dim);
        let policy = PolicyNet::new(&policy_dims, setup.train.log_std_init, &mut net_rng);

        let mut value_dims = vec![obs_dim];
        value_dims.extend(&setup.value_hidden);
        value_dims.push(1);
        let value = Mlp::new(&value_dims, &mut net_rng);

        let needs_disc = setup.reward.alpha[1] > 0.0;
        let window_dim = setup.train.amp_window * amp_feature_dim(j);
        let discriminator = if needs_disc {
            let mut dims = vec![window_dim];
            dims.extend(&setup.disc_hidden);
            dims.push(1);
            Some(Mlp::new(&dims, &mut net_rng))
        } else {
            None
        };

        let envs: Vec<Env> = (0..setup.env_count.max(1))
            .map(|i| {
                let mut env = Env::new(
                    setup.model.clone(),
                    setup.pool.clone(),
                    ChaCha8Rng::seed_from_u64(mix_seed(setup.seed, 100 + i as u64)),
                    setup.train.amp_window,
                )?;
                env.reset();
                Ok(env)
            })
            .collect::<Result<_>>()?;

        // Real windows for the discriminator, deterministically capped.
        let mut real_windows = Vec::new();
        if needs_disc {
            for bundle in setup.pool.iter() {
                real_windows.extend(real_windows_from_track(&bundle.track, setup.train.amp_window));
            }
            const CAP: usize = 4096;
            if real_windows.len() > CAP {
                let stride = real_windows.len() / CAP + 1;
                real_windows = real_windows
                    .into_iter()
                    .step_by(stride)
                    .collect();
            }
        }

        let opt_policy = Optimizer::new(
            setup.train.optimizer,
            setup.train.policy_lr,
            policy.mlp.param_count() + act_dim,
        );
        let opt_value = Optimizer::new(setup.train.optimizer, setup.train.value_lr, value.param_count());
        let opt_disc = Optimizer::new(
            setup.train.optimizer,
            setup.train.disc_lr,
            discriminator.as_ref().map_or(1, |d| d.param_count()),
        );

        Ok(Trainer {
            model: setup.model,
            envs,
            policy,
            value,
            discriminator,
            teacher: setup.teacher,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(setup.seed, 2)),
            real_windows,
            train: setup.train,
            reward: setup.reward,
            goal: setup.goal,
            strategy: setup.strategy,
            layout,
            horizon: setup.horizon,
            opt_policy,
            opt_value,
            opt_disc,
            env_steps: 0,
            incidents: 0,
            stats: Vec::new(),
        })
    }

    /// Collects one batch of rollouts against the current parameter
    /// snapshot.
    pub fn collect(&mut self) -> Vec<EnvRollout> {
        let Trainer {
            envs,
            policy,
            value,
            discriminator,
            teacher,
            reward,
            goal,
            train,
            strategy,
            horizon,
            ..
        } = self;
        let agent = Agent {
            policy: &*policy,
            value: &*value,
            discriminator: discriminator.as_ref(),
            teacher: if strategy.uses_distill() {
                teacher.as_ref()
            } else {
                None
            },
            reward_cfg: &*reward,
            goal: goal.clone(),
            amp_window: train.amp_window,
            deterministic: false,
        };
        batch_rollout(envs, &agent, *horizon)
    }

    /// Flattens per-env rollouts into one batch with GAE advantages.
    pub fn flatten(&self, rollouts: &[EnvRollout]) -> FlatBatch {
        let total: usize = rollouts.iter().map(|r| r.steps.len()).sum();
        let obs_dim = self.layout.total();
        let act_dim = self.policy.action_dim();
        let mut obs = DMatrix::zeros(total, obs_dim);
        let mut actions = DMatrix::zeros(total, act_dim);
        let mut log_probs = Vec::with_capacity(total);
        let mut advantages = Vec::with_capacity(total);
        let mut returns = Vec::with_capacity(total);
        let mut teacher_rows: Vec<Option<&[f64]>> = Vec::with_capacity(total);
        let mut amp_windows = Vec::new();
        let mut reward_sum = 0.0;
        let mut breakdown = [0.0; 3];
        let mut terminations = 0u64;

        let mut row = 0;
        for r in rollouts {
            let rewards: Vec<f64> = r.steps.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = r.steps.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = r.steps.iter().map(|s| s.done).collect();
            let (adv, ret) = gae_advantages(
                &rewards,
                &values,
                &dones,
                r.bootstrap_value,
                self.train.gamma,
                self.train.gae_lambda,
            );
            advantages.extend(adv);
            returns.extend(ret);
            for s in &r.steps {
                obs.row_mut(row).copy_from_slice(&s.obs);
                actions.row_mut(row).copy_from_slice(&s.action);
                log_probs.push(s.log_prob);
                teacher_rows.push(s.teacher_action.as_deref());
                if let Some(w) = &s.amp_window {
                    amp_windows.push(w.clone());
                }
                reward_sum += s.reward;
                for (acc, b) in breakdown.iter_mut().zip(&s.reward_breakdown) {
                    *acc += b;
                }
                terminations += s.done as u64;
                row += 1;
            }
        }
        let teacher_actions = if teacher_rows.iter().all(|t| t.is_some()) && total > 0 {
            let mut m = DMatrix::zeros(total, act_dim);
            for (i, t) in teacher_rows.iter().enumerate() {
                m.row_mut(i).copy_from_slice(t.unwrap());
            }
            Some(m)
        } else {
            None
        };
        let n = total.max(1) as f64;
        FlatBatch {
            obs,
            actions,
            log_probs,
            advantages,
            returns,
            teacher_actions,
            amp_windows,
            mean_reward: reward_sum / n,
            breakdown_means: [breakdown[0] / n, breakdown[1] / n, breakdown[2] / n],
            terminations,
        }
    }

    /// One joint policy/value/discriminator update over a flattened batch.
    pub fn update_batch(&mut self, batch: &FlatBatch) -> IterationStats {
        let n = batch.obs.nrows();
        let act_dim = self.policy.action_dim();
        let use_ppo = self.strategy.uses_ppo();
        let use_distill = self.strategy.uses_distill() && batch.teacher_actions.is_some();

        // Advantage normalization (batch-wide).
        let mut advantages = batch.advantages.clone();
        if use_ppo && n > 1 {
            let mean = advantages.iter().sum::<f64>() / n as f64;
            let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
            let std = var.sqrt().max(1e-8);
            for a in &mut advantages {
                *a = (*a - mean) / std;
            }
        }

        // Ratio sanity on the fresh batch: before any update, the
        // re-evaluated policy must reproduce the collection-time log-probs.
        let mut ratio_dev_first: f64 = 0.0;
        if use_ppo && n > 0 {
            let mean_all = self.policy.mlp.forward_batch(&batch.obs);
            for i in 0..n {
                let mean_row: Vec<f64> = mean_all.row(i).iter().copied().collect();
                let act_row: Vec<f64> = batch.actions.row(i).iter().copied().collect();
                let logp = gaussian_log_prob(&act_row, &mean_row, &self.policy.log_std);
                ratio_dev_first = ratio_dev_first.max(((logp - batch.log_probs[i]).exp() - 1.0).abs());
            }
        }

        let mut l_ppo_acc = 0.0;
        let mut l_distill_acc = 0.0;
        let mut value_loss_acc = 0.0;
        let mut loss_batches: f64 = 0.0;
        let mut grad_norm_max: f64 = 0.0;
        let mut post_clip_max: f64 = 0.0;

        let mb = self.train.minibatch_size.min(n).max(1);
        let mut kl_stop = false;
        for _epoch in 0..self.train.epochs {
            if kl_stop {
                break;
            }
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..idx.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            for chunk in idx.chunks(mb) {
                let m = chunk.len();
                let obs_mb = DMatrix::from_fn(m, batch.obs.ncols(), |r, c| batch.obs[(chunk[r], c)]);
                let act_mb = DMatrix::from_fn(m, act_dim, |r, c| batch.actions[(chunk[r], c)]);
                let logp_old: Vec<f64> = chunk.iter().map(|&i| batch.log_probs[i]).collect();
                let adv_mb: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let teach_mb = batch.teacher_actions.as_ref().map(|t| {
                    DMatrix::from_fn(m, act_dim, |r, c| t[(chunk[r], c)])
                });

                let (l_ppo_mb, l_distill_mb, mut flat) = policy_minibatch_grads(
                    &self.policy,
                    &obs_mb,
                    &act_mb,
                    &logp_old,
                    &adv_mb,
                    teach_mb.as_ref().filter(|_| use_distill),
                    &self.train,
                    use_ppo,
                );

                let loss_total = l_ppo_mb + self.train.distill_weight * l_distill_mb;
                if !loss_total.is_finite() || flat.iter().any(|g| !g.is_finite()) {
                    // Abort this update, keep previous parameters.
                    self.incidents += 1;
                } else {
                    let pre = clip_global_norm(&mut flat, self.train.grad_clip);
                    grad_norm_max = grad_norm_max.max(pre);
                    post_clip_max = post_clip_max
                        .max(flat.iter().map(|g| g * g).sum::<f64>().sqrt());
                    let mut params = self.policy.mlp.params_flat();
                    params.extend_from_slice(&self.policy.log_std);
                    self.opt_policy.step(&mut params, &flat);
                    let (net_p, ls_p) = params.split_at(params.len() - act_dim);
                    self.policy.mlp.set_params_flat(net_p);
                    self.policy.log_std.copy_from_slice(ls_p);
                    self.policy
                        .clamp_log_std(self.train.log_std_min, self.train.log_std_max);
                }

                // Value regression toward returns (PPO path only).
                if use_ppo {
                    let (v, vcache) = self.value.forward_cached(&obs_mb);
                    let mut grad_v = DMatrix::zeros(m, 1);
                    let mut l_v = 0.0;
                    for (r, &i) in chunk.iter().enumerate() {
                        let err = v[(r, 0)] - batch.returns[i];
                        l_v += err * err;
                        grad_v[(r, 0)] = 2.0 * err / m as f64;
                    }
                    l_v /= m as f64;
                    let (vgrads, _) = self.value.backward(&vcache, &grad_v);
                    let mut vflat = vgrads.flatten();
                    if l_v.is_finite() && vflat.iter().all(|g| g.is_finite()) {
                        clip_global_norm(&mut vflat, self.train.grad_clip);
                        let mut vparams = self.value.params_flat();
                        self.opt_value.step(&mut vparams, &vflat);
                        self.value.set_params_flat(&vparams);
                        value_loss_acc += l_v;
                    } else {
                        self.incidents += 1;
                    }
                }

                l_ppo_acc += l_ppo_mb;
                l_distill_acc += l_distill_mb;
                loss_batches += 1.0;

                // Approximate KL guard against destructive over-updating.
                if use_ppo && self.train.kl_target > 0.0 {
                    let mean_new = self.policy.mlp.forward_batch(&obs_mb);
                    let mut kl = 0.0;
                    for (r, &i) in chunk.iter().enumerate() {
                        let mr: Vec<f64> = mean_new.row(r).iter().copied().collect();
                        let ar: Vec<f64> = act_mb.row(r).iter().copied().collect();
                        let logp = gaussian_log_prob(&ar, &mr, &self.policy.log_std);
                        let log_ratio = logp - batch.log_probs[i];
                        kl += log_ratio.exp() - 1.0 - log_ratio;
                    }
                    if kl / m as f64 > self.train.kl_target {
                        kl_stop = true;
                        break;
                    }
                }
            }
        }

        // Discriminator on balanced real/fake windows; skipped in
        // distill-only mode where rewards are never differentiated.
        if use_ppo && self.discriminator.is_some() && !batch.amp_windows.is_empty() {
            for _ in 0..self.train.disc_updates {
                self.update_discriminator(&batch.amp_windows);
            }
        }

        let denom = loss_batches.max(1.0);
        let stats = IterationStats {
            step: self.env_steps,
            mean_reward: batch.mean_reward,
            r_pose: batch.breakdown_means[0],
            r_amp: batch.breakdown_means[1],
            r_energy: batch.breakdown_means[2],
            l_ppo: l_ppo_acc / denom,
            l_distill: l_distill_acc / denom,
            grad_norm: grad_norm_max,
            post_clip_norm: post_clip_max,
            value_loss: value_loss_acc / denom,
            entropy: gaussian_entropy(&self.policy.log_std),
            ratio_dev_first,
            log_std_mean: self.policy.log_std.iter().sum::<f64>()
                / self.policy.log_std.len() as f64,
            incidents: self.incidents,
            episode_terminations: batch.terminations,
        };
        self.stats.push(stats.clone());
        stats
    }

    fn update_discriminator(&mut self, fake_pool: &[Vec<f64>]) {
        let Some(disc) = self.discriminator.take() else {
            return;
        };
        let mut disc = disc;
        if self.real_windows.is_empty() || fake_pool.is_empty() {
            self.discriminator = Some(disc);
            return;
        }
        let m = self
            .train
            .disc_minibatch
            .min(self.real_windows.len())
            .min(fake_pool.len())
            .max(1);
        let dim = disc.input_dim();
        let mut real = DMatrix::zeros(m, dim);
        for r in 0..m {
            let w = &self.real_windows[self.rng.gen_range(0..self.real_windows.len())];
            real.row_mut(r).copy_from_slice(w);
        }
        let mut fake = DMatrix::zeros(m, dim);
        for r in 0..m {
            let w = &fake_pool[self.rng.gen_range(0..fake_pool.len())];
            fake.row_mut(r).copy_from_slice(w);
        }

        let (logit_r, cache_r) = disc.forward_cached(&real);
        let (logit_f, cache_f) = disc.forward_cached(&fake);
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut grad_r = DMatrix::zeros(m, 1);
        let mut grad_f = DMatrix::zeros(m, 1);
        for r in 0..m {
            grad_r[(r, 0)] = (sigmoid(logit_r[(r, 0)]) - 1.0) / m as f64;
            grad_f[(r, 0)] = sigmoid(logit_f[(r, 0)]) / m as f64;
        }
        let (g1, _) = disc.backward(&cache_r, &grad_r);
        let (g2, _) = disc.backward(&cache_f, &grad_f);
        let mut flat: Vec<f64> = g1
            .flatten()
            .iter()
            .zip(g2.flatten().iter())
            .map(|(a, b)| a + b)
            .collect();

        // Gradient penalty on real samples via a directional
        // finite-difference estimator of |grad_x D|^2: exactly
        // differentiable with first-order backprop.
        if self.train.disc_grad_penalty > 0.0 {
            const EPS: f64 = 1e-3;
            let mut dirs = DMatrix::zeros(m, dim);
            for r in 0..m {
                let mut v: Vec<f64> = (0..dim)
                    .map(|_| StandardNormal.sample(&mut self.rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x /= norm);
                dirs.row_mut(r).copy_from_slice(&v);
            }
            let plus = &real + &dirs * EPS;
            let minus = &real - &dirs * EPS;
            let (out_p, cache_p) = disc.forward_cached(&plus);
            let (out_m, cache_m) = disc.forward_cached(&minus);
            let coef = self.train.disc_grad_penalty * dim as f64;
            let mut gp_grad_p = DMatrix::zeros(m, 1);
            let mut gp_grad_m = DMatrix::zeros(m, 1);
            for r in 0..m {
                let d = (out_p[(r, 0)] - out_m[(r, 0)]) / (2.0 * EPS);
                let base = coef * 2.0 * d / (m as f64 * 2.0 * EPS);
                gp_grad_p[(r, 0)] = base;
                gp_grad_m[(r, 0)] = -base;
            }
            let (gp1, _) = disc.backward(&cache_p, &gp_grad_p);
            let (gp2, _) = disc.backward(&cache_m, &gp_grad_m);
            for ((f, a), b) in flat.iter_mut().zip(gp1.flatten()).zip(gp2.flatten()) {
                *f += a + b;
            }
        }

        if flat.iter().all(|g| g.is_finite()) {
            clip_global_norm(&mut flat, self.train.grad_clip);
            let mut params = disc.params_flat();
            self.opt_disc.step(&mut params, &flat);
            disc.set_params_flat(&params);
        } else {
            self.incidents += 1;
        }
        self.discriminator = Some(disc);
    }

    /// One full iteration: collect, flatten, update.
    pub fn iteration(&mut self) -> IterationStats {
        let rollouts = self.collect();
        self.env_steps += rollouts.iter().map(|r| r.steps.len() as u64).sum::<u64>();
        let batch = self.flatten(&rollouts);
        self.update_batch(&batch)
    }

    fn snapshot(&self) -> (PolicyNet, Mlp, Option<Mlp>) {
        (
            self.policy.clone(),
            self.value.clone(),
            self.discriminator.clone(),
        )
    }

    fn into_run(self, outcome: TrainOutcome) -> TrainRun {
        TrainRun {
            policy: self.policy,
            value: self.value,
            discriminator: self.discriminator,
            stats: self.stats,
            outcome,
            layout: self.layout,
            env_steps: self.env_steps,
        }
    }
}

fn rolling_mean(stats: &[IterationStats], k: usize, f: impl Fn(&IterationStats) -> f64) -> f64 {
    let tail = &stats[stats.len().saturating_sub(k)..];
    if tail.is_empty() {
        return f64::NEG_INFINITY;
    }
    tail.iter().map(&f).sum::<f64>() / tail.len() as f64
}

/// PPO-only training of a privileged imitation policy on teacher
/// observations until the rolling mean pose reward exceeds `pose_threshold`
/// or the step budget runs out. On budget exhaustion the best-seen
/// parameters are returned with a budget-exhausted outcome.
pub fn train_teacher(
    setup: TrainerSetup,
    budget_steps: u64,
    pose_threshold: f64,
) -> Result<TrainRun> {
    if !matches!(setup.goal, GoalMode::Teacher) {
        return Err(Error::config("goal", "teacher training uses teacher observations"));
    }
    if !matches!(setup.strategy, Strategy::PpoOnly) {
        return Err(Error::config("strategy", "teacher training is ppo-only"));
    }
    let mut trainer = Trainer::new(setup)?;
    let mut best = (f64::NEG_INFINITY, trainer.snapshot());
    loop {
        trainer.iteration();
        let rolling = rolling_mean(&trainer.stats, 5, |s| s.r_pose);
        if rolling > best.0 {
            best = (rolling, trainer.snapshot());
        }
        if rolling >= pose_threshold {
            return Ok(trainer.into_run(TrainOutcome::ReachedThreshold));
        }
        if trainer.env_steps >= budget_steps {
            let (policy, value, discriminator) = best.1;
            trainer.policy = policy;
            trainer.value = value;
            trainer.discriminator = discriminator;
            return Ok(trainer.into_run(TrainOutcome::BudgetExhausted));
        }
    }
}

/// Student training under the configured strategy and observation variant,
/// for a fixed environment-step budget.
pub fn train_student(setup: TrainerSetup, budget_steps: u64) -> Result<TrainRun> {
    if matches!(setup.goal, GoalMode::Teacher) {
        return Err(Error::config("goal", "student training uses student observations"));
    }
    let mut trainer = Trainer::new(setup)?;
    while trainer.env_steps < budget_steps {
        trainer.iteration();
    }
    Ok(trainer.into_run(TrainOutcome::Completed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::humanoid::{MotionFrame, MotionTrack, ReferenceMotion, SkeletonSpec};
    use crate::simulator::SimConfig;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};

    fn standing_pool(frames: usize) -> (Arc<SimModel>, Arc<Vec<Arc<MotionBundle>>>) {
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let frame = MotionFrame {
            root_translation: Vector3::new(0.0, 0.0, spec.standing_root_height()),
            root_orientation: UnitQuaternion::identity(),
            joint_rotations: vec![UnitQuaternion::identity(); spec.joint_count() - 1],
        };
        let motion = ReferenceMotion::new(vec![frame; frames]).unwrap();
        let track = Arc::new(MotionTrack::from_motion(&motion, &spec).unwrap());
        let model = Arc::new(SimModel::new(spec, SimConfig::default()).unwrap());
        let pool = Arc::new(vec![Arc::new(MotionBundle::motion_only("stand", track))]);
        (model, pool)
    }

    fn small_setup(strategy: Strategy, teacher: Option<PolicyNet>, seed: u64) -> TrainerSetup {
        let (model, pool) = standing_pool(40);
        TrainerSetup {
            model,
            pool,
            env_count: 2,
            horizon: 12,
            seed,
            policy_hidden: vec![32],
            value_hidden: vec![32],
            disc_hidden: vec![32],
            train: TrainConfig {
                epochs: 2,
                minibatch_size: 12,
                kl_target: 0.0,
                ..TrainConfig::default()
            },
            reward: RewardConfig {
                alpha: [1.0, 0.0, 0.0],
                ..RewardConfig::default()
            },
            goal: GoalMode::Teacher,
            strategy,
            teacher,
        }
    }

    fn make_teacher(seed: u64) -> PolicyNet {
        let (model, _) = standing_pool(4);
        let j = model.spec.joint_count();
        let obs = crate::observe::teacher_layout(j).total();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyNet::new(&[obs, 16, 3 * (j - 1)], -1.0, &mut rng)
    }

    #[test]
    fn first_epoch_ratios_are_one() {
        let mut t = Trainer::new(small_setup(Strategy::PpoOnly, None, 3)).unwrap();
        let stats = t.iteration();
        assert!(
            stats.ratio_dev_first < 1e-6,
            "max |ratio - 1| = {}",
            stats.ratio_dev_first
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut a = Trainer::new(small_setup(Strategy::PpoOnly, None, 5)).unwrap();
        let mut b = Trainer::new(small_setup(Strategy::PpoOnly, None, 5)).unwrap();
        for _ in 0..2 {
            a.iteration();
            b.iteration();
        }
        assert_eq!(a.policy.mlp.params_flat(), b.policy.mlp.params_flat());
        assert_eq!(a.value.params_flat(), b.value.params_flat());
    }

    #[test]
    fn distill_weight_zero_reduces_to_ppo_only_bitwise() {
        let teacher = make_teacher(11);
        let mut joint = Trainer::new({
            let mut s = small_setup(Strategy::PpoDistill, Some(teacher), 7);
            s.train.distill_weight = 0.0;
            s
        })
        .unwrap();
        let mut ppo = Trainer::new(small_setup(Strategy::PpoOnly, None, 7)).unwrap();
        for _ in 0..2 {
            joint.iteration();
            ppo.iteration();
        }
        assert_eq!(joint.policy.mlp.params_flat(), ppo.policy.mlp.params_flat());
        assert_eq!(joint.policy.log_std, ppo.policy.log_std);
        assert_eq!(joint.value.params_flat(), ppo.value.params_flat());
    }

    #[test]
    fn joint_objective_additivity_exact() {
        let teacher = make_teacher(13);
        let mut joint =
            Trainer::new(small_setup(Strategy::PpoDistill, Some(teacher.clone()), 9)).unwrap();
        let rollouts = joint.collect();
        let batch = joint.flatten(&rollouts);

        // Evaluate the three losses at identical parameters and batch.
        let n = batch.obs.nrows();
        let mut adv = batch.advantages.clone();
        let mean = adv.iter().sum::<f64>() / n as f64;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);

        let (l_ppo_joint, l_distill_joint, _) = policy_minibatch_grads(
            &joint.policy,
            &batch.obs,
            &batch.actions,
            &batch.log_probs,
            &adv,
            batch.teacher_actions.as_ref(),
            &joint.train,
            true,
        );
        let (l_ppo_only, zero_distill, _) = policy_minibatch_grads(
            &joint.policy,
            &batch.obs,
            &batch.actions,
            &batch.log_probs,
            &adv,
            None,
            &joint.train,
            true,
        );
        let (zero_ppo, l_distill_only, _) = policy_minibatch_grads(
            &joint.policy,
            &batch.obs,
            &batch.actions,
            &batch.log_probs,
            &adv,
            batch.teacher_actions.as_ref(),
            &joint.train,
            false,
        );
        assert_eq!(zero_distill, 0.0);
        assert_eq!(zero_ppo, 0.0);
        let w = joint.train.distill_weight;
        assert_eq!(
            l_ppo_joint + w * l_distill_joint,
            l_ppo_only + w * l_distill_only,
            "joint loss must equal the sum of its parts exactly"
        );
    }

    #[test]
    fn distill_only_moves_policy_but_not_value() {
        let teacher = make_teacher(17);
        let mut t =
            Trainer::new(small_setup(Strategy::DistillOnly, Some(teacher), 19)).unwrap();
        let value_before = t.value.params_flat();
        let mut first_loss = None;
        let mut last_loss = 0.0;
        for _ in 0..6 {
            let s = t.iteration();
            first_loss.get_or_insert(s.l_distill);
            last_loss = s.l_distill;
            assert_eq!(s.l_ppo, 0.0);
        }
        // Rewards are logged but never differentiated: value net untouched.
        assert_eq!(t.value.params_flat(), value_before);
        assert!(
            last_loss < first_loss.unwrap(),
            "distillation should reduce the action gap: {} -> {last_loss}",
            first_loss.unwrap()
        );
    }

    #[test]
    fn oversized_gradients_clip_to_threshold_exactly() {
        let mut t = Trainer::new(small_setup(Strategy::PpoOnly, None, 23)).unwrap();
        let rollouts = t.collect();
        let full = t.flatten(&rollouts);
        // Single-sample batch (no advantage normalization) with a huge
        // advantage forces a pre-clip norm far beyond the threshold.
        let batch = FlatBatch {
            obs: full.obs.rows(0, 1).into_owned(),
            actions: full.actions.rows(0, 1).into_owned(),
            log_probs: vec![full.log_probs[0]],
            advantages: vec![1e7],
            returns: vec![full.returns[0]],
            teacher_actions: None,
            amp_windows: Vec::new(),
            mean_reward: 0.0,
            breakdown_means: [0.0; 3],
            terminations: 0,
        };
        let stats = t.update_batch(&batch);
        assert!(stats.grad_norm > t.train.grad_clip, "pre-clip {}", stats.grad_norm);
        assert_relative_eq!(stats.post_clip_norm, t.train.grad_clip, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_loss_aborts_update_and_keeps_parameters() {
        let mut t = Trainer::new(small_setup(Strategy::PpoOnly, None, 29)).unwrap();
        let rollouts = t.collect();
        let mut batch = t.flatten(&rollouts);
        batch.advantages[0] = f64::NAN;
        let params_before = t.policy.mlp.params_flat();
        let stats = t.update_batch(&batch);
        assert!(stats.incidents > 0);
        assert_eq!(t.policy.mlp.params_flat(), params_before);
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (obs_dim, act_dim, m) = (6, 4, 8);
        let policy = PolicyNet::new(&[obs_dim, 10, act_dim], -0.7, &mut rng);
        let obs = DMatrix::from_fn(m, obs_dim, |_, _| rng.gen_range(-1.0..1.0));
        let mean0 = policy.mlp.forward_batch(&obs);
        // Actions near the mean keep ratios near 1, away from clip kinks.
        let actions = mean0.map(|v| v + rng.gen_range(-0.3..0.3));
        let logp_old: Vec<f64> = (0..m)
            .map(|r| {
                let mr: Vec<f64> = mean0.row(r).iter().copied().collect();
                let ar: Vec<f64> = actions.row(r).iter().copied().collect();
                gaussian_log_prob(&ar, &mr, &policy.log_std) + rng.gen_range(-0.05..0.05)
            })
            .collect();
        let advantages: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let teacher = DMatrix::from_fn(m, act_dim, |_, _| rng.gen_range(-0.5..0.5));
        let cfg = TrainConfig {
            entropy_coef: 0.0,
            distill_weight: 0.8,
            ..TrainConfig::default()
        };

        let (_, _, analytic) = policy_minibatch_grads(
            &policy,
            &obs,
            &actions,
            &logp_old,
            &advantages,
            Some(&teacher),
            &cfg,
            true,
        );

        let loss_of = |p: &PolicyNet| -> f64 {
            let mean = p.mlp.forward_batch(&obs);
            let mut l_ppo = 0.0;
            for r in 0..m {
                let mr: Vec<f64> = mean.row(r).iter().copied().collect();
                let ar: Vec<f64> = actions.row(r).iter().copied().collect();
                let ratio = (gaussian_log_prob(&ar, &mr, &p.log_std) - logp_old[r]).exp();
                l_ppo -= clipped_objective(ratio, advantages[r], cfg.clip_eps);
            }
            l_ppo /= m as f64;
            let (l_d, _) = distill_loss(&mean, &teacher);
            l_ppo + cfg.distill_weight * l_d
        };

        let n_params = policy.mlp.param_count() + act_dim;
        let mut worst: f64 = 0.0;
        for probe in 0..300 {
            let idx = (probe * 7919) % n_params;
            let mut p = policy.clone();
            let mut flat = p.mlp.params_flat();
            flat.extend_from_slice(&p.log_std);
            let h = 1e-6 * (1.0 + flat[idx].abs());
            let orig = flat[idx];
            flat[idx] = orig + h;
            let (net, ls) = flat.split_at(flat.len() - act_dim);
            p.mlp.set_params_flat(net);
            p.log_std.copy_from_slice(ls);
            let up = loss_of(&p);
            flat[idx] = orig - h;
            let (net, ls) = flat.split_at(flat.len() - act_dim);
            p.mlp.set_params_flat(net);
            p.log_std.copy_from_slice(ls);
            let down = loss_of(&p);
            flat[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[idx].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[idx] - numeric).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn discriminator_training_separates_real_from_fake() {
        let teacher = make_teacher(37);
        let mut setup = small_setup(Strategy::PpoDistill, Some(teacher), 41);
        setup.reward.alpha = [0.6, 0.3, 0.1];
        let mut t = Trainer::new(setup).unwrap();
        assert!(t.discriminator.is_some());

        // Distinct synthetic pools: training must push real logits above
        // fake logits.
        let dim = t.discriminator.as_ref().unwrap().input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let real: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..dim).map(|_| 0.5 + 0.1 * rng.gen::<f64>()).collect())
            .collect();
        let fake: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..dim).map(|_| -0.5 + 0.1 * rng.gen::<f64>()).collect())
            .collect();
        t.real_windows = real.clone();
        for _ in 0..30 {
            t.update_discriminator(&fake);
        }
        let disc = t.discriminator.as_ref().unwrap();
        let mean_of = |pool: &[Vec<f64>]| {
            pool.iter().map(|w| disc.forward(w)[0]).sum::<f64>() / pool.len() as f64
        };
        let (rm, fm) = (mean_of(&real), mean_of(&fake));
        assert!(
            rm > fm + 0.5,
            "no separation after training: real {rm} fake {fm}"
        );
        // The style reward then prefers real-looking windows.
        assert!(
            crate::rewards::amp_reward_from_logit(rm)
                > crate::rewards::amp_reward_from_logit(fm)
        );
    }

    #[test]
    fn teacher_training_requires_motions_and_improves_standing() {
        // Empty corpus is a configuration error.
        let (model, _) = standing_pool(4);
        let empty = TrainerSetup {
            pool: Arc::new(Vec::new()),
            ..small_setup(Strategy::PpoOnly, None, 43)
        };
        let _ = model;
        assert!(matches!(
            Trainer::new(empty),
            Err(crate::error::Error::InvalidConfig { .. })
        ));

        // A short run on standing keeps a healthy pose reward.
        let run = train_teacher(small_setup(Strategy::PpoOnly, None, 47), 600, 2.0).unwrap();
        assert_eq!(run.outcome, TrainOutcome::BudgetExhausted);
        assert!(run.stats.iter().all(|s| s.mean_reward.is_finite()));
        assert!(!run.stats.is_empty());
    }

    #[test]
    fn distill_strategies_require_teacher() {
        assert!(matches!(
            Trainer::new(small_setup(Strategy::PpoDistill, None, 51)),
            Err(crate::error::Error::InvalidConfig { .. })
        ));
    }
}
