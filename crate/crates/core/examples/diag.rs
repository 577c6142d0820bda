// Scratch diagnostic: how well does a zero-action policy track the corpus?
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raymimic_core::humanoid::SkeletonSpec;
use raymimic_core::rewards::{pose_reward, RefFrame, RewardConfig};
use raymimic_core::simulator::{load_bundles, Action, Env, SimConfig, SimModel};

fn main() {
    let spec = Arc::new(SkeletonSpec::default_humanoid());
    let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
    let bundles = load_bundles(std::path::Path::new("/tmp/tune/data/manifest.jsonl"), &spec).unwrap();
    let reward_cfg = RewardConfig {
        alpha: [1.0, 0.0, 0.0],
        lambda: [8.0, 1.0, 0.3, 0.1],
        ..RewardConfig::default()
    };
    for bundle in &bundles {
        let pool = Arc::new(vec![bundle.clone()]);
        let mut env = Env::new(model.clone(), pool, ChaCha8Rng::seed_from_u64(1), 10).unwrap();
        env.fixed_start = Some(0);
        env.reset_to(0, 0);
        let frames = bundle.track.len();
        let mut alive = 0;
        let mut rewards = Vec::new();
        let mut max_accel: f64 = 0.0;
        let mut pos_err_end = 0.0;
        for _ in 0..frames - 1 {
            let outcome = env.step(&Action::zeros(spec.joint_count() - 1));
            let r = pose_reward(&env.proprio, &RefFrame::from_track(env.track(), env.frame), &reward_cfg);
            rewards.push(r);
            let acc = env
                .joint_accelerations()
                .iter()
                .map(|a| a.norm_squared())
                .sum::<f64>()
                / 14.0;
            max_accel = max_accel.max(acc);
            pos_err_end = env
                .proprio
                .positions
                .iter()
                .zip(&env.track().positions[env.frame])
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / 15.0;
            alive += 1;
            if outcome.done || alive % 20 == 0 {
                let root_err = (env.proprio.positions[0] - env.track().positions[env.frame][0]).norm();
                let rel_err: f64 = env
                    .proprio
                    .positions
                    .iter()
                    .zip(&env.track().positions[env.frame])
                    .map(|(a, b)| ((a - env.proprio.positions[0]) - (b - env.track().positions[env.frame][0])).norm())
                    .sum::<f64>()
                    / 15.0;
                println!(
                    "    {} t={:>3} root_err {:.3} rel_pose_err {:.3} root_z {:.3} ref_z {:.3}",
                    bundle.id, alive, root_err, rel_err, env.proprio.positions[0].z,
                    env.track().positions[env.frame][0].z
                );
            }
            if outcome.done {
                break;
            }
        }
        let mean_r: f64 = rewards.iter().sum::<f64>() / rewards.len() as f64;
        println!(
            "{:<10} survived {:>3}/{} steps  mean pose reward {:.3}  final mean pos err {:.3} m  peak mean sq accel {:.0}",
            bundle.id, alive, frames - 1, mean_r, pos_err_end, max_accel
        );
    }
}
