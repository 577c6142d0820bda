// Isolated joint-servo probe + live hip trace on the real env.
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raymimic_core::humanoid::{geodesic_angle, SkeletonSpec};
use raymimic_core::simulator::{load_bundles, Action, Env, SimConfig, SimModel};

fn main() {
    // 1. Pure body-frame PD servo on one joint, same scheme as the simulator.
    let target = UnitQuaternion::from_scaled_axis(Vector3::new(0.3, 0.2, -0.1));
    let mut q = UnitQuaternion::identity();
    let mut w = Vector3::zeros();
    let (i_j, kp, kd) = (0.135, 121.5, 2.0 * (121.5f64 * 0.135).sqrt());
    let dt = 1.0 / 60.0;
    for step in 0..20 {
        for _ in 0..1 {
            let alpha = |q: &UnitQuaternion<f64>, w: &Vector3<f64>| {
                let err = (q.inverse() * target).scaled_axis();
                (kp * err - kd * w) / i_j
            };
            let a1 = alpha(&q, &w);
            w += a1 * dt * 0.5;
            q = UnitQuaternion::new_normalize((q * UnitQuaternion::from_scaled_axis(w * dt)).into_inner());
            let a2 = alpha(&q, &w);
            w += a2 * dt * 0.5;
        }
        if step % 4 == 0 {
            println!("servo step {step:>2}: err {:.4}", geodesic_angle(&q, &target));
        }
    }

    // 2. Live hip trace in the real environment.
    let spec = Arc::new(SkeletonSpec::default_humanoid());
    let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
    let bundles = load_bundles(std::path::Path::new("/tmp/tune/data/manifest.jsonl"), &spec).unwrap();
    let bundle = bundles[1].clone();
    let pool = Arc::new(vec![bundle.clone()]);
    let mut env = Env::new(model.clone(), pool, ChaCha8Rng::seed_from_u64(1), 10).unwrap();
    env.fixed_start = Some(0);
    env.reset_to(0, 0);
    let hip = raymimic_core::humanoid::joints::HIP_L;
    println!(
        "reset: hip local {:?} ref[0] {:?} ref[1] {:?} local_w {:?}",
        env.state.local_q[hip - 1].scaled_axis().transpose(),
        env.track().rotations[0][hip].scaled_axis().transpose(),
        env.track().rotations[1][hip].scaled_axis().transpose(),
        env.state.local_w[hip - 1].transpose(),
    );
    for t in 0..4 {
        env.step(&Action::zeros(spec.joint_count() - 1));
        println!(
            "t={t}: hip local {:?} target_next {:?} err {:.3} w {:?}",
            env.state.local_q[hip - 1].scaled_axis().transpose(),
            env.track().rotations[env.frame][hip].scaled_axis().transpose(),
            geodesic_angle(&env.state.local_q[hip - 1], &env.track().rotations[env.frame][hip]),
            env.state.local_w[hip - 1].transpose(),
        );
    }
}
