// Contact-force probe on the stand-sway sequence.
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raymimic_core::humanoid::{geodesic_angle, SkeletonSpec};
use raymimic_core::simulator::{load_bundles, Action, Env, SimConfig, SimModel};

fn main() {
    let spec = Arc::new(SkeletonSpec::default_humanoid());
    let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
    let bundles = load_bundles(std::path::Path::new("/tmp/tune/data/manifest.jsonl"), &spec).unwrap();
    let bundle = bundles[1].clone(); // stand-sway
    let pool = Arc::new(vec![bundle.clone()]);
    let mut env = Env::new(model.clone(), pool, ChaCha8Rng::seed_from_u64(1), 10).unwrap();
    env.fixed_start = Some(0);
    env.reset_to(0, 0);
    for t in 0..60 {
        let outcome = env.step(&Action::zeros(spec.joint_count() - 1));
        if t % 5 == 0 || outcome.done {
            let soles: Vec<f64> = spec
                .foot_joints
                .iter()
                .map(|&f| env.proprio.positions[f].z - spec.foot_radius)
                .collect();
            // local joint tracking error vs the current reference frame
            let rot_err: f64 = env.proprio.rotations[1..]
                .iter()
                .zip(&env.track().rotations[env.frame][1..])
                .map(|(a, b)| geodesic_angle(a, b))
                .sum();
            let per: Vec<String> = env.proprio.rotations[1..]
                .iter()
                .zip(&env.track().rotations[env.frame][1..])
                .map(|(a, b)| format!("{:.2}", geodesic_angle(a, b)))
                .collect();
            println!(
                "t={t:>3} root_z {:.3} soles [{:+.4} {:+.4}] sum_rot_err {:.3} root_tilt {:.3} done {}\n      per-joint [{}]",
                env.proprio.positions[0].z,
                soles[0],
                soles[1],
                rot_err,
                (env.proprio.rotations[0] * nalgebra::Vector3::z()).cross(&nalgebra::Vector3::z()).norm(),
                outcome.done,
                per.join(" ")
            );
        }
        if outcome.done {
            break;
        }
    }
}
