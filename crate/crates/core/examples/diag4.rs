// Torque-component probe: reproduce compute_forces pieces externally.
use std::sync::Arc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raymimic_core::humanoid::{forward_kinematics, SkeletonSpec};
use raymimic_core::simulator::{load_bundles, Action, Env, SimConfig, SimModel};

fn main() {
    let spec = Arc::new(SkeletonSpec::default_humanoid());
    let cfg = SimConfig::default();
    let model = Arc::new(SimModel::new(spec.clone(), cfg.clone()).unwrap());
    let bundles = load_bundles(std::path::Path::new("/tmp/tune/data/manifest.jsonl"), &spec).unwrap();
    let bundle = bundles[1].clone();
    let pool = Arc::new(vec![bundle.clone()]);
    let mut env = Env::new(model.clone(), pool, ChaCha8Rng::seed_from_u64(1), 10).unwrap();
    env.fixed_start = Some(0);
    env.reset_to(0, 0);
    let g = 9.81 * model.total_mass;
    for t in 0..55 {
        env.step(&Action::zeros(spec.joint_count() - 1));
        if t % 5 != 0 {
            continue;
        }
        let s = &env.state;
        let pose = forward_kinematics(&spec, &s.local_q, &s.root_pos, &s.root_quat);
        let com = (0..15)
            .map(|k| pose.positions[k] * spec.masses[k])
            .sum::<Vector3<f64>>()
            / model.total_mass;
        let t_grav = (com - s.root_pos).cross(&Vector3::new(0.0, 0.0, -g));
        let up = s.root_quat * Vector3::z();
        let t_spring = cfg.upright_stiffness * up.cross(&Vector3::z());
        let mut t_contact = Vector3::zeros();
        for &f in &spec.foot_joints {
            let c = pose.positions[f] - Vector3::new(0.0, 0.0, spec.foot_radius);
            let depth = -c.z;
            if depth > 0.0 {
                // quasi-static normal force (ignores damping part)
                let fz = cfg.contact_stiffness * depth;
                t_contact += (c - s.root_pos).cross(&Vector3::new(0.0, 0.0, fz));
            }
        }
        println!(
            "t={t:>3} tilt {:.3} | grav [{:+.1} {:+.1}] spring [{:+.1} {:+.1}] contactN [{:+.1} {:+.1}] w_xy [{:+.2} {:+.2}]",
            up.cross(&Vector3::z()).norm(),
            t_grav.x, t_grav.y, t_spring.x, t_spring.y, t_contact.x, t_contact.y,
            s.root_ang_vel.x, s.root_ang_vel.y
        );
    }
}
