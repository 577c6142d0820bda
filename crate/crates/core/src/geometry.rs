//! Pinhole camera math and pixel-as-ray lifting.
//!
//! 2D keypoints are back-projected through the intrinsics into camera-frame
//! viewing directions, transformed into the world with a (scale-corrected)
//! camera-to-world pose, and compared against simulated joint positions via
//! perpendicular displacement vectors. All functions are pure; rollout
//! workers can call them concurrently without shared state.

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Pinhole intrinsics. `fx`, `fy`, `cx`, `cy` are in pixels and define the
/// intrinsics matrix K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if fx <= 0.0 || !fx.is_finite() {
            return Err(Error::config("fx", "focal length must be positive"));
        }
        if fy <= 0.0 || !fy.is_finite() {
            return Err(Error::config("fy", "focal length must be positive"));
        }
        Ok(CameraModel { fx, fy, cx, cy })
    }
}

/// Camera-to-world pose: an orthonormal rotation (det +1) and a translation
/// in meters. Together they form the 3x4 transform applied to homogeneous
/// camera-frame vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraToWorld {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl CameraToWorld {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).norm();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::config(
                "rotation",
                format!("not orthonormal (|R^T R - I| = {dev:.3e})"),
            ));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::config("rotation", "determinant must be +1"));
        }
        Ok(CameraToWorld {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        CameraToWorld {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

/// Ratio of subject size to the canonical humanoid size. Divides the
/// translation column of the camera-to-world transform so the simulation
/// keeps canonical proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParam(f64);

impl ScaleParam {
    pub fn new(scale: f64) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::config("scale", "must be positive"));
        }
        Ok(ScaleParam(scale))
    }

    pub fn unit() -> Self {
        ScaleParam(1.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// World-space viewing ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldRay {
    pub origin: Vector3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

/// Per-joint 2D keypoints with confidences and visibility flags.
/// Invisible joints carry confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint2DSet {
    pub pixels: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
    pub visible: Vec<bool>,
}

impl Keypoint2DSet {
    pub fn new(pixels: Vec<[f64; 2]>, confidence: Vec<f64>, visible: Vec<bool>) -> Result<Self> {
        if pixels.len() != confidence.len() || pixels.len() != visible.len() {
            return Err(Error::structural(format!(
                "keypoint fields disagree: {} pixels, {} confidences, {} masks",
                pixels.len(),
                confidence.len(),
                visible.len()
            )));
        }
        let mut confidence = confidence;
        for (c, vis) in confidence.iter_mut().zip(&visible) {
            if !*vis {
                *c = 0.0;
            } else if !(0.0..=1.0).contains(c) {
                return Err(Error::structural(format!("confidence {c} outside [0,1]")));
            }
        }
        Ok(Keypoint2DSet {
            pixels,
            confidence,
            visible,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// All joints masked out, e.g. for motion-only samples.
    pub fn all_masked(count: usize) -> Self {
        Keypoint2DSet {
            pixels: vec![[0.0, 0.0]; count],
            confidence: vec![0.0; count],
            visible: vec![false; count],
        }
    }
}

/// Per-joint displacement vectors toward the corresponding ray, with the
/// source keypoint confidences. Masked joints hold a zero vector and
/// confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSet {
    pub displacements: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
}

impl DisplacementSet {
    pub fn zeros(count: usize) -> Self {
        DisplacementSet {
            displacements: vec![Vector3::zeros(); count],
            confidence: vec![0.0; count],
        }
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }
}

/// Back-projects a pixel through the intrinsics: K^-1 [u, v, 1]^T.
/// The result is an un-normalized camera-frame direction with z = 1.
pub fn lift_keypoint(kp: [f64; 2], cam: &CameraModel) -> Vector3<f64> {
    Vector3::new((kp[0] - cam.cx) / cam.fx, (kp[1] - cam.cy) / cam.fy, 1.0)
}

/// Transforms a camera-frame direction into a world ray.
///
/// The origin is the camera center pushed through the scale-corrected pose
/// (the correction divides only the translation; rotations are scale-free).
/// The direction is rotated, then normalized.
pub fn to_world_ray(dir: Vector3<f64>, c2w: &CameraToWorld, scale: ScaleParam) -> WorldRay {
    let origin = c2w.translation / scale.value();
    let direction = Unit::new_normalize(c2w.rotation * dir);
    WorldRay { origin, direction }
}

/// Shortest vector from `joint` to the half-line {origin + s*dir, s >= 0}.
///
/// The closest parameter is clamped at zero, so points behind the ray origin
/// are measured against the origin itself. The vector points from the joint
/// toward the ray, so moving the joint along it reduces the error.
pub fn ray_displacement(joint: Vector3<f64>, ray: &WorldRay) -> Vector3<f64> {
    let s = (joint - ray.origin).dot(&ray.direction).max(0.0);
    ray.origin + ray.direction.into_inner() * s - joint
}

/// Lifts every visible keypoint to a world ray and computes its displacement
/// from the matching joint. Masked joints yield a zero vector with
/// confidence 0.
pub fn displacement_set(
    joints: &[Vector3<f64>],
    kps: &Keypoint2DSet,
    cam: &CameraModel,
    c2w: &CameraToWorld,
    scale: ScaleParam,
) -> Result<DisplacementSet> {
    if joints.len() != kps.len() {
        return Err(Error::structural(format!(
            "{} joints vs {} keypoints",
            joints.len(),
            kps.len()
        )));
    }
    let mut out = DisplacementSet::zeros(joints.len());
    for (i, joint) in joints.iter().enumerate() {
        if !kps.visible[i] {
            continue;
        }
        let ray = to_world_ray(lift_keypoint(kps.pixels[i], cam), c2w, scale);
        out.displacements[i] = ray_displacement(*joint, &ray);
        out.confidence[i] = kps.confidence[i];
    }
    Ok(out)
}

/// Projects a world point to pixel coordinates under the same scale-corrected
/// pose used for lifting. Returns `None` when the point is at or behind the
/// camera plane.
pub fn project_to_pixel(
    point: Vector3<f64>,
    cam: &CameraModel,
    c2w: &CameraToWorld,
    scale: ScaleParam,
) -> Option<[f64; 2]> {
    let local = c2w.rotation.transpose() * (point - c2w.translation / scale.value());
    if local.z <= 0.0 {
        return None;
    }
    Some([
        cam.fx * local.x / local.z + cam.cx,
        cam.fy * local.y / local.z + cam.cy,
    ])
}

/// Rigid transform mapping `from` points onto `to` points: rotation from
/// orthogonal Procrustes on the centered correspondences, translation from
/// aligning the first point of each set (the root).
///
/// Requires at least 3 non-collinear correspondences.
pub fn align_first_frame(to: &[Vector3<f64>], from: &[Vector3<f64>]) -> Result<CameraToWorld> {
    if to.len() != from.len() {
        return Err(Error::structural(format!(
            "{} target points vs {} source points",
            to.len(),
            from.len()
        )));
    }
    if to.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {}",
            to.len()
        )));
    }
    let n = to.len() as f64;
    let c_to: Vector3<f64> = to.iter().sum::<Vector3<f64>>() / n;
    let c_from: Vector3<f64> = from.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::<f64>::zeros();
    for (a, b) in to.iter().zip(from) {
        cov += (a - c_to) * (b - c_from).transpose();
    }
    let svd = cov.svd(true, true);
    // Collinear inputs leave the rotation about the line axis free.
    let spread: f64 = from
        .iter()
        .map(|p| (p - c_from).norm_squared())
        .sum::<f64>()
        .sqrt();
    if svd.singular_values[1] <= 1e-9 * spread.max(1e-12) * spread.max(1e-12) {
        return Err(Error::DegenerateGeometry(
            "correspondences are collinear".into(),
        ));
    }
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let d = (u * v_t).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let translation = to[0] - rotation * from[0];
    CameraToWorld::new(rotation, translation)
}

/// Mean distance between `to` points and transformed `from` points, exposed
/// as a diagnostic for alignment quality.
pub fn alignment_residual(
    c2w: &CameraToWorld,
    to: &[Vector3<f64>],
    from: &[Vector3<f64>],
) -> f64 {
    if to.is_empty() {
        return 0.0;
    }
    let sum: f64 = to
        .iter()
        .zip(from)
        .map(|(a, b)| (a - (c2w.rotation * b + c2w.translation)).norm())
        .sum();
    sum / to.len() as f64
}

#[cfg(test)]
pub(crate) mod test_oracles {
    use super::*;

    /// Brute-force point-to-halfline minimizer: coarse grid over s followed
    /// by ternary refinement of the bracketing interval. Never touches the
    /// closed-form projection.
    pub fn grid_displacement(joint: Vector3<f64>, ray: &WorldRay, s_max: f64) -> Vector3<f64> {
        let dist = |s: f64| (ray.origin + ray.direction.into_inner() * s - joint).norm();
        let n = 1024;
        let step = s_max / n as f64;
        let mut best_k: usize = 0;
        let mut best = dist(0.0);
        for k in 1..=n {
            let d = dist(k as f64 * step);
            if d < best {
                best = d;
                best_k = k;
            }
        }
        let mut lo = (best_k.saturating_sub(1)) as f64 * step;
        let mut hi = ((best_k + 1).min(n)) as f64 * step;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if dist(m1) < dist(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let s = 0.5 * (lo + hi);
        ray.origin + ray.direction.into_inner() * s - joint
    }
}

#[cfg(test)]
mod tests {
    use super::test_oracles::grid_displacement;
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn identity_cam() -> CameraModel {
        CameraModel::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn lift_principal_ray() {
        let d = lift_keypoint([0.0, 0.0], &identity_cam());
        assert_eq!(d, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn lift_identity_intrinsics() {
        let d = lift_keypoint([1.0, 2.0], &identity_cam());
        assert_eq!(d, Vector3::new(1.0, 2.0, 1.0));
    }

    #[test]
    fn lift_matches_explicit_inverse() {
        // fx=fy=2, cx=cy=1, (u,v)=(3,5): K^-1 [3,5,1]^T = (1,2,1), hand-checked.
        let cam = CameraModel::new(2.0, 2.0, 1.0, 1.0).unwrap();
        let d = lift_keypoint([3.0, 5.0], &cam);
        assert_relative_eq!(d, Vector3::new(1.0, 2.0, 1.0), epsilon = 1e-15);

        // Cross-check against a numerically inverted K on a second point.
        let k = Matrix3::new(2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0);
        let k_inv = k.try_inverse().unwrap();
        let expected = k_inv * Vector3::new(7.0, -2.0, 1.0);
        assert_relative_eq!(lift_keypoint([7.0, -2.0], &cam), expected, epsilon = 1e-12);
    }

    #[test]
    fn world_ray_identity_pose() {
        let ray = to_world_ray(
            Vector3::new(0.0, 0.0, 1.0),
            &CameraToWorld::identity(),
            ScaleParam::unit(),
        );
        assert_eq!(ray.origin, Vector3::zeros());
        assert_eq!(ray.direction.into_inner(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn world_ray_translated_pose() {
        let c2w = CameraToWorld::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let ray = to_world_ray(Vector3::new(0.0, 0.0, 1.0), &c2w, ScaleParam::unit());
        assert_eq!(ray.origin, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(ray.direction.into_inner(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn scale_divides_translation_only() {
        let c2w = CameraToWorld::new(Matrix3::identity(), Vector3::new(2.0, 0.0, 0.0)).unwrap();
        let ray = to_world_ray(
            Vector3::new(0.0, 0.0, 1.0),
            &c2w,
            ScaleParam::new(2.0).unwrap(),
        );
        assert_eq!(ray.origin, Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(ray.direction.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn displacement_on_ray_is_zero() {
        let ray = WorldRay {
            origin: Vector3::zeros(),
            direction: Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)),
        };
        let d = ray_displacement(Vector3::new(0.0, 0.0, 2.5), &ray);
        assert_relative_eq!(d.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn displacement_perpendicular_case() {
        let ray = WorldRay {
            origin: Vector3::zeros(),
            direction: Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)),
        };
        let joint = Vector3::new(1.0, 0.0, 0.0);
        let d = ray_displacement(joint, &ray);
        assert_relative_eq!(d, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        let oracle = grid_displacement(joint, &ray, 10.0);
        assert_relative_eq!(d, oracle, epsilon = 1e-7);
    }

    #[test]
    fn displacement_clamps_behind_origin() {
        let ray = WorldRay {
            origin: Vector3::zeros(),
            direction: Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)),
        };
        let joint = Vector3::new(0.0, 0.0, -1.0);
        let d = ray_displacement(joint, &ray);
        assert_relative_eq!(d, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        let oracle = grid_displacement(joint, &ray, 10.0);
        assert_relative_eq!(d, oracle, epsilon = 1e-7);
    }

    fn random_pose(rng: &mut StdRng) -> CameraToWorld {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let rot = Rotation3::new(axis * rng.gen_range(0.0..std::f64::consts::PI));
        let t = Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(0.5..3.0),
        );
        CameraToWorld::new(rot.into_inner(), t).unwrap()
    }

    #[test]
    fn random_scenes_match_grid_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..300 {
            let c2w = random_pose(&mut rng);
            let cam = CameraModel::new(
                rng.gen_range(50.0..500.0),
                rng.gen_range(50.0..500.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            )
            .unwrap();
            let ray = to_world_ray(
                lift_keypoint([rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)], &cam),
                &c2w,
                ScaleParam::unit(),
            );
            let joint = Vector3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            );
            let d = ray_displacement(joint, &ray);
            let oracle = grid_displacement(joint, &ray, 20.0);
            assert!((d - oracle).norm() < 1e-6, "d={d:?} oracle={oracle:?}");
            // Perpendicularity whenever the closest parameter is interior.
            let s = (joint - ray.origin).dot(&ray.direction);
            if s > 1e-6 {
                assert!(d.dot(&ray.direction).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn reprojection_closure() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let c2w = random_pose(&mut rng);
            let cam = CameraModel::new(300.0, 320.0, 120.0, 110.0).unwrap();
            let uv = [rng.gen_range(0.0..240.0), rng.gen_range(0.0..220.0)];
            let ray = to_world_ray(lift_keypoint(uv, &cam), &c2w, ScaleParam::unit());
            for s in [0.3, 1.0, 4.2] {
                let p = ray.origin + ray.direction.into_inner() * s;
                let uv2 = project_to_pixel(p, &cam, &c2w, ScaleParam::unit()).unwrap();
                assert!((uv2[0] - uv[0]).abs() < 1e-6 && (uv2[1] - uv[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn displacement_scale_covariance() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..100 {
            let c2w = random_pose(&mut rng);
            let cam = CameraModel::new(200.0, 200.0, 0.0, 0.0).unwrap();
            let dir = lift_keypoint([rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)], &cam);
            let joint = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let lambda = 2.75;
            let scaled_c2w =
                CameraToWorld::new(*c2w.rotation(), c2w.translation() * lambda).unwrap();
            let d1 = ray_displacement(joint, &to_world_ray(dir, &c2w, ScaleParam::unit()));
            let d2 = ray_displacement(
                joint * lambda,
                &to_world_ray(dir, &scaled_c2w, ScaleParam::unit()),
            );
            assert_relative_eq!(d2, d1 * lambda, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn displacement_set_masking_and_counts() {
        let cam = identity_cam();
        let c2w = CameraToWorld::identity();
        let joints = vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(1.0, 0.0, 2.0)];
        // Joint 0 exactly on its ray, joint 1 masked.
        let kps = Keypoint2DSet::new(
            vec![[0.0, 0.0], [0.5, 0.5]],
            vec![0.9, 0.8],
            vec![true, false],
        )
        .unwrap();
        let set = displacement_set(&joints, &kps, &cam, &c2w, ScaleParam::unit()).unwrap();
        assert!(set.displacements[0].norm() < 1e-12);
        assert_eq!(set.displacements[1], Vector3::zeros());
        assert_eq!(set.confidence[1], 0.0);

        let short = vec![Vector3::zeros()];
        assert!(displacement_set(&short, &kps, &cam, &c2w, ScaleParam::unit()).is_err());
    }

    #[test]
    fn masked_keypoints_forced_to_zero_confidence() {
        let kps =
            Keypoint2DSet::new(vec![[1.0, 1.0]], vec![0.7], vec![false]).unwrap();
        assert_eq!(kps.confidence[0], 0.0);
    }

    #[test]
    fn align_identity() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let t = align_first_frame(&pts, &pts).unwrap();
        assert_relative_eq!(*t.rotation(), Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(*t.translation(), Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn align_recovers_quarter_turn() {
        let pts = vec![
            Vector3::new(0.2, 0.1, 0.0),
            Vector3::new(1.0, 0.0, 0.3),
            Vector3::new(0.0, 1.0, 0.5),
            Vector3::new(0.4, 0.4, 1.0),
        ];
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let moved: Vec<_> = pts.iter().map(|p| rot * p).collect();
        let t = align_first_frame(&moved, &pts).unwrap();
        assert_relative_eq!(*t.rotation(), rot.into_inner(), epsilon = 1e-9);
        assert!(alignment_residual(&t, &moved, &pts) < 1e-9);
    }

    #[test]
    fn align_exact_rigid_recovery_random() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..50 {
            let pts: Vec<_> = (0..6)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let axis = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let rot = Rotation3::new(axis.normalize() * rng.gen_range(0.0..3.0));
            let tr = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let moved: Vec<_> = pts.iter().map(|p| rot * p + tr).collect();
            let t = align_first_frame(&moved, &pts).unwrap();
            assert!((t.rotation() - rot.into_inner()).norm() < 1e-9);
            assert!((t.translation() - tr).norm() < 1e-9);
        }
    }

    #[test]
    fn align_noisy_matches_rotation_grid_oracle() {
        // Planar scene rotated about z with noise; exhaustive angle grid plus
        // least-squares translation is the oracle.
        let mut rng = StdRng::seed_from_u64(23);
        let pts: Vec<_> = (0..12)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        let true_angle = 0.7;
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), true_angle);
        let moved: Vec<_> = pts
            .iter()
            .map(|p| {
                rot * p
                    + Vector3::new(0.5, -0.2, 0.0)
                    + Vector3::new(
                        rng.gen_range(-0.01..0.01),
                        rng.gen_range(-0.01..0.01),
                        0.0,
                    )
            })
            .collect();

        // Oracle: scan angles, centroid-align translation, keep best mean error.
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..200_000 {
            let a = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / 200_000.0;
            let r = Rotation3::from_axis_angle(&Vector3::z_axis(), a);
            let c_m: Vector3<f64> = moved.iter().sum::<Vector3<f64>>() / moved.len() as f64;
            let c_p: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
            let tr = c_m - r * c_p;
            let err: f64 = moved
                .iter()
                .zip(&pts)
                .map(|(m, p)| (m - (r * p + tr)).norm_squared())
                .sum();
            if err < best.0 {
                best = (err, a);
            }
        }
        let t = align_first_frame(&moved, &pts).unwrap();
        let recovered =
            Rotation3::from_matrix_unchecked(*t.rotation()).axis_angle().map(|(ax, ang)| ang * ax.z.signum()).unwrap_or(0.0);
        assert!(
            (recovered - best.1).abs() < 2e-3,
            "procrustes angle {recovered} vs grid {}",
            best.1
        );
    }

    #[test]
    fn align_rejects_collinear() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        match align_first_frame(&line, &line) {
            Err(Error::DegenerateGeometry(_)) => {}
            other => panic!("expected degenerate-geometry error, got {other:?}"),
        }
    }
}
