//! Observation assembly for teacher and student policies.
//!
//! Proprioception is canonicalized into the root heading frame (yaw-aligned)
//! so observations are invariant to world yaw. The exception is the global
//! cue block fed to the student: ray displacements stay in world coordinates
//! because they carry the global grounding signal.
//!
//! Layouts are versioned; a serialized descriptor and its hash travel with
//! every checkpoint to guard against silent reordering.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::geometry::Keypoint2DSet;
use crate::humanoid::{canonicalize, JointState, MotionTrack, ReferenceGoal};
use crate::Result;

/// Keypoint masking/perturbation and feature-dropout settings used during
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-joint, per-frame probability of masking a keypoint.
    pub mask_prob: f64,
    /// Std-dev of the pixel noise added to surviving keypoints.
    pub pixel_noise_sigma: f64,
    /// Probability of zeroing the local feature block for a whole step.
    pub feature_dropout: f64,
    /// Reference scale for confidence attenuation: c *= exp(-|noise|/ref).
    pub confidence_ref: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mask_prob: 0.05,
            pixel_noise_sigma: 2.0,
            feature_dropout: 0.1,
            confidence_ref: 4.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("mask_prob", self.mask_prob), ("feature_dropout", self.feature_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "probability must be in [0,1]"));
            }
        }
        if self.pixel_noise_sigma < 0.0 {
            return Err(Error::config("pixel_noise_sigma", "must be non-negative"));
        }
        if self.confidence_ref <= 0.0 {
            return Err(Error::config("confidence_ref", "must be positive"));
        }
        Ok(())
    }

    /// No masking, no noise; keypoints pass through untouched.
    pub fn disabled() -> Self {
        AugmentConfig {
            mask_prob: 0.0,
            pixel_noise_sigma: 0.0,
            feature_dropout: 0.0,
            confidence_ref: 4.0,
        }
    }
}

/// Global grounding cue variants fed to the student policy.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalCue {
    /// Local features only; no global signal.
    None,
    /// Explicit (noisy) root displacement, world frame.
    RootDisplacement(Vector3<f64>),
    /// Per-joint ray displacements with confidences, world frame.
    Rays {
        displacements: Vec<Vector3<f64>>,
        confidence: Vec<f64>,
    },
}

/// Goal observation for the student: local feature vector, relative root
/// orientation, and the global cue.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalFeatures {
    pub features: Vec<f64>,
    pub delta_tau: UnitQuaternion<f64>,
    pub global: GlobalCue,
}

/// Named segment map over a flat observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub name: String,
    pub segments: Vec<(String, usize)>,
}

impl ObsLayout {
    pub fn total(&self) -> usize {
        self.segments.iter().map(|(_, n)| n).sum()
    }

    pub fn offset_of(&self, segment: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for (name, len) in &self.segments {
            if name == segment {
                return Some((off, *len));
            }
            off += len;
        }
        None
    }

    pub fn descriptor_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.descriptor_json().as_bytes());
        hex_digest(&h.finalize())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Yaw component of a rotation: the rotation about +z aligning world x with
/// the body's forward direction projected to the ground plane.
pub fn heading_of(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut f = q * Vector3::x();
    if f.x * f.x + f.y * f.y < 1e-12 {
        // Body x is vertical; fall back to the body z direction.
        f = q * Vector3::z();
    }
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), f.y.atan2(f.x))
}

/// Fixed input scaling keeps all observation blocks O(1): linear
/// velocities are multiplied by 0.3, angular velocities by 0.1, both
/// clamped to [-5, 5] after scaling.
const VEL_SCALE: f64 = 0.3;
const ANG_VEL_SCALE: f64 = 0.1;
const OBS_CLAMP: f64 = 5.0;

fn push_scaled(out: &mut Vec<f64>, v: &Vector3<f64>, scale: f64) {
    out.extend([v.x, v.y, v.z].map(|x| (x * scale).clamp(-OBS_CLAMP, OBS_CLAMP)));
}

fn push_quat(out: &mut Vec<f64>, q: &UnitQuaternion<f64>) {
    let q = canonicalize(*q);
    out.extend_from_slice(&[q.w, q.i, q.j, q.k]);
}

fn push_vec3(out: &mut Vec<f64>, v: &Vector3<f64>) {
    out.extend_from_slice(&[v.x, v.y, v.z]);
}

/// Canonicalized proprioception block: root height, heading-relative root
/// orientation, local joint rotations, yaw-aligned root-relative positions
/// (non-root), yaw-aligned velocities, body-frame angular velocities.
fn push_proprio(out: &mut Vec<f64>, p: &dyn JointState) {
    let root_q = p.rotations()[0];
    let root_pos = p.positions()[0];
    let inv_h = heading_of(&root_q).inverse();

    out.push(root_pos.z);
    push_quat(out, &(inv_h * root_q));
    for q in &p.rotations()[1..] {
        push_quat(out, q);
    }
    for pos in &p.positions()[1..] {
        push_vec3(out, &(inv_h * (pos - root_pos)));
    }
    for v in p.velocities() {
        push_scaled(out, &(inv_h * v), VEL_SCALE);
    }
    for w in p.angular_velocities() {
        push_scaled(out, w, ANG_VEL_SCALE);
    }
}

fn proprio_segments(j: usize) -> Vec<(String, usize)> {
    vec![
        ("root_height".into(), 1),
        ("root_rotation".into(), 4),
        ("joint_rotations".into(), (j - 1) * 4),
        ("joint_positions".into(), (j - 1) * 3),
        ("velocities".into(), j * 3),
        ("angular_velocities".into(), j * 3),
    ]
}

/// Flat teacher observation: canonicalized proprioception followed by the
/// privileged reference goal (deltas and absolute targets), all expressed in
/// the root heading frame.
pub fn teacher_observation(p: &dyn JointState, goal: &ReferenceGoal) -> Vec<f64> {
    let root_q = p.rotations()[0];
    let root_pos = p.positions()[0];
    let inv_h = heading_of(&root_q).inverse();

    let mut out = Vec::with_capacity(teacher_layout(p.rotations().len()).total());
    push_proprio(&mut out, p);
    for q in &goal.rotation_deltas {
        push_quat(&mut out, q);
    }
    for d in &goal.position_deltas {
        push_vec3(&mut out, &(inv_h * d));
    }
    for d in &goal.velocity_deltas {
        push_scaled(&mut out, &(inv_h * d), VEL_SCALE);
    }
    for d in &goal.angular_velocity_deltas {
        push_scaled(&mut out, d, ANG_VEL_SCALE);
    }
    push_quat(&mut out, &(inv_h * goal.target_rotations[0]));
    for q in &goal.target_rotations[1..] {
        push_quat(&mut out, q);
    }
    for t in &goal.target_positions {
        push_vec3(&mut out, &(inv_h * (t - root_pos)));
    }
    out
}

pub fn teacher_layout(j: usize) -> ObsLayout {
    let mut segments = proprio_segments(j);
    segments.extend([
        ("goal_rotation_deltas".into(), j * 4),
        ("goal_position_deltas".into(), j * 3),
        ("goal_velocity_deltas".into(), j * 3),
        ("goal_angular_velocity_deltas".into(), j * 3),
        ("goal_target_rotations".into(), j * 4),
        ("goal_target_positions".into(), j * 3),
    ]);
    ObsLayout {
        name: "teacher/v1".into(),
        segments,
    }
}

/// Flat student observation: canonicalized proprioception, local feature
/// vector, relative root orientation, and the variant's global cue block.
/// Ray and root displacements are deliberately left in world frame.
pub fn student_observation(p: &dyn JointState, feat: &GoalFeatures) -> Vec<f64> {
    let mut out = Vec::new();
    push_proprio(&mut out, p);
    out.extend_from_slice(&feat.features);
    push_quat(&mut out, &feat.delta_tau);
    match &feat.global {
        GlobalCue::None => {}
        GlobalCue::RootDisplacement(d) => push_vec3(&mut out, d),
        GlobalCue::Rays {
            displacements,
            confidence,
        } => {
            for (d, c) in displacements.iter().zip(confidence) {
                push_vec3(&mut out, d);
                out.push(*c);
            }
        }
    }
    out
}

/// Observation variant selectors for the student policy, mirroring the
/// global-instruction comparison conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsVariant {
    ImgfeatOnly,
    Plus3dRoot,
    PlusPixelray,
}

impl ObsVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ObsVariant::ImgfeatOnly => "imgfeat-only",
            ObsVariant::Plus3dRoot => "plus-3d-root",
            ObsVariant::PlusPixelray => "plus-pixelray",
        }
    }
}

pub fn student_layout(j: usize, feature_dim: usize, variant: ObsVariant) -> ObsLayout {
    let mut segments = proprio_segments(j);
    segments.push(("local_features".into(), feature_dim));
    segments.push(("delta_tau".into(), 4));
    match variant {
        ObsVariant::ImgfeatOnly => {}
        ObsVariant::Plus3dRoot => segments.push(("root_displacement".into(), 3)),
        ObsVariant::PlusPixelray => segments.push(("ray_displacements".into(), j * 4)),
    }
    ObsLayout {
        name: format!("student-{}/v1", variant.name()),
        segments,
    }
}

/// Dimension of the synthetic local feature vector: 6 values per non-root
/// joint (the first two rotation-matrix columns).
pub fn feature_dim(j: usize) -> usize {
    6 * (j - 1)
}

/// Root-invariant encoding of the local reference pose at frame `t`: the 6D
/// rotation representation per joint plus Gaussian noise emulating visual
/// ambiguity.
pub fn synth_local_features(
    track: &MotionTrack,
    t: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if t >= track.len() {
        return Err(Error::OutOfRange {
            index: t,
            len: track.len(),
        });
    }
    let locals = track.local_rotations(t);
    let mut out = Vec::with_capacity(6 * locals.len());
    for q in locals {
        let m = q.to_rotation_matrix();
        let m = m.matrix();
        out.extend_from_slice(&[m.m11, m.m21, m.m31, m.m12, m.m22, m.m32]);
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    Ok(out)
}

/// Training-time keypoint augmentation: independent per-joint masking and
/// pixel perturbation with confidence attenuation c *= exp(-|n|/ref).
pub fn augment(kps: &Keypoint2DSet, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Keypoint2DSet {
    let mut out = kps.clone();
    let normal = Normal::new(0.0, cfg.pixel_noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma");
    for i in 0..out.len() {
        if !out.visible[i] {
            continue;
        }
        if cfg.mask_prob > 0.0 && rng.gen::<f64>() < cfg.mask_prob {
            out.visible[i] = false;
            out.confidence[i] = 0.0;
            continue;
        }
        if cfg.pixel_noise_sigma > 0.0 {
            let n = [normal.sample(rng), normal.sample(rng)];
            out.pixels[i][0] += n[0];
            out.pixels[i][1] += n[1];
            let mag = (n[0] * n[0] + n[1] * n[1]).sqrt();
            out.confidence[i] *= (-mag / cfg.confidence_ref).exp();
        }
    }
    out
}

/// Heading-invariant pose descriptor for the motion-prior discriminator:
/// root height, heading-relative root orientation, local rotations,
/// yaw-aligned root velocity, and body-frame angular velocities.
pub fn amp_features(p: &dyn JointState) -> Vec<f64> {
    let root_q = p.rotations()[0];
    let inv_h = heading_of(&root_q).inverse();
    let mut out = Vec::with_capacity(amp_feature_dim(p.rotations().len()));
    out.push(p.positions()[0].z);
    push_quat(&mut out, &(inv_h * root_q));
    for q in &p.rotations()[1..] {
        push_quat(&mut out, q);
    }
    push_scaled(&mut out, &(inv_h * p.velocities()[0]), VEL_SCALE);
    for w in p.angular_velocities() {
        push_scaled(&mut out, w, ANG_VEL_SCALE);
    }
    out
}

pub fn amp_feature_dim(j: usize) -> usize {
    1 + 4 + (j - 1) * 4 + 3 + j * 3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::humanoid::{
        build_reference_goal, forward_kinematics, MotionFrame, ReferenceMotion, SkeletonSpec,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    struct FakeState {
        rotations: Vec<UnitQuaternion<f64>>,
        positions: Vec<Vector3<f64>>,
        velocities: Vec<Vector3<f64>>,
        angular_velocities: Vec<Vector3<f64>>,
    }

    impl JointState for FakeState {
        fn rotations(&self) -> &[UnitQuaternion<f64>] {
            &self.rotations
        }
        fn positions(&self) -> &[Vector3<f64>] {
            &self.positions
        }
        fn velocities(&self) -> &[Vector3<f64>] {
            &self.velocities
        }
        fn angular_velocities(&self) -> &[Vector3<f64>] {
            &self.angular_velocities
        }
    }

    fn posed_state(rng: &mut ChaCha8Rng, spec: &SkeletonSpec) -> FakeState {
        let j = spec.joint_count();
        let root_q = UnitQuaternion::from_scaled_axis(Vector3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-3.0..3.0),
        ));
        let locals: Vec<UnitQuaternion<f64>> = (0..j - 1)
            .map(|_| {
                UnitQuaternion::from_scaled_axis(Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ))
            })
            .collect();
        let root_pos = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.9);
        let pose = forward_kinematics(spec, &locals, &root_pos, &root_q);
        let mut rotations = vec![root_q];
        rotations.extend(locals);
        FakeState {
            rotations,
            positions: pose.positions,
            velocities: (0..j)
                .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
            angular_velocities: (0..j)
                .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        }
    }

    fn yaw_state(s: &FakeState, yaw: f64) -> FakeState {
        let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        let mut rotations = s.rotations.clone();
        rotations[0] = r * rotations[0];
        FakeState {
            rotations,
            positions: s.positions.iter().map(|p| r * p).collect(),
            velocities: s.velocities.iter().map(|v| r * v).collect(),
            angular_velocities: s.angular_velocities.clone(),
        }
    }

    fn walking_track(spec: &SkeletonSpec) -> MotionTrack {
        let frames: Vec<_> = (0..8)
            .map(|i| MotionFrame {
                root_translation: Vector3::new(0.04 * i as f64, 0.0, 0.9),
                root_orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.1 * i as f64),
                joint_rotations: (0..spec.joint_count() - 1)
                    .map(|k| {
                        UnitQuaternion::from_scaled_axis(Vector3::new(
                            0.02 * (i + k) as f64,
                            0.01 * k as f64,
                            0.0,
                        ))
                    })
                    .collect(),
            })
            .collect();
        MotionTrack::from_motion(&ReferenceMotion::new(frames).unwrap(), spec).unwrap()
    }

    fn yaw_track(track: &MotionTrack, spec: &SkeletonSpec, yaw: f64) -> MotionTrack {
        let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        let frames: Vec<_> = (0..track.len())
            .map(|f| MotionFrame {
                root_translation: r * track.root_translations[f],
                root_orientation: r * track.rotations[f][0],
                joint_rotations: track.rotations[f][1..].to_vec(),
            })
            .collect();
        MotionTrack::from_motion(&ReferenceMotion::new(frames).unwrap(), spec).unwrap()
    }

    #[test]
    fn teacher_observation_zero_deltas_on_reference() {
        let spec = SkeletonSpec::default_humanoid();
        let track = walking_track(&spec);
        let sim = FakeState {
            rotations: track.rotations[2].clone(),
            positions: track.positions[2].clone(),
            velocities: track.velocities[2].clone(),
            angular_velocities: track.angular_velocities[2].clone(),
        };
        let goal = build_reference_goal(&track, &sim, 2).unwrap();
        let obs = teacher_observation(&sim, &goal);
        let layout = teacher_layout(spec.joint_count());
        assert_eq!(obs.len(), layout.total());
        // Delta blocks: rotation deltas near identity quats, positions near
        // the frame step only.
        let (off, len) = layout.offset_of("goal_velocity_deltas").unwrap();
        // Static-ish motion: velocity deltas are small but not huge.
        assert!(obs[off..off + len].iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn teacher_observation_heading_invariant() {
        let spec = SkeletonSpec::default_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let track = walking_track(&spec);
        for yaw in [0.4, -1.2, 2.9] {
            let rotated = yaw_track(&track, &spec, yaw);
            let sim = posed_state(&mut rng, &spec);
            let sim_rot = yaw_state(&sim, yaw);
            let goal = build_reference_goal(&track, &sim, 3).unwrap();
            let goal_rot = build_reference_goal(&rotated, &sim_rot, 3).unwrap();
            let a = teacher_observation(&sim, &goal);
            let b = teacher_observation(&sim_rot, &goal_rot);
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_relative_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn teacher_observation_roundtrips_via_index_map() {
        let spec = SkeletonSpec::default_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let track = walking_track(&spec);
        let sim = posed_state(&mut rng, &spec);
        let goal = build_reference_goal(&track, &sim, 1).unwrap();
        let obs = teacher_observation(&sim, &goal);
        let layout = teacher_layout(spec.joint_count());

        // Independent reconstruction of named segments from raw inputs.
        let (off, len) = layout.offset_of("root_height").unwrap();
        assert_eq!(len, 1);
        assert_relative_eq!(obs[off], sim.positions[0].z, epsilon = 1e-12);

        let inv_h = heading_of(&sim.rotations[0]).inverse();
        let (off, _) = layout.offset_of("joint_positions").unwrap();
        for (k, pos) in sim.positions[1..].iter().enumerate() {
            let expect = inv_h * (pos - sim.positions[0]);
            for (i, e) in [expect.x, expect.y, expect.z].into_iter().enumerate() {
                assert_relative_eq!(obs[off + 3 * k + i], e, epsilon = 1e-12);
            }
        }
        let (off, _) = layout.offset_of("goal_position_deltas").unwrap();
        for (k, d) in goal.position_deltas.iter().enumerate() {
            let expect = inv_h * d;
            for (i, e) in [expect.x, expect.y, expect.z].into_iter().enumerate() {
                assert_relative_eq!(obs[off + 3 * k + i], e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn student_observation_layouts_per_variant() {
        let spec = SkeletonSpec::default_humanoid();
        let j = spec.joint_count();
        let d = feature_dim(j);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sim = posed_state(&mut rng, &spec);

        let base = GoalFeatures {
            features: vec![0.5; d],
            delta_tau: UnitQuaternion::identity(),
            global: GlobalCue::None,
        };
        let obs = student_observation(&sim, &base);
        assert_eq!(obs.len(), student_layout(j, d, ObsVariant::ImgfeatOnly).total());

        let with_root = GoalFeatures {
            global: GlobalCue::RootDisplacement(Vector3::new(0.1, 0.2, 0.3)),
            ..base.clone()
        };
        let obs = student_observation(&sim, &with_root);
        let layout = student_layout(j, d, ObsVariant::Plus3dRoot);
        assert_eq!(obs.len(), layout.total());
        let (off, _) = layout.offset_of("root_displacement").unwrap();
        assert_eq!(&obs[off..off + 3], &[0.1, 0.2, 0.3]);

        let with_rays = GoalFeatures {
            global: GlobalCue::Rays {
                displacements: vec![Vector3::new(1.0, 2.0, 3.0); j],
                confidence: vec![0.7; j],
            },
            ..base
        };
        let obs = student_observation(&sim, &with_rays);
        let layout = student_layout(j, d, ObsVariant::PlusPixelray);
        assert_eq!(obs.len(), layout.total());
        let (off, _) = layout.offset_of("ray_displacements").unwrap();
        assert_eq!(&obs[off..off + 4], &[1.0, 2.0, 3.0, 0.7]);
    }

    #[test]
    fn student_goal_block_encodes_on_target() {
        let spec = SkeletonSpec::default_humanoid();
        let j = spec.joint_count();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sim = posed_state(&mut rng, &spec);
        let feat = GoalFeatures {
            features: vec![0.0; feature_dim(j)],
            delta_tau: UnitQuaternion::identity(),
            global: GlobalCue::Rays {
                displacements: vec![Vector3::zeros(); j],
                confidence: vec![0.0; j],
            },
        };
        let obs = student_observation(&sim, &feat);
        let layout = student_layout(j, feature_dim(j), ObsVariant::PlusPixelray);
        let (off, len) = layout.offset_of("ray_displacements").unwrap();
        assert!(obs[off..off + len].iter().all(|v| *v == 0.0));
        let (off, _) = layout.offset_of("delta_tau").unwrap();
        assert_eq!(&obs[off..off + 4], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn layout_hash_detects_reordering() {
        let a = teacher_layout(15);
        let mut b = a.clone();
        b.segments.swap(1, 2);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), teacher_layout(15).hash());
        assert_ne!(
            student_layout(15, 84, ObsVariant::PlusPixelray).hash(),
            student_layout(15, 84, ObsVariant::ImgfeatOnly).hash()
        );
    }

    #[test]
    fn synth_features_identity_pose() {
        let spec = SkeletonSpec::default_humanoid();
        let frame = MotionFrame {
            root_translation: Vector3::new(0.0, 0.0, 0.9),
            root_orientation: UnitQuaternion::identity(),
            joint_rotations: vec![UnitQuaternion::identity(); spec.joint_count() - 1],
        };
        let track = MotionTrack::from_motion(&ReferenceMotion::new(vec![frame; 2]).unwrap(), &spec)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = synth_local_features(&track, 0, 0.0, &mut rng).unwrap();
        assert_eq!(f.len(), feature_dim(spec.joint_count()));
        for chunk in f.chunks_exact(6) {
            assert_eq!(chunk, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn synth_features_root_invariant() {
        let spec = SkeletonSpec::default_humanoid();
        let track = walking_track(&spec);
        let rotated = yaw_track(&track, &spec, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = synth_local_features(&track, 4, 0.0, &mut rng).unwrap();
        let b = synth_local_features(&rotated, 4, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_feature_noise_matches_folded_normal_mean() {
        let spec = SkeletonSpec::default_humanoid();
        let track = walking_track(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = synth_local_features(&track, 2, 0.0, &mut rng).unwrap();
        let sigma = 0.05;
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..1200 {
            let noisy = synth_local_features(&track, 2, sigma, &mut rng).unwrap();
            for (n, c) in noisy.iter().zip(&clean) {
                total += (n - c).abs();
                count += 1;
            }
        }
        let mean_dev = total / count as f64;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mean_dev - expected).abs() / expected < 0.02,
            "mean |dev| = {mean_dev}, folded-normal mean = {expected}"
        );
    }

    #[test]
    fn augment_identity_when_disabled() {
        let kps = Keypoint2DSet::new(
            vec![[10.0, 20.0], [30.0, 40.0]],
            vec![1.0, 0.8],
            vec![true, true],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = augment(&kps, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(out, kps);
    }

    #[test]
    fn augment_masks_everything_at_probability_one() {
        let kps = Keypoint2DSet::new(vec![[1.0, 2.0]; 6], vec![1.0; 6], vec![true; 6]).unwrap();
        let cfg = AugmentConfig {
            mask_prob: 1.0,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment(&kps, &cfg, &mut rng);
        assert!(out.visible.iter().all(|v| !v));
        assert!(out.confidence.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn augment_noise_std_matches_sigma() {
        let n = 100_000;
        let kps = Keypoint2DSet::new(vec![[0.0, 0.0]; n], vec![1.0; n], vec![true; n]).unwrap();
        let cfg = AugmentConfig {
            mask_prob: 0.0,
            pixel_noise_sigma: 2.0,
            feature_dropout: 0.0,
            confidence_ref: 4.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = augment(&kps, &cfg, &mut rng);
        for axis in 0..2 {
            let mean: f64 = out.pixels.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
            let var: f64 =
                out.pixels.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            assert!((std - 2.0).abs() / 2.0 < 0.02, "axis {axis} std {std}");
        }
        // Confidence attenuation is in (0, 1].
        assert!(out.confidence.iter().all(|c| *c > 0.0 && *c <= 1.0));
    }

    #[test]
    fn amp_features_heading_invariant() {
        let spec = SkeletonSpec::default_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = posed_state(&mut rng, &spec);
        let rotated = yaw_state(&s, 2.2);
        let a = amp_features(&s);
        let b = amp_features(&rotated);
        assert_eq!(a.len(), amp_feature_dim(spec.joint_count()));
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-9);
        }
    }
}
