//! Reduced articulated humanoid: skeleton definition, quaternion rotation
//! algebra, forward kinematics, and reference-motion handling.
//!
//! The skeleton is a 15-joint tree (pelvis root, spine, head, three-segment
//! limbs) standing in for a full-body model. Local joint rotations are unit
//! quaternions; axis-angle import/export is provided for interop.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Reference motions are sampled at exactly this rate.
pub const MOTION_FPS: f64 = 30.0;

/// Canonical joint indices for the default 15-joint skeleton.
pub mod joints {
    pub const ROOT: usize = 0;
    pub const SPINE: usize = 1;
    pub const HEAD: usize = 2;
    pub const HIP_L: usize = 3;
    pub const KNEE_L: usize = 4;
    pub const ANKLE_L: usize = 5;
    pub const HIP_R: usize = 6;
    pub const KNEE_R: usize = 7;
    pub const ANKLE_R: usize = 8;
    pub const SHOULDER_L: usize = 9;
    pub const ELBOW_L: usize = 10;
    pub const WRIST_L: usize = 11;
    pub const SHOULDER_R: usize = 12;
    pub const ELBOW_R: usize = 13;
    pub const WRIST_R: usize = 14;
}

/// Articulated tree: parent indices, rest offsets (meters), per-joint
/// axis-angle limits (radians), per-body masses (kg), and the designated
/// foot joints used by contact and foot metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<Vector3<f64>>,
    pub joint_limits: Vec<f64>,
    pub masses: Vec<f64>,
    pub foot_joints: Vec<usize>,
    /// Contact sphere radius around each foot joint; the sole sits this far
    /// below the joint center.
    pub foot_radius: f64,
    /// Heel/toe contact offsets in the foot frame (meters). Two points per
    /// foot give the base a fore-aft support polygon.
    pub foot_contact_offsets: Vec<Vector3<f64>>,
}

impl SkeletonSpec {
    /// Default 15-joint humanoid, about 1.7 m tall, 63 kg.
    pub fn default_humanoid() -> Self {
        use joints::*;
        let mut parents = vec![None; 15];
        let mut offsets = vec![Vector3::zeros(); 15];
        let mut limits = vec![2.4; 15];
        let mut masses = vec![0.0; 15];

        let mut set = |j: usize, parent: Option<usize>, off: [f64; 3], mass: f64| {
            parents[j] = parent;
            offsets[j] = Vector3::new(off[0], off[1], off[2]);
            masses[j] = mass;
        };
        set(ROOT, None, [0.0, 0.0, 0.0], 10.0);
        set(SPINE, Some(ROOT), [0.0, 0.0, 0.25], 16.0);
        set(HEAD, Some(SPINE), [0.0, 0.0, 0.30], 5.0);
        set(HIP_L, Some(ROOT), [0.0, 0.10, -0.02], 6.0);
        set(KNEE_L, Some(HIP_L), [0.0, 0.0, -0.42], 4.0);
        set(ANKLE_L, Some(KNEE_L), [0.0, 0.0, -0.40], 1.5);
        set(HIP_R, Some(ROOT), [0.0, -0.10, -0.02], 6.0);
        set(KNEE_R, Some(HIP_R), [0.0, 0.0, -0.42], 4.0);
        set(ANKLE_R, Some(KNEE_R), [0.0, 0.0, -0.40], 1.5);
        set(SHOULDER_L, Some(SPINE), [0.0, 0.18, 0.22], 2.5);
        set(ELBOW_L, Some(SHOULDER_L), [0.0, 0.02, -0.28], 1.5);
        set(WRIST_L, Some(ELBOW_L), [0.0, 0.0, -0.26], 0.5);
        set(SHOULDER_R, Some(SPINE), [0.0, -0.18, 0.22], 2.5);
        set(ELBOW_R, Some(SHOULDER_R), [0.0, -0.02, -0.28], 1.5);
        set(WRIST_R, Some(ELBOW_R), [0.0, 0.0, -0.26], 0.5);
        limits[KNEE_L] = 2.6;
        limits[KNEE_R] = 2.6;
        limits[ELBOW_L] = 2.6;
        limits[ELBOW_R] = 2.6;

        let spec = SkeletonSpec {
            parents,
            rest_offsets: offsets,
            joint_limits: limits,
            masses,
            foot_joints: vec![ANKLE_L, ANKLE_R],
            foot_radius: 0.05,
            foot_contact_offsets: vec![Vector3::new(-0.08, 0.0, 0.0), Vector3::new(0.16, 0.0, 0.0)],
        };
        spec.validate().expect("default skeleton is valid");
        spec
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Root height at which straight legs put the foot soles on the ground.
    pub fn standing_root_height(&self) -> f64 {
        use joints::*;
        let leg = self.rest_offsets[HIP_L] + self.rest_offsets[KNEE_L] + self.rest_offsets[ANKLE_L];
        -leg.z + self.foot_radius
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if self.rest_offsets.len() != n || self.masses.len() != n || self.joint_limits.len() != n {
            return Err(Error::structural("skeleton field lengths disagree"));
        }
        if n == 0 || self.parents[0].is_some() {
            return Err(Error::structural("joint 0 must be the root"));
        }
        for (j, parent) in self.parents.iter().enumerate().skip(1) {
            match parent {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::structural(format!(
                        "joint {j} must have a parent with smaller index"
                    )))
                }
            }
            if self.rest_offsets[j].norm() == 0.0 {
                return Err(Error::structural(format!("joint {j} has zero rest offset")));
            }
        }
        if self.masses.iter().any(|m| *m <= 0.0) {
            return Err(Error::structural("masses must be positive"));
        }
        for f in &self.foot_joints {
            if *f >= n {
                return Err(Error::structural(format!("foot joint {f} out of range")));
            }
        }
        Ok(())
    }
}

/// Returns the quaternion with non-negative scalar part representing the
/// same rotation (double-cover canonicalization).
pub fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Rotation difference a ⊖ b = a^-1 * b, canonicalized.
pub fn rotation_difference(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    canonicalize(a.inverse() * b)
}

/// Relative root orientation from the current root pose to a predicted next
/// pose. Identical algebra to [`rotation_difference`]; named separately to
/// match its role in goal construction.
pub fn relative_root_orientation(
    current: &UnitQuaternion<f64>,
    predicted_next: &UnitQuaternion<f64>,
) -> UnitQuaternion<f64> {
    rotation_difference(current, predicted_next)
}

/// Geodesic angle between two rotations, in radians.
pub fn geodesic_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    (a.inverse() * b).angle()
}

/// World-space pose of every joint: positions in meters plus accumulated
/// orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPose {
    pub positions: Vec<Vector3<f64>>,
    pub orientations: Vec<UnitQuaternion<f64>>,
}

/// Tree-traversal forward kinematics.
///
/// `local_rotations` holds one rotation per non-root joint, indexed by
/// `joint - 1`. Each joint's position comes from its parent's frame; its own
/// rotation affects only descendants.
pub fn forward_kinematics(
    spec: &SkeletonSpec,
    local_rotations: &[UnitQuaternion<f64>],
    root_translation: &Vector3<f64>,
    root_orientation: &UnitQuaternion<f64>,
) -> JointPose {
    let n = spec.joint_count();
    debug_assert_eq!(local_rotations.len(), n - 1);
    let mut positions = vec![Vector3::zeros(); n];
    let mut orientations = vec![UnitQuaternion::identity(); n];
    positions[0] = *root_translation;
    orientations[0] = *root_orientation;
    for j in 1..n {
        let p = spec.parents[j].expect("non-root joint has parent");
        positions[j] = positions[p] + orientations[p] * spec.rest_offsets[j];
        orientations[j] = orientations[p] * local_rotations[j - 1];
    }
    JointPose {
        positions,
        orientations,
    }
}

/// One frame of a reference motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    pub root_translation: Vector3<f64>,
    pub root_orientation: UnitQuaternion<f64>,
    /// Local rotations for joints 1..J.
    pub joint_rotations: Vec<UnitQuaternion<f64>>,
}

/// A 30 FPS reference motion: per-frame local pose, root translation and
/// root orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMotion {
    pub frames: Vec<MotionFrame>,
    pub fps: f64,
}

impl ReferenceMotion {
    pub fn new(frames: Vec<MotionFrame>) -> Result<Self> {
        let motion = ReferenceMotion {
            frames,
            fps: MOTION_FPS,
        };
        motion.validate()?;
        Ok(motion)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps != MOTION_FPS {
            return Err(Error::config("fps", format!("must be {MOTION_FPS}")));
        }
        if self.frames.is_empty() {
            return Err(Error::structural("motion has no frames"));
        }
        let joints = self.frames[0].joint_rotations.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.joint_rotations.len() != joints {
                return Err(Error::structural(format!(
                    "frame {i} has {} joint rotations, expected {joints}",
                    f.joint_rotations.len()
                )));
            }
            let finite = f.root_translation.iter().all(|v| v.is_finite())
                && f.root_orientation.coords.iter().all(|v| v.is_finite())
                && f.joint_rotations
                    .iter()
                    .all(|q| q.coords.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::structural(format!("frame {i} has non-finite values")));
            }
            for q in std::iter::once(&f.root_orientation).chain(&f.joint_rotations) {
                if (q.coords.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::structural(format!(
                        "frame {i} has an unnormalized quaternion"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Privileged target tuple handed to the teacher: per-joint deltas from the
/// simulated state to the next reference frame plus the absolute targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGoal {
    /// r̂_{t+1} ⊖ r_t per joint (index 0 is the root orientation difference).
    pub rotation_deltas: Vec<UnitQuaternion<f64>>,
    pub position_deltas: Vec<Vector3<f64>>,
    pub velocity_deltas: Vec<Vector3<f64>>,
    pub angular_velocity_deltas: Vec<Vector3<f64>>,
    pub target_rotations: Vec<UnitQuaternion<f64>>,
    pub target_positions: Vec<Vector3<f64>>,
}

/// Precomputed world-space reference kinematics: FK positions and
/// orientations per frame, velocities by central finite differences at
/// 30 FPS (one-sided at the ends), and angular velocities from quaternion
/// differences.
///
/// `rotations[f]` stores the root world orientation at index 0 followed by
/// the local joint rotations, matching the proprioception convention.
#[derive(Debug, Clone)]
pub struct MotionTrack {
    pub spec: SkeletonSpec,
    pub rotations: Vec<Vec<UnitQuaternion<f64>>>,
    pub positions: Vec<Vec<Vector3<f64>>>,
    pub velocities: Vec<Vec<Vector3<f64>>>,
    pub angular_velocities: Vec<Vec<Vector3<f64>>>,
    pub root_translations: Vec<Vector3<f64>>,
    pub fps: f64,
}

impl MotionTrack {
    pub fn from_motion(motion: &ReferenceMotion, spec: &SkeletonSpec) -> Result<Self> {
        motion.validate()?;
        let n = motion.len();
        let j = spec.joint_count();
        if motion.frames[0].joint_rotations.len() != j - 1 {
            return Err(Error::structural(format!(
                "motion has {} joint rotations per frame, skeleton expects {}",
                motion.frames[0].joint_rotations.len(),
                j - 1
            )));
        }

        let mut rotations = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        for f in &motion.frames {
            let pose = forward_kinematics(spec, &f.joint_rotations, &f.root_translation, &f.root_orientation);
            let mut rots = Vec::with_capacity(j);
            rots.push(f.root_orientation);
            rots.extend(f.joint_rotations.iter().copied());
            rotations.push(rots);
            positions.push(pose.positions);
        }

        let dt = 1.0 / motion.fps;
        let mut velocities = vec![vec![Vector3::zeros(); j]; n];
        let mut angular_velocities = vec![vec![Vector3::zeros(); j]; n];
        for f in 0..n {
            let (prev, next, span) = central_window(f, n, dt);
            for k in 0..j {
                velocities[f][k] = (positions[next][k] - positions[prev][k]) / span;
                angular_velocities[f][k] =
                    quaternion_velocity(&rotations[prev][k], &rotations[next][k], span);
            }
        }

        Ok(MotionTrack {
            spec: spec.clone(),
            rotations,
            positions,
            velocities,
            angular_velocities,
            root_translations: motion.frames.iter().map(|f| f.root_translation).collect(),
            fps: motion.fps,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Local joint rotations (without the root entry) at a frame.
    pub fn local_rotations(&self, frame: usize) -> &[UnitQuaternion<f64>] {
        &self.rotations[frame][1..]
    }

    /// Reassembles the serializable motion frame at `frame`.
    pub fn motion_frame(&self, frame: usize) -> MotionFrame {
        MotionFrame {
            root_translation: self.root_translations[frame],
            root_orientation: self.rotations[frame][0],
            joint_rotations: self.rotations[frame][1..].to_vec(),
        }
    }
}

fn central_window(f: usize, n: usize, dt: f64) -> (usize, usize, f64) {
    if n == 1 {
        (0, 0, dt)
    } else if f == 0 {
        (0, 1, dt)
    } else if f == n - 1 {
        (n - 2, n - 1, dt)
    } else {
        (f - 1, f + 1, 2.0 * dt)
    }
}

/// Finite-difference angular velocity taking `a` to `b` over `span` seconds,
/// expressed in the local frame of `a` (body frame).
pub fn quaternion_velocity(
    a: &UnitQuaternion<f64>,
    b: &UnitQuaternion<f64>,
    span: f64,
) -> Vector3<f64> {
    rotation_difference(a, b).scaled_axis() / span
}

/// Current simulated joint state as needed for goal construction. Mirrors
/// the simulator's proprioception without depending on it.
pub trait JointState {
    /// Root world orientation at index 0, local joint rotations after.
    fn rotations(&self) -> &[UnitQuaternion<f64>];
    fn positions(&self) -> &[Vector3<f64>];
    fn velocities(&self) -> &[Vector3<f64>];
    fn angular_velocities(&self) -> &[Vector3<f64>];
}

/// Assembles the teacher goal tuple for frame `t`: deltas from the simulated
/// state to reference frame `t+1` plus the absolute reference targets.
pub fn build_reference_goal(
    track: &MotionTrack,
    sim: &dyn JointState,
    t: usize,
) -> Result<ReferenceGoal> {
    if t + 1 >= track.len() {
        return Err(Error::OutOfRange {
            index: t + 1,
            len: track.len(),
        });
    }
    let j = track.spec.joint_count();
    if sim.rotations().len() != j {
        return Err(Error::structural(format!(
            "sim state has {} joints, track has {j}",
            sim.rotations().len()
        )));
    }
    let next = t + 1;
    let mut goal = ReferenceGoal {
        rotation_deltas: Vec::with_capacity(j),
        position_deltas: Vec::with_capacity(j),
        velocity_deltas: Vec::with_capacity(j),
        angular_velocity_deltas: Vec::with_capacity(j),
        target_rotations: track.rotations[next].clone(),
        target_positions: track.positions[next].clone(),
    };
    for k in 0..j {
        goal.rotation_deltas
            .push(rotation_difference(&sim.rotations()[k], &track.rotations[next][k]));
        goal.position_deltas
            .push(track.positions[next][k] - sim.positions()[k]);
        goal.velocity_deltas
            .push(track.velocities[next][k] - sim.velocities()[k]);
        goal.angular_velocity_deltas
            .push(track.angular_velocities[next][k] - sim.angular_velocities()[k]);
    }
    Ok(goal)
}
