//! Procedural reference motions, synthetic camera trajectories, and 2D
//! keypoint rendering.
//!
//! Gait synthesis anchors stance feet to fixed world plants and solves the
//! legs with analytic two-bone IK, so generated motions are kinematically
//! consistent: feet never penetrate the ground and ground-truth rays exist
//! for every joint. All generation is deterministic per seed.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{project_to_pixel, CameraModel, CameraToWorld, Keypoint2DSet, ScaleParam};
use crate::humanoid::{joints, MotionFrame, MotionTrack, ReferenceMotion, SkeletonSpec, MOTION_FPS};
use crate::io::{save_cameras, save_keypoints, save_manifest, save_motion, ManifestEntry};
use crate::Result;

/// Motion family with its style parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MotionFamily {
    StandSway {
        /// Lateral sway amplitude (m), well under the 5 cm displacement cap.
        #[serde(default = "default_sway_amplitude")]
        amplitude: f64,
        #[serde(default = "default_sway_freq")]
        frequency: f64,
    },
    WalkLine {
        #[serde(default = "default_speed")]
        speed: f64,
        /// Heading of the line, radians.
        #[serde(default)]
        heading: f64,
    },
    WalkArc {
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_arc_radius")]
        radius: f64,
    },
    TurnInPlace {
        /// Yaw rate (rad/s).
        #[serde(default = "default_turn_rate")]
        rate: f64,
    },
    ArmWave {
        #[serde(default = "default_wave_amplitude")]
        amplitude: f64,
        #[serde(default = "default_wave_freq")]
        frequency: f64,
    },
}

fn default_sway_amplitude() -> f64 {
    0.025
}
fn default_sway_freq() -> f64 {
    0.4
}
fn default_speed() -> f64 {
    0.7
}
fn default_arc_radius() -> f64 {
    1.5
}
fn default_turn_rate() -> f64 {
    0.6
}
fn default_wave_amplitude() -> f64 {
    0.9
}
fn default_wave_freq() -> f64 {
    0.8
}

impl MotionFamily {
    pub fn name(&self) -> &'static str {
        match self {
            MotionFamily::StandSway { .. } => "stand-sway",
            MotionFamily::WalkLine { .. } => "walk-line",
            MotionFamily::WalkArc { .. } => "walk-arc",
            MotionFamily::TurnInPlace { .. } => "turn-in-place",
            MotionFamily::ArmWave { .. } => "arm-wave",
        }
    }
}

/// Parameters for one generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRecipe {
    #[serde(flatten)]
    pub family: MotionFamily,
    /// Sequence duration, seconds.
    pub duration: f64,
    /// Stride frequency for gait families (Hz); 0 selects a speed-dependent
    /// default.
    #[serde(default)]
    pub gait_freq: f64,
}

impl MotionRecipe {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration <= 120.0) {
            return Err(Error::config("duration", "must be in (0, 120] seconds"));
        }
        match &self.family {
            MotionFamily::StandSway { amplitude, frequency } => {
                if !(0.0..=0.04).contains(amplitude) {
                    return Err(Error::config("amplitude", "sway must be in [0, 0.04] m"));
                }
                if !(0.05..=2.0).contains(frequency) {
                    return Err(Error::config("frequency", "sway must be in [0.05, 2] Hz"));
                }
            }
            MotionFamily::WalkLine { speed, .. } | MotionFamily::WalkArc { speed, .. } => {
                if !(0.2..=1.2).contains(speed) {
                    return Err(Error::config("speed", "must be in [0.2, 1.2] m/s"));
                }
                if let MotionFamily::WalkArc { radius, .. } = &self.family {
                    if !(0.8..=10.0).contains(radius) {
                        return Err(Error::config("radius", "must be in [0.8, 10] m"));
                    }
                }
            }
            MotionFamily::TurnInPlace { rate } => {
                if !(0.1..=1.5).contains(&rate.abs()) {
                    return Err(Error::config("rate", "|rate| must be in [0.1, 1.5] rad/s"));
                }
            }
            MotionFamily::ArmWave { amplitude, frequency } => {
                if !(0.1..=1.4).contains(amplitude) {
                    return Err(Error::config("amplitude", "must be in [0.1, 1.4] rad"));
                }
                if !(0.1..=2.0).contains(frequency) {
                    return Err(Error::config("frequency", "must be in [0.1, 2] Hz"));
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        match &self.family {
            MotionFamily::StandSway { amplitude, frequency } => {
                format!("stand-sway amp={amplitude} freq={frequency} dur={}", self.duration)
            }
            MotionFamily::WalkLine { speed, heading } => {
                format!("walk-line speed={speed} heading={heading} dur={}", self.duration)
            }
            MotionFamily::WalkArc { speed, radius } => {
                format!("walk-arc speed={speed} radius={radius} dur={}", self.duration)
            }
            MotionFamily::TurnInPlace { rate } => {
                format!("turn-in-place rate={rate} dur={}", self.duration)
            }
            MotionFamily::ArmWave { amplitude, frequency } => {
                format!("arm-wave amp={amplitude} freq={frequency} dur={}", self.duration)
            }
        }
    }
}

/// Root path sample: planar position, yaw, and root height.
struct PathPoint {
    xy: Vector3<f64>,
    yaw: f64,
    height: f64,
}

struct GaitPlan {
    stepping: bool,
    gait_freq: f64,
    duty: f64,
    swing_lift: f64,
    arm_swing: f64,
    wave: Option<(f64, f64)>,
}

fn path_point(recipe: &MotionRecipe, spec: &SkeletonSpec, t: f64) -> PathPoint {
    let stand_h = spec.standing_root_height();
    match &recipe.family {
        MotionFamily::StandSway { amplitude, frequency } => PathPoint {
            xy: Vector3::new(0.0, amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin(), 0.0),
            yaw: 0.0,
            height: stand_h - 0.04,
        },
        MotionFamily::ArmWave { .. } => PathPoint {
            xy: Vector3::zeros(),
            yaw: 0.0,
            height: stand_h - 0.04,
        },
        MotionFamily::WalkLine { speed, heading } => PathPoint {
            xy: Vector3::new(heading.cos(), heading.sin(), 0.0) * (speed * t),
            yaw: *heading,
            height: stand_h - (0.04 + 0.05 * speed),
        },
        MotionFamily::WalkArc { speed, radius } => {
            let omega = speed / radius;
            let theta = omega * t - std::f64::consts::FRAC_PI_2;
            PathPoint {
                xy: Vector3::new(radius * theta.cos(), radius * (theta.sin() + 1.0), 0.0),
                yaw: theta + std::f64::consts::FRAC_PI_2,
                height: stand_h - (0.04 + 0.05 * speed),
            }
        }
        MotionFamily::TurnInPlace { rate } => PathPoint {
            xy: Vector3::zeros(),
            yaw: rate * t,
            height: stand_h - 0.05,
        },
    }
}

fn gait_plan(recipe: &MotionRecipe, rng: &mut ChaCha8Rng) -> GaitPlan {
    let jitter = 1.0 + rng.gen_range(-0.05..0.05);
    match &recipe.family {
        MotionFamily::StandSway { .. } => GaitPlan {
            stepping: false,
            gait_freq: 1.0,
            duty: 0.62,
            swing_lift: 0.0,
            arm_swing: 0.05,
            wave: None,
        },
        MotionFamily::ArmWave { amplitude, frequency } => GaitPlan {
            stepping: false,
            gait_freq: 1.0,
            duty: 0.62,
            swing_lift: 0.0,
            arm_swing: 0.0,
            wave: Some((*amplitude, *frequency)),
        },
        MotionFamily::WalkLine { speed, .. } | MotionFamily::WalkArc { speed, .. } => GaitPlan {
            stepping: true,
            gait_freq: if recipe.gait_freq > 0.0 {
                recipe.gait_freq
            } else {
                (0.9 + 0.4 * speed) * jitter
            },
            duty: 0.62,
            swing_lift: 0.07,
            arm_swing: 0.2 + 0.1 * speed,
            wave: None,
        },
        MotionFamily::TurnInPlace { .. } => GaitPlan {
            stepping: true,
            gait_freq: if recipe.gait_freq > 0.0 { recipe.gait_freq } else { 0.9 * jitter },
            duty: 0.62,
            swing_lift: 0.06,
            arm_swing: 0.1,
            wave: None,
        },
    }
}

fn yaw_quat(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// World anchor under a hip: root ground position plus the yawed lateral
/// offset, at ankle rest height.
fn foot_anchor(recipe: &MotionRecipe, spec: &SkeletonSpec, t: f64, lateral: f64) -> Vector3<f64> {
    let p = path_point(recipe, spec, t);
    let offset = yaw_quat(p.yaw) * Vector3::new(0.0, lateral, 0.0);
    Vector3::new(p.xy.x + offset.x, p.xy.y + offset.y, spec.foot_radius)
}

struct LegSchedule {
    plants: Vec<Vector3<f64>>,
    freq: f64,
    duty: f64,
    offset: f64,
    lift: f64,
}

impl LegSchedule {
    fn build(
        recipe: &MotionRecipe,
        spec: &SkeletonSpec,
        plan: &GaitPlan,
        lateral: f64,
        offset: f64,
    ) -> Self {
        let cycles = (plan.gait_freq * recipe.duration + offset).floor() as usize + 2;
        let plants = (0..=cycles + 1)
            .map(|k| {
                // Anchor at the middle of stance k.
                let t = (k as f64 + plan.duty / 2.0 - offset) / plan.gait_freq;
                foot_anchor(recipe, spec, t.clamp(0.0, recipe.duration), lateral)
            })
            .collect();
        LegSchedule {
            plants,
            freq: plan.gait_freq,
            duty: plan.duty,
            offset,
            lift: plan.swing_lift,
        }
    }

    fn target(&self, t: f64) -> Vector3<f64> {
        let phase_total = self.freq * t + self.offset;
        let k = (phase_total.floor() as usize).min(self.plants.len() - 2);
        let phi = phase_total - phase_total.floor();
        if phi < self.duty {
            self.plants[k]
        } else {
            let s = (phi - self.duty) / (1.0 - self.duty);
            let a = self.plants[k];
            let b = self.plants[k + 1];
            let mut p = a + (b - a) * smoothstep(s);
            p.z += self.lift * (std::f64::consts::PI * s).sin();
            p
        }
    }
}

/// Analytic two-bone leg IK. Returns (hip, knee, ankle) local rotations that
/// put the ankle exactly on `target` (clamped to the reachable shell), with
/// the knee bending toward the root's forward direction and the foot kept
/// level with the ground yaw.
fn leg_ik(
    root_pos: Vector3<f64>,
    root_rot: &UnitQuaternion<f64>,
    hip_offset: Vector3<f64>,
    l1: f64,
    l2: f64,
    target: Vector3<f64>,
    foot_yaw: f64,
) -> (UnitQuaternion<f64>, UnitQuaternion<f64>, UnitQuaternion<f64>) {
    let hip = root_pos + root_rot * hip_offset;
    let mut d_vec = target - hip;
    if d_vec.norm() < 1e-9 {
        d_vec = Vector3::new(0.0, 0.0, -1e-6);
    }
    let d = d_vec.norm().clamp((l1 - l2).abs() + 1e-4, l1 + l2 - 1e-3);
    let dir = d_vec.normalize();

    let mut pole = root_rot * Vector3::x();
    if dir.cross(&pole).norm() < 1e-6 {
        pole = root_rot * Vector3::z();
    }
    let axis = dir.cross(&pole).normalize();

    let cos_beta = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let beta = cos_beta.acos();
    let thigh_dir = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), beta) * dir;
    let knee = hip + thigh_dir * l1;
    let reach_target = hip + dir * d;
    let shin_dir = (reach_target - knee).normalize();

    // Segment frames stay aligned with the rest frame (identity local
    // rotation for a straight-down leg): y is the negated plane normal.
    let frame = |down: Vector3<f64>| {
        let z = -down;
        let y = -axis;
        let x = y.cross(&z);
        Matrix3::from_columns(&[x, y, z])
    };
    let hip_world = Rotation3::from_matrix_unchecked(frame(thigh_dir));
    let knee_world = Rotation3::from_matrix_unchecked(frame(shin_dir));

    let root_rot_m = root_rot.to_rotation_matrix();
    let hip_local = UnitQuaternion::from_rotation_matrix(&(root_rot_m.inverse() * hip_world));
    let knee_local = UnitQuaternion::from_rotation_matrix(&(hip_world.inverse() * knee_world));
    let foot_world = Rotation3::from_axis_angle(&Vector3::z_axis(), foot_yaw);
    let ankle_local = UnitQuaternion::from_rotation_matrix(&(knee_world.inverse() * foot_world));
    (hip_local, knee_local, ankle_local)
}

/// Generates a kinematically consistent 30 FPS reference motion,
/// deterministic per seed.
pub fn generate_motion(
    recipe: &MotionRecipe,
    spec: &SkeletonSpec,
    seed: u64,
) -> Result<ReferenceMotion> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = gait_plan(recipe, &mut rng);
    let phase0: f64 = rng.gen_range(0.0..0.2);

    let n_frames = ((recipe.duration * MOTION_FPS).round() as usize).max(2);
    let j = spec.joint_count();
    let l1 = spec.rest_offsets[joints::KNEE_L].norm();
    let l2 = spec.rest_offsets[joints::ANKLE_L].norm();
    let lat_l = spec.rest_offsets[joints::HIP_L].y + 0.02;
    let lat_r = spec.rest_offsets[joints::HIP_R].y - 0.02;

    let left = LegSchedule::build(recipe, spec, &plan, lat_l, phase0);
    let right = LegSchedule::build(recipe, spec, &plan, lat_r, phase0 + 0.5);

    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let t = f as f64 / MOTION_FPS;
        let p = path_point(recipe, spec, t);
        let root_pos = Vector3::new(p.xy.x, p.xy.y, p.height);
        let root_rot = yaw_quat(p.yaw);

        let mut locals = vec![UnitQuaternion::identity(); j - 1];

        // Legs: stance feet glued to their plants, swings interpolated.
        let (lt, rt) = if plan.stepping {
            (left.target(t), right.target(t))
        } else {
            (
                foot_anchor(recipe, spec, 0.0, lat_l),
                foot_anchor(recipe, spec, 0.0, lat_r),
            )
        };
        let (hip_l, knee_l, ankle_l) = leg_ik(
            root_pos,
            &root_rot,
            spec.rest_offsets[joints::HIP_L],
            l1,
            l2,
            lt,
            p.yaw,
        );
        let (hip_r, knee_r, ankle_r) = leg_ik(
            root_pos,
            &root_rot,
            spec.rest_offsets[joints::HIP_R],
            l1,
            l2,
            rt,
            p.yaw,
        );
        locals[joints::HIP_L - 1] = hip_l;
        locals[joints::KNEE_L - 1] = knee_l;
        locals[joints::ANKLE_L - 1] = ankle_l;
        locals[joints::HIP_R - 1] = hip_r;
        locals[joints::KNEE_R - 1] = knee_r;
        locals[joints::ANKLE_R - 1] = ankle_r;

        // Arms: gait swing or wave.
        let gait_phase = 2.0 * std::f64::consts::PI * (plan.gait_freq * t + phase0);
        match plan.wave {
            Some((amp, freq)) => {
                let w = 2.0 * std::f64::consts::PI * freq * t;
                let raise = amp * (0.5 - 0.5 * w.cos());
                locals[joints::SHOULDER_L - 1] =
                    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), raise);
                locals[joints::SHOULDER_R - 1] =
                    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -raise * 0.8);
                locals[joints::ELBOW_L - 1] = UnitQuaternion::from_axis_angle(
                    &Vector3::x_axis(),
                    0.3 * (w * 1.5).sin(),
                );
                locals[joints::ELBOW_R - 1] = UnitQuaternion::from_axis_angle(
                    &Vector3::x_axis(),
                    -0.25 * (w * 1.5).cos(),
                );
            }
            None => {
                let swing = plan.arm_swing * gait_phase.sin();
                locals[joints::SHOULDER_L - 1] =
                    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), swing);
                locals[joints::SHOULDER_R - 1] =
                    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -swing);
                locals[joints::ELBOW_L - 1] =
                    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.25 + 0.1 * swing);
                locals[joints::ELBOW_R - 1] =
                    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.25 - 0.1 * swing);
            }
        }

        // Slight spine counter-sway keeps the torso alive.
        locals[joints::SPINE - 1] = UnitQuaternion::from_axis_angle(
            &Vector3::y_axis(),
            0.02 * (gait_phase * 2.0).sin(),
        );

        frames.push(MotionFrame {
            root_translation: root_pos,
            root_orientation: root_rot,
            joint_rotations: locals,
        });
    }
    ReferenceMotion::new(frames)
}

/// Synthetic camera behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CameraMode {
    Static,
    Orbit {
        /// Azimuth rate around the subject (rad/s).
        rate: f64,
    },
    TrackingDolly,
}

/// Synthetic camera: intrinsics, placement relative to the subject, and the
/// keypoint noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecipe {
    #[serde(flatten)]
    pub mode: CameraMode,
    #[serde(default = "default_focal")]
    pub fx: f64,
    #[serde(default = "default_focal")]
    pub fy: f64,
    #[serde(default = "default_cx")]
    pub cx: f64,
    #[serde(default = "default_cy")]
    pub cy: f64,
    #[serde(default = "default_distance")]
    pub distance: f64,
    #[serde(default = "default_cam_height")]
    pub height: f64,
    /// World azimuth from subject to camera, radians.
    #[serde(default)]
    pub azimuth: f64,
    #[serde(default)]
    pub keypoint_noise_sigma: f64,
    #[serde(default)]
    pub occlusion_prob: f64,
    #[serde(default = "default_conf_ref")]
    pub confidence_ref: f64,
}

fn default_focal() -> f64 {
    500.0
}
fn default_cx() -> f64 {
    320.0
}
fn default_cy() -> f64 {
    240.0
}
fn default_distance() -> f64 {
    3.5
}
fn default_cam_height() -> f64 {
    1.4
}
fn default_conf_ref() -> f64 {
    4.0
}

impl CameraRecipe {
    pub fn static_default() -> Self {
        CameraRecipe {
            mode: CameraMode::Static,
            fx: default_focal(),
            fy: default_focal(),
            cx: default_cx(),
            cy: default_cy(),
            distance: default_distance(),
            height: default_cam_height(),
            azimuth: 0.0,
            keypoint_noise_sigma: 0.0,
            occlusion_prob: 0.0,
            confidence_ref: default_conf_ref(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        CameraModel::new(self.fx, self.fy, self.cx, self.cy)?;
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(Error::config("occlusion_prob", "must be in [0,1]"));
        }
        if self.keypoint_noise_sigma < 0.0 {
            return Err(Error::config("keypoint_noise_sigma", "must be non-negative"));
        }
        if self.distance <= 0.5 {
            return Err(Error::config("distance", "must exceed 0.5 m"));
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mode = match self.mode {
            CameraMode::Static => "static".to_string(),
            CameraMode::Orbit { rate } => format!("orbit rate={rate}"),
            CameraMode::TrackingDolly => "tracking-dolly".to_string(),
        };
        format!(
            "{mode} f={} noise={} occl={}",
            self.fx, self.keypoint_noise_sigma, self.occlusion_prob
        )
    }
}

/// Right-handed camera basis: +z looks at the target, +x right, +y down.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Matrix3<f64> {
    let f = (target - eye).normalize();
    let up = Vector3::z();
    let mut x = f.cross(&up);
    if x.norm() < 1e-9 {
        x = f.cross(&Vector3::y());
    }
    let x = x.normalize();
    let y = f.cross(&x).normalize() * -1.0;
    // Columns are the camera axes in world coordinates.
    Matrix3::from_columns(&[x, -y, f])
}

/// Camera pose at a frame, per the recipe's mode.
pub fn camera_pose(
    recipe: &CameraRecipe,
    track: &MotionTrack,
    t: usize,
) -> Result<(CameraModel, CameraToWorld)> {
    if t >= track.len() {
        return Err(Error::OutOfRange {
            index: t,
            len: track.len(),
        });
    }
    let cam = CameraModel::new(recipe.fx, recipe.fy, recipe.cx, recipe.cy)?;
    let time = t as f64 / track.fps;
    let root = track.root_translations[t];
    let (eye, target) = match recipe.mode {
        CameraMode::Static => {
            let mean: Vector3<f64> = track.root_translations.iter().sum::<Vector3<f64>>()
                / track.len() as f64;
            let eye = Vector3::new(
                track.root_translations[0].x + recipe.distance * recipe.azimuth.cos(),
                track.root_translations[0].y + recipe.distance * recipe.azimuth.sin(),
                recipe.height,
            );
            (eye, Vector3::new(mean.x, mean.y, mean.z))
        }
        CameraMode::Orbit { rate } => {
            let az = recipe.azimuth + rate * time;
            let eye = Vector3::new(
                root.x + recipe.distance * az.cos(),
                root.y + recipe.distance * az.sin(),
                recipe.height,
            );
            (eye, root)
        }
        CameraMode::TrackingDolly => {
            let eye = Vector3::new(
                root.x + recipe.distance * recipe.azimuth.cos(),
                root.y + recipe.distance * recipe.azimuth.sin(),
                recipe.height,
            );
            (eye, root)
        }
    };
    let c2w = CameraToWorld::new(look_at(eye, target), eye)?;
    Ok((cam, c2w))
}

/// Projects the frame's joints through the frame's camera, applying pixel
/// noise, random occlusion, and behind-camera masking. Confidences start at
/// 1, attenuate with noise magnitude, and drop to 0 when masked.
pub fn render_keypoints(
    track: &MotionTrack,
    recipe: &CameraRecipe,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Keypoint2DSet, CameraModel, CameraToWorld)> {
    let (cam, c2w) = camera_pose(recipe, track, t)?;
    let j = track.spec.joint_count();
    let mut pixels = vec![[0.0; 2]; j];
    let mut confidence = vec![0.0; j];
    let mut visible = vec![false; j];
    let normal = Normal::new(0.0, recipe.keypoint_noise_sigma.max(f64::MIN_POSITIVE))
        .expect("valid sigma");
    for k in 0..j {
        let occluded = recipe.occlusion_prob > 0.0 && rng.gen::<f64>() < recipe.occlusion_prob;
        match project_to_pixel(track.positions[t][k], &cam, &c2w, ScaleParam::unit()) {
            Some(mut uv) if !occluded => {
                let mut conf: f64 = 1.0;
                if recipe.keypoint_noise_sigma > 0.0 {
                    let n = [normal.sample(rng), normal.sample(rng)];
                    uv[0] += n[0];
                    uv[1] += n[1];
                    conf *= (-(n[0] * n[0] + n[1] * n[1]).sqrt() / recipe.confidence_ref).exp();
                }
                pixels[k] = uv;
                confidence[k] = conf;
                visible[k] = true;
            }
            _ => {}
        }
    }
    Ok((
        Keypoint2DSet::new(pixels, confidence, visible)?,
        cam,
        c2w,
    ))
}

fn mix_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 step keeps per-record streams decorrelated.
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `count` sequences round-robin over the recipes, renders cameras
/// and keypoints for all but a configurable motion-only fraction, writes
/// records atomically, and returns the manifest (also persisted as
/// `manifest.jsonl`).
pub fn build_corpus(
    recipes: &[MotionRecipe],
    cam_recipes: &[CameraRecipe],
    count: usize,
    motion_only_fraction: f64,
    seed: u64,
    spec: &SkeletonSpec,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if recipes.is_empty() {
        return Err(Error::config("recipes", "need at least one motion recipe"));
    }
    if !(0.0..=1.0).contains(&motion_only_fraction) {
        return Err(Error::config("motion_only_fraction", "must be in [0,1]"));
    }
    for r in recipes {
        r.validate()?;
    }
    for c in cam_recipes {
        c.validate()?;
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // Deterministic motion-only selection: seeded shuffle, first k indices.
    let k_motion_only = (count as f64 * motion_only_fraction).round() as usize;
    let mut order: Vec<usize> = (0..count).collect();
    let mut sel_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xC0FF_EE00));
    for i in (1..order.len()).rev() {
        let j = sel_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let motion_only: std::collections::BTreeSet<usize> =
        order.into_iter().take(k_motion_only).collect();

    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let recipe = &recipes[i % recipes.len()];
        let rec_seed = mix_seed(seed, i as u64 + 1);
        let motion = generate_motion(recipe, spec, rec_seed)?;
        let id = format!("seq_{i:03}");
        let motion_rel = format!("{id}.motion.jsonl");
        save_motion(&out_dir.join(&motion_rel), &motion)?;

        let (camera_path, keypoint_path) = if motion_only.contains(&i) || cam_recipes.is_empty() {
            (None, None)
        } else {
            let cam_recipe = &cam_recipes[i % cam_recipes.len()];
            let track = MotionTrack::from_motion(&motion, spec)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rec_seed, 7));
            let mut cams = Vec::with_capacity(track.len());
            let mut kps = Vec::with_capacity(track.len());
            for f in 0..track.len() {
                let (kp, cam, c2w) = render_keypoints(&track, cam_recipe, f, &mut rng)?;
                cams.push((cam, c2w));
                kps.push(kp);
            }
            let cam_rel = format!("{id}.camera.jsonl");
            let kp_rel = format!("{id}.keypoints.jsonl");
            save_cameras(&out_dir.join(&cam_rel), &cams)?;
            save_keypoints(&out_dir.join(&kp_rel), &kps)?;
            (Some(cam_rel), Some(kp_rel))
        };

        entries.push(ManifestEntry {
            id,
            motion_path: motion_rel,
            camera_path,
            keypoint_path,
            recipe: recipe.summary(),
            seed: rec_seed,
        });
    }
    save_manifest(&out_dir.join("manifest.jsonl"), &entries)?;
    Ok(entries)
}
