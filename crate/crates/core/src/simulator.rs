//! Reduced-order humanoid physics: PD-servoed joint rotations on a floating
//! base, penalty ground contact at the feet, early termination, and batches
//! of independent environments for rollout collection.
//!
//! The base integrates gravity, contact forces and contact/gravity torques;
//! joints track PD targets with their own second-order dynamics. Substeps run
//! at the simulation rate (60 Hz), two per 30 Hz control action, using a
//! kick-drift-kick scheme that reproduces constant-gravity ballistics
//! exactly.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{CameraModel, CameraToWorld, Keypoint2DSet, ScaleParam};
use crate::humanoid::{forward_kinematics, JointState, MotionTrack, SkeletonSpec};
use crate::Result;

/// Simulation parameters. Units are SI; rates in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sim_rate: f64,
    pub control_rate: f64,
    /// Joint PD stiffness per unit joint inertia (1/s^2): kp_j = kp_scale * I_j.
    pub kp_scale: f64,
    /// PD damping ratio; 1 gives kd = 2*sqrt(kp * I).
    pub damping_ratio: f64,
    /// Gyration radius (m) converting body mass to joint inertia.
    pub joint_gyration: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_mu: f64,
    /// Viscous tangential gain (N*s/m), Coulomb-capped at mu * normal force.
    pub friction_viscous: f64,
    pub gravity: f64,
    pub ground_enabled: bool,
    /// Extra damping on the base angular velocity (N*m*s).
    pub root_angular_damping: f64,
    /// Tilt-only spring pulling the base's up axis toward world vertical
    /// (N*m/rad); yaw stays free. Zero disables base stabilization.
    pub upright_stiffness: f64,
    pub upright_damping: f64,
    /// Early termination: root below this height (m).
    pub termination_height: f64,
    /// Early termination: mean per-joint position error above this (m).
    pub termination_mean_error: f64,
    /// Componentwise action clamp (rad).
    pub action_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sim_rate: 60.0,
            control_rate: 30.0,
            kp_scale: 900.0,
            damping_ratio: 1.0,
            joint_gyration: 0.15,
            contact_stiffness: 1.2e5,
            contact_damping: 1.2e3,
            friction_mu: 0.9,
            friction_viscous: 500.0,
            gravity: 9.81,
            ground_enabled: true,
            root_angular_damping: 5.0,
            upright_stiffness: 400.0,
            upright_damping: 60.0,
            termination_height: 0.3,
            termination_mean_error: 0.5,
            action_bound: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sim_rate <= 0.0 || self.control_rate <= 0.0 {
            return Err(Error::config("sim_rate", "rates must be positive"));
        }
        let ratio = self.sim_rate / self.control_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::config(
                "sim_rate",
                "must be an integer multiple of control_rate",
            ));
        }
        if self.kp_scale < 0.0 || self.damping_ratio < 0.0 {
            return Err(Error::config("kp_scale", "gains must be non-negative"));
        }
        if self.contact_stiffness < 0.0 || self.contact_damping < 0.0 {
            return Err(Error::config("contact_stiffness", "must be non-negative"));
        }
        if self.action_bound <= 0.0 {
            return Err(Error::config("action_bound", "must be positive"));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.sim_rate / self.control_rate).round() as usize
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate
    }

    pub fn sim_dt(&self) -> f64 {
        1.0 / self.sim_rate
    }
}

/// Skeleton-derived quantities: per-joint PD gains and inertias, base
/// inertia, total mass.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub spec: Arc<SkeletonSpec>,
    pub cfg: SimConfig,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub joint_inertia: Vec<f64>,
    pub root_inertia: f64,
    pub total_mass: f64,
}

impl SimModel {
    pub fn new(spec: Arc<SkeletonSpec>, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let j = spec.joint_count();
        let mut kp = Vec::with_capacity(j - 1);
        let mut kd = Vec::with_capacity(j - 1);
        let mut inertia = Vec::with_capacity(j - 1);
        for joint in 1..j {
            let i = spec.masses[joint] * cfg.joint_gyration * cfg.joint_gyration;
            let p = cfg.kp_scale * i;
            kp.push(p);
            kd.push(2.0 * cfg.damping_ratio * (p * i).sqrt());
            inertia.push(i);
        }
        // Base rotational inertia from rest-pose mass distribution about the root.
        let rest = forward_kinematics(
            &spec,
            &vec![UnitQuaternion::identity(); j - 1],
            &Vector3::zeros(),
            &UnitQuaternion::identity(),
        );
        let root_inertia = (0..j)
            .map(|k| spec.masses[k] * rest.positions[k].norm_squared())
            .sum::<f64>()
            .max(1.0);
        let total_mass = spec.total_mass();
        Ok(SimModel {
            spec,
            cfg,
            kp,
            kd,
            joint_inertia: inertia,
            root_inertia,
            total_mass,
        })
    }
}

/// Simulated joint state exposed to observations and rewards: rotations
/// (root world orientation first, then local joint rotations), world
/// positions, world linear velocities, and body-frame angular velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Proprioception {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub angular_velocities: Vec<Vector3<f64>>,
}

impl JointState for Proprioception {
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

impl Proprioception {
    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.velocities.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self
                .angular_velocities
                .iter()
                .all(|p| p.iter().all(|v| v.is_finite()))
            && self
                .rotations
                .iter()
                .all(|q| q.coords.iter().all(|v| v.is_finite()))
    }
}

/// Integrator state of one humanoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub root_pos: Vector3<f64>,
    pub root_quat: UnitQuaternion<f64>,
    pub root_lin_vel: Vector3<f64>,
    /// World-frame base angular velocity.
    pub root_ang_vel: Vector3<f64>,
    pub local_q: Vec<UnitQuaternion<f64>>,
    /// Body-frame joint angular velocities.
    pub local_w: Vec<Vector3<f64>>,
    /// Foot contact-point positions at the previous substep, for finite
    /// difference contact velocities.
    foot_prev: Vec<Vector3<f64>>,
}

/// Per-actuated-joint target rotation offsets (axis-angle, radians),
/// clamped componentwise to the configured bound at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub offsets: Vec<Vector3<f64>>,
}

impl Action {
    pub fn from_flat(values: &[f64], bound: f64) -> Self {
        let offsets = values
            .chunks_exact(3)
            .map(|c| {
                Vector3::new(
                    c[0].clamp(-bound, bound),
                    c[1].clamp(-bound, bound),
                    c[2].clamp(-bound, bound),
                )
            })
            .collect();
        Action { offsets }
    }

    pub fn zeros(joints: usize) -> Self {
        Action {
            offsets: vec![Vector3::zeros(); joints],
        }
    }
}

/// PD targets: reference local pose composed with the action offsets, with
/// the total axis-angle clamped to the joint limit.
pub fn pd_targets(
    reference: &[UnitQuaternion<f64>],
    action: &Action,
    spec: &SkeletonSpec,
) -> Vec<UnitQuaternion<f64>> {
    reference
        .iter()
        .zip(&action.offsets)
        .enumerate()
        .map(|(k, (q, off))| {
            let target = q * UnitQuaternion::from_scaled_axis(*off);
            let limit = spec.joint_limits[k + 1];
            if target.angle() > limit {
                let axis = target.scaled_axis().normalize();
                UnitQuaternion::from_scaled_axis(axis * limit)
            } else {
                target
            }
        })
        .collect()
}

fn foot_contact_points(
    spec: &SkeletonSpec,
    positions: &[Vector3<f64>],
    orientations: &[UnitQuaternion<f64>],
) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(spec.foot_joints.len() * spec.foot_contact_offsets.len());
    for &f in &spec.foot_joints {
        for off in &spec.foot_contact_offsets {
            out.push(positions[f] + orientations[f] * off - Vector3::new(0.0, 0.0, spec.foot_radius));
        }
    }
    out
}

struct Forces {
    lin: Vector3<f64>,
    torque: Vector3<f64>,
    joint: Vec<Vector3<f64>>,
}

fn compute_forces(
    model: &SimModel,
    state: &SimState,
    targets: &[UnitQuaternion<f64>],
    contacts: &[Vector3<f64>],
    contact_vel: &[Vector3<f64>],
) -> Forces {
    let cfg = &model.cfg;
    let spec = &model.spec;
    let j = spec.joint_count();

    // Center of mass in the current pose, for the gravity torque.
    let pose = forward_kinematics(spec, &state.local_q, &state.root_pos, &state.root_quat);
    let com = (0..j)
        .map(|k| pose.positions[k] * spec.masses[k])
        .sum::<Vector3<f64>>()
        / model.total_mass;

    let gravity = Vector3::new(0.0, 0.0, -cfg.gravity * model.total_mass);
    let mut lin = gravity;
    let mut torque = (com - state.root_pos).cross(&gravity);
    torque -= cfg.root_angular_damping * state.root_ang_vel;
    if cfg.upright_stiffness > 0.0 {
        let up = state.root_quat * Vector3::z();
        torque += cfg.upright_stiffness * up.cross(&Vector3::z());
        torque -= cfg.upright_damping
            * Vector3::new(state.root_ang_vel.x, state.root_ang_vel.y, 0.0);
    }

    if cfg.ground_enabled {
        for (c, v) in contacts.iter().zip(contact_vel) {
            let depth = -c.z;
            if depth <= 0.0 {
                continue;
            }
            let fn_mag = (cfg.contact_stiffness * depth - cfg.contact_damping * v.z).max(0.0);
            let vt = Vector3::new(v.x, v.y, 0.0);
            let vt_norm = vt.norm();
            let ft = if vt_norm > 1e-12 {
                let mag = (cfg.friction_viscous * vt_norm).min(cfg.friction_mu * fn_mag);
                -vt / vt_norm * mag
            } else {
                Vector3::zeros()
            };
            let force = Vector3::new(ft.x, ft.y, fn_mag);
            lin += force;
            // Only the normal component torques the base: the tangential
            // ground lever is absorbed by the leg chain in a full model and
            // would tip the reduced base unrealistically.
            torque += (c - state.root_pos).cross(&Vector3::new(0.0, 0.0, fn_mag));
        }
    }

    let joint = (0..j - 1)
        .map(|k| {
            let err = (state.local_q[k].inverse() * targets[k]).scaled_axis();
            model.kp[k] * err - model.kd[k] * state.local_w[k]
        })
        .collect();

    Forces { lin, torque, joint }
}

/// Advances one control step: `substeps` kick-drift-kick passes at the
/// simulation rate. Returns the updated state or a divergence error (the
/// caller resets the environment).
pub fn step(model: &SimModel, state: &SimState, targets: &[UnitQuaternion<f64>]) -> Result<SimState> {
    let dt = model.cfg.sim_dt();
    let mut s = state.clone();
    for sub in 0..model.cfg.substeps() {
        // Contact kinematics from the previous substep.
        let pose = forward_kinematics(&model.spec, &s.local_q, &s.root_pos, &s.root_quat);
        let contacts = foot_contact_points(&model.spec, &pose.positions, &pose.orientations);
        let contact_vel: Vec<Vector3<f64>> = contacts
            .iter()
            .zip(&s.foot_prev)
            .map(|(c, p)| (c - p) / dt)
            .collect();

        let f1 = compute_forces(model, &s, targets, &contacts, &contact_vel);
        half_kick(model, &mut s, &f1, dt * 0.5);
        drift(&mut s, dt);

        let pose2 = forward_kinematics(&model.spec, &s.local_q, &s.root_pos, &s.root_quat);
        let contacts2 = foot_contact_points(&model.spec, &pose2.positions, &pose2.orientations);
        let contact_vel2: Vec<Vector3<f64>> = contacts2
            .iter()
            .zip(&contacts)
            .map(|(c, p)| (c - p) / dt)
            .collect();
        let f2 = compute_forces(model, &s, targets, &contacts2, &contact_vel2);
        half_kick(model, &mut s, &f2, dt * 0.5);
        s.foot_prev = contacts2;

        let finite = s.root_pos.iter().all(|v| v.is_finite())
            && s.root_lin_vel.iter().all(|v| v.is_finite())
            && s.root_ang_vel.iter().all(|v| v.is_finite())
            && s.local_w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && s.local_q.iter().all(|q| q.coords.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::SimulationDiverged { substep: sub });
        }
    }
    Ok(s)
}

fn half_kick(model: &SimModel, s: &mut SimState, f: &Forces, half_dt: f64) {
    s.root_lin_vel += f.lin / model.total_mass * half_dt;
    s.root_ang_vel += f.torque / model.root_inertia * half_dt;
    for k in 0..s.local_w.len() {
        s.local_w[k] += f.joint[k] / model.joint_inertia[k] * half_dt;
    }
}

fn drift(s: &mut SimState, dt: f64) {
    s.root_pos += s.root_lin_vel * dt;
    s.root_quat = UnitQuaternion::new_normalize(
        (UnitQuaternion::from_scaled_axis(s.root_ang_vel * dt) * s.root_quat).into_inner(),
    );
    for k in 0..s.local_q.len() {
        s.local_q[k] = UnitQuaternion::new_normalize(
            (s.local_q[k] * UnitQuaternion::from_scaled_axis(s.local_w[k] * dt)).into_inner(),
        );
    }
}

/// Early-termination rule: the root fell below the height threshold, or the
/// mean per-joint position error to the reference frame exceeds the error
/// threshold (strict inequalities).
pub fn check_termination(
    proprio: &Proprioception,
    track: &MotionTrack,
    frame: usize,
    cfg: &SimConfig,
) -> bool {
    if proprio.positions[0].z < cfg.termination_height {
        return true;
    }
    let j = proprio.positions.len();
    let mean_err = proprio
        .positions
        .iter()
        .zip(&track.positions[frame])
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / j as f64;
    mean_err > cfg.termination_mean_error
}

/// Builds the integrator state and proprioception for a reference frame,
/// lifting the whole body if a foot sole would start below the ground.
pub fn reset_to_reference(model: &SimModel, track: &MotionTrack, frame: usize) -> (SimState, Proprioception) {
    let spec = &model.spec;
    let root_quat = track.rotations[frame][0];
    let local_q: Vec<_> = track.rotations[frame][1..].to_vec();
    let mut root_pos = track.root_translations[frame];

    let pose = forward_kinematics(spec, &local_q, &root_pos, &root_quat);
    if model.cfg.ground_enabled {
        let min_sole = foot_contact_points(spec, &pose.positions, &pose.orientations)
            .iter()
            .map(|c| c.z)
            .fold(f64::INFINITY, f64::min);
        if min_sole < 0.0 {
            root_pos.z -= min_sole;
        }
    }
    let pose = forward_kinematics(spec, &local_q, &root_pos, &root_quat);

    let local_w: Vec<_> = track.angular_velocities[frame][1..].to_vec();
    // Track angular velocities are body-frame; the base integrates in world.
    let root_ang_vel = root_quat * track.angular_velocities[frame][0];
    let dt = model.cfg.sim_dt();
    let mut foot_prev = Vec::new();
    for &f in &spec.foot_joints {
        for off in &spec.foot_contact_offsets {
            foot_prev.push(
                pose.positions[f] + pose.orientations[f] * off
                    - Vector3::new(0.0, 0.0, spec.foot_radius)
                    - track.velocities[frame][f] * dt,
            );
        }
    }

    let state = SimState {
        root_pos,
        root_quat,
        root_lin_vel: track.velocities[frame][0],
        root_ang_vel,
        local_q,
        local_w,
        foot_prev,
    };
    let mut rotations = vec![root_quat];
    rotations.extend_from_slice(&state.local_q);
    let mut angular_velocities = vec![track.angular_velocities[frame][0]];
    angular_velocities.extend_from_slice(&state.local_w);
    let proprio = Proprioception {
        rotations,
        positions: pose.positions,
        velocities: track.velocities[frame].clone(),
        angular_velocities,
    };
    (state, proprio)
}

/// Reference motion plus optional per-frame synthetic cameras and keypoints.
#[derive(Debug, Clone)]
pub struct MotionBundle {
    pub id: String,
    pub track: Arc<MotionTrack>,
    pub cameras: Option<Vec<(CameraModel, CameraToWorld)>>,
    pub keypoints: Option<Vec<Keypoint2DSet>>,
    pub scale: ScaleParam,
}

impl MotionBundle {
    pub fn motion_only(id: impl Into<String>, track: Arc<MotionTrack>) -> Self {
        MotionBundle {
            id: id.into(),
            track,
            cameras: None,
            keypoints: None,
            scale: ScaleParam::unit(),
        }
    }
}

/// Loads every corpus record referenced by a manifest into motion bundles,
/// validating frame-count agreement between motions, cameras and keypoints.
pub fn load_bundles(
    manifest_path: &std::path::Path,
    spec: &SkeletonSpec,
) -> Result<Vec<Arc<MotionBundle>>> {
    let entries = crate::io::load_manifest(manifest_path)?;
    let mut bundles = Vec::with_capacity(entries.len());
    for e in &entries {
        let motion = crate::io::load_motion(&crate::io::manifest_relative(
            manifest_path,
            &e.motion_path,
        ))?;
        let track = Arc::new(MotionTrack::from_motion(&motion, spec)?);
        let cameras = match &e.camera_path {
            Some(p) => Some(crate::io::load_cameras(&crate::io::manifest_relative(
                manifest_path,
                p,
            ))?),
            None => None,
        };
        let keypoints = match &e.keypoint_path {
            Some(p) => Some(crate::io::load_keypoints(&crate::io::manifest_relative(
                manifest_path,
                p,
            ))?),
            None => None,
        };
        for (name, len) in [
            ("camera", cameras.as_ref().map(Vec::len)),
            ("keypoint", keypoints.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != track.len() {
                    return Err(Error::structural(format!(
                        "{}: {name} file has {len} frames, motion has {}",
                        e.id,
                        track.len()
                    )));
                }
            }
        }
        bundles.push(Arc::new(MotionBundle {
            id: e.id.clone(),
            track,
            cameras,
            keypoints,
            scale: ScaleParam::unit(),
        }));
    }
    Ok(bundles)
}

/// One independent simulated environment bound to a pool of reference
/// motions. Owns its state and random stream exclusively.
pub struct Env {
    pub model: Arc<SimModel>,
    pub pool: Arc<Vec<Arc<MotionBundle>>>,
    pub bundle_idx: usize,
    pub state: SimState,
    pub proprio: Proprioception,
    /// Current reference frame index (time t).
    pub frame: usize,
    /// Sliding window of recent proprioception, newest last.
    pub history: VecDeque<Proprioception>,
    /// Joint angular velocities one control step ago, for accelerations.
    pub prev_local_w: Vec<Vector3<f64>>,
    pub rng: ChaCha8Rng,
    /// When set, resets always start at this frame (evaluation mode).
    pub fixed_start: Option<usize>,
    pub history_len: usize,
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub done: bool,
    pub diverged: bool,
}

impl Env {
    pub fn new(
        model: Arc<SimModel>,
        pool: Arc<Vec<Arc<MotionBundle>>>,
        rng: ChaCha8Rng,
        history_len: usize,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::config("pool", "no reference motions"));
        }
        for b in pool.iter() {
            if b.track.len() < 2 {
                return Err(Error::config("pool", "motions need at least 2 frames"));
            }
        }
        let (state, proprio) = reset_to_reference(&model, &pool[0].track, 0);
        let prev_local_w = state.local_w.clone();
        let mut env = Env {
            model,
            pool,
            bundle_idx: 0,
            state,
            proprio,
            frame: 0,
            history: VecDeque::new(),
            prev_local_w,
            rng,
            fixed_start: None,
            history_len,
        };
        env.seed_history();
        Ok(env)
    }

    pub fn bundle(&self) -> &MotionBundle {
        &self.pool[self.bundle_idx]
    }

    pub fn track(&self) -> &MotionTrack {
        &self.bundle().track
    }

    fn seed_history(&mut self) {
        self.history.clear();
        self.history.push_back(self.proprio.clone());
        self.prev_local_w = self.state.local_w.clone();
    }

    /// Resets to a uniformly sampled motion and start frame (or the fixed
    /// start when configured).
    pub fn reset(&mut self) {
        let bundle_idx = if self.pool.len() > 1 {
            self.rng.gen_range(0..self.pool.len())
        } else {
            0
        };
        self.bundle_idx = bundle_idx;
        let max_start = self.track().len() - 2;
        let frame = match self.fixed_start {
            Some(f) => f.min(max_start),
            None => self.rng.gen_range(0..=max_start),
        };
        self.reset_to(bundle_idx, frame);
    }

    pub fn reset_to(&mut self, bundle_idx: usize, frame: usize) {
        self.bundle_idx = bundle_idx;
        self.frame = frame;
        let (state, proprio) = reset_to_reference(&self.model, &self.pool[bundle_idx].track, frame);
        self.state = state;
        self.proprio = proprio;
        self.seed_history();
    }

    /// Applies one control action: PD targets from the next reference frame
    /// composed with the action offsets, then two simulation substeps.
    /// Divergence counts as termination and triggers a reset by the caller.
    pub fn step(&mut self, action: &Action) -> StepOutcome {
        let next = self.frame + 1;
        let reference: Vec<UnitQuaternion<f64>> = self.track().rotations[next][1..].to_vec();
        let targets = pd_targets(&reference, action, &self.model.spec);

        self.prev_local_w = self.state.local_w.clone();
        let prev_positions = self.proprio.positions.clone();

        match step(&self.model, &self.state, &targets) {
            Ok(new_state) => {
                self.state = new_state;
                self.frame = next;
                self.refresh_proprio(&prev_positions);
                self.history.push_back(self.proprio.clone());
                while self.history.len() > self.history_len {
                    self.history.pop_front();
                }
                let terminal = check_termination(
                    &self.proprio,
                    self.track(),
                    self.frame,
                    &self.model.cfg,
                ) || self.frame >= self.track().len() - 1;
                StepOutcome {
                    done: terminal,
                    diverged: false,
                }
            }
            Err(_) => StepOutcome {
                done: true,
                diverged: true,
            },
        }
    }

    fn refresh_proprio(&mut self, prev_positions: &[Vector3<f64>]) {
        let pose = forward_kinematics(
            &self.model.spec,
            &self.state.local_q,
            &self.state.root_pos,
            &self.state.root_quat,
        );
        let dt = self.model.cfg.control_dt();
        let velocities = pose
            .positions
            .iter()
            .zip(prev_positions)
            .map(|(now, prev)| (now - prev) / dt)
            .collect();
        let mut rotations = vec![self.state.root_quat];
        rotations.extend_from_slice(&self.state.local_q);
        let mut angular_velocities = vec![self.state.root_quat.inverse() * self.state.root_ang_vel];
        angular_velocities.extend_from_slice(&self.state.local_w);
        self.proprio = Proprioception {
            rotations,
            positions: pose.positions,
            velocities,
            angular_velocities,
        };
    }

    /// Joint angular accelerations over the last control step (rad/s^2).
    pub fn joint_accelerations(&self) -> Vec<Vector3<f64>> {
        let dt = self.model.cfg.control_dt();
        self.state
            .local_w
            .iter()
            .zip(&self.prev_local_w)
            .map(|(w, p)| (w - p) / dt)
            .collect()
    }
}

/// One recorded transition.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub teacher_action: Option<Vec<f64>>,
    /// (pose, amp, energy) components of the reward.
    pub reward_breakdown: [f64; 3],
    /// Flattened discriminator window for this transition, when the agent
    /// computes one; feeds the discriminator's fake pool.
    pub amp_window: Option<Vec<f64>>,
}

/// Reward signal for one transition.
#[derive(Debug, Clone, Default)]
pub struct RewardSignal {
    pub total: f64,
    /// (pose, amp, energy).
    pub breakdown: [f64; 3],
    pub amp_window: Option<Vec<f64>>,
}

/// Transitions collected from one environment plus the bootstrap value of
/// the state after the last step (zero when that step terminated).
#[derive(Debug, Clone, Default)]
pub struct EnvRollout {
    pub steps: Vec<StepRecord>,
    pub bootstrap_value: f64,
}

/// Policy-side hooks for rollout collection. Implementations must be
/// read-only snapshots; environments step in parallel against them.
/// `observe` may draw from the environment's random stream.
pub trait RolloutAgent: Sync {
    fn observe(&self, env: &mut Env) -> Vec<f64>;
    /// Returns (action, log_prob, value).
    fn decide(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64);
    fn value(&self, obs: &[f64]) -> f64;
    fn teacher_action(&self, _env: &Env) -> Option<Vec<f64>> {
        None
    }
    /// Reward for the transition that just happened.
    fn reward(&self, env: &Env, action: &Action) -> RewardSignal;
}

/// Steps every environment `horizon` times against a fixed agent snapshot,
/// recording per-step transitions. Terminated environments reset at a
/// uniformly sampled reference frame and keep collecting. Results merge in
/// environment-index order, so collection is deterministic.
pub fn batch_rollout<A: RolloutAgent>(envs: &mut [Env], agent: &A, horizon: usize) -> Vec<EnvRollout> {
    envs.par_iter_mut()
        .map(|env| {
            let mut out = EnvRollout {
                steps: Vec::with_capacity(horizon),
                bootstrap_value: 0.0,
            };
            for _ in 0..horizon {
                let obs = agent.observe(env);
                let (action_flat, log_prob, value) = agent.decide(&obs, &mut env.rng);
                let teacher_action = agent.teacher_action(env);
                let action = Action::from_flat(&action_flat, env.model.cfg.action_bound);
                let outcome = env.step(&action);
                let signal = if outcome.diverged {
                    RewardSignal::default()
                } else {
                    agent.reward(env, &action)
                };
                out.steps.push(StepRecord {
                    obs,
                    action: action_flat,
                    log_prob,
                    value,
                    reward: signal.total,
                    done: outcome.done,
                    teacher_action,
                    reward_breakdown: signal.breakdown,
                    amp_window: signal.amp_window,
                });
                if outcome.done {
                    env.reset();
                }
            }
            if let Some(last) = out.steps.last() {
                if !last.done {
                    let obs = agent.observe(env);
                    out.bootstrap_value = agent.value(&obs);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::humanoid::{MotionFrame, ReferenceMotion};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn standing_motion(frames: usize, root_z: f64) -> ReferenceMotion {
        let spec = SkeletonSpec::default_humanoid();
        let frame = MotionFrame {
            root_translation: Vector3::new(0.0, 0.0, root_z),
            root_orientation: UnitQuaternion::identity(),
            joint_rotations: vec![UnitQuaternion::identity(); spec.joint_count() - 1],
        };
        ReferenceMotion::new(vec![frame; frames]).unwrap()
    }

    fn standing_setup(frames: usize) -> (Arc<SimModel>, Arc<MotionTrack>) {
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let root_z = spec.standing_root_height();
        let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
        let track =
            Arc::new(MotionTrack::from_motion(&standing_motion(frames, root_z), &spec).unwrap());
        (model, track)
    }

    #[test]
    fn config_validates_rates_and_gains() {
        let mut cfg = SimConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.substeps(), 2);
        cfg.sim_rate = 50.0;
        assert!(cfg.validate().is_err());
        cfg.sim_rate = 60.0;
        cfg.kp_scale = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ballistic_free_fall_matches_analytic() {
        // No ground, zero gains: the root follows h0 - g t^2 / 2 exactly
        // under the kick-drift-kick substep.
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let cfg = SimConfig {
            ground_enabled: false,
            kp_scale: 0.0,
            damping_ratio: 0.0,
            root_angular_damping: 0.0,
            upright_stiffness: 0.0,
            upright_damping: 0.0,
            ..SimConfig::default()
        };
        let model = Arc::new(SimModel::new(spec.clone(), cfg).unwrap());
        let track =
            Arc::new(MotionTrack::from_motion(&standing_motion(40, 3.0), &spec).unwrap());
        let (mut state, _) = reset_to_reference(&model, &track, 0);
        let targets: Vec<_> = track.rotations[0][1..].to_vec();
        // 0.5 s = 15 control steps at 30 Hz.
        for _ in 0..15 {
            state = step(&model, &state, &targets).unwrap();
        }
        let expected = 3.0 - 0.5 * 9.81 * 0.5 * 0.5;
        assert!(
            (state.root_pos.z - expected).abs() < 1e-2,
            "z = {} vs {}",
            state.root_pos.z,
            expected
        );
    }

    #[test]
    fn free_fall_energy_drift_below_one_percent() {
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let cfg = SimConfig {
            ground_enabled: false,
            kp_scale: 0.0,
            damping_ratio: 0.0,
            root_angular_damping: 0.0,
            upright_stiffness: 0.0,
            upright_damping: 0.0,
            ..SimConfig::default()
        };
        let model = Arc::new(SimModel::new(spec.clone(), cfg).unwrap());
        let track =
            Arc::new(MotionTrack::from_motion(&standing_motion(40, 10.0), &spec).unwrap());
        let (mut state, _) = reset_to_reference(&model, &track, 0);
        let targets: Vec<_> = track.rotations[0][1..].to_vec();
        let energy = |s: &SimState| {
            model.total_mass * (0.5 * s.root_lin_vel.norm_squared() + 9.81 * s.root_pos.z)
        };
        let e0 = energy(&state);
        for _ in 0..15 {
            state = step(&model, &state, &targets).unwrap();
        }
        let drift = (energy(&state) - e0).abs() / e0;
        assert!(drift < 0.01, "energy drift {drift}");
    }

    #[test]
    fn standing_is_stable_and_non_penetrating() {
        let (model, track) = standing_setup(40);
        let (mut state, _) = reset_to_reference(&model, &track, 0);
        let z0 = state.root_pos.z;
        let targets: Vec<_> = track.rotations[0][1..].to_vec();
        let mut min_sole = f64::INFINITY;
        // 1 s = 30 control steps.
        for _ in 0..30 {
            state = step(&model, &state, &targets).unwrap();
            let pose = forward_kinematics(
                &model.spec,
                &state.local_q,
                &state.root_pos,
                &state.root_quat,
            );
            for &f in &model.spec.foot_joints {
                min_sole = min_sole.min(pose.positions[f].z - model.spec.foot_radius);
            }
        }
        assert!(
            (state.root_pos.z - z0).abs() < 0.01,
            "root drifted {} m",
            (state.root_pos.z - z0).abs()
        );
        assert!(min_sole > -0.005, "sole penetrated to {min_sole} m");
    }

    #[test]
    fn step_is_deterministic() {
        let (model, track) = standing_setup(10);
        let (state, _) = reset_to_reference(&model, &track, 0);
        let targets: Vec<_> = track.rotations[1][1..].to_vec();
        let a = step(&model, &state, &targets).unwrap();
        let b = step(&model, &state, &targets).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quaternions_stay_normalized() {
        let (model, track) = standing_setup(10);
        let (mut state, _) = reset_to_reference(&model, &track, 0);
        let targets = pd_targets(
            &track.rotations[1][1..],
            &Action::from_flat(&vec![0.4; 42], model.cfg.action_bound),
            &model.spec,
        );
        for _ in 0..60 {
            state = step(&model, &state, &targets).unwrap();
            assert!((state.root_quat.coords.norm() - 1.0).abs() < 1e-9);
            for q in &state.local_q {
                assert!((q.coords.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn substep_count_changes_results() {
        // 60/30 Hz contract: a 120 Hz inner rate (4 substeps) must not
        // reproduce the 2-substep trajectory bit for bit.
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let track = Arc::new(
            MotionTrack::from_motion(&standing_motion(10, spec.standing_root_height()), &spec)
                .unwrap(),
        );
        let base = SimConfig::default();
        let fine = SimConfig {
            sim_rate: 120.0,
            ..SimConfig::default()
        };
        let m1 = Arc::new(SimModel::new(spec.clone(), base).unwrap());
        let m2 = Arc::new(SimModel::new(spec.clone(), fine).unwrap());
        assert_eq!(m2.cfg.substeps(), 4);
        let (s0, _) = reset_to_reference(&m1, &track, 0);
        let action = Action::from_flat(&vec![0.1; 42], m1.cfg.action_bound);
        let targets = pd_targets(&track.rotations[1][1..], &action, &spec);
        let a = step(&m1, &s0, &targets).unwrap();
        let b = step(&m2, &s0, &targets).unwrap();
        assert_ne!(a.root_pos, b.root_pos);
    }

    #[test]
    fn action_clamped_at_construction() {
        let a = Action::from_flat(&[3.0, -3.0, 0.2], 1.5);
        assert_eq!(a.offsets[0], Vector3::new(1.5, -1.5, 0.2));
    }

    #[test]
    fn termination_rules() {
        let (model, track) = standing_setup(10);
        let (_, proprio) = reset_to_reference(&model, &track, 0);
        assert!(!check_termination(&proprio, &track, 0, &model.cfg));

        let mut fallen = proprio.clone();
        let drop = fallen.positions[0].z - 0.1;
        for p in &mut fallen.positions {
            p.z -= drop;
        }
        assert!(check_termination(&fallen, &track, 0, &model.cfg));

        // Exactly at the mean-error threshold: continue (strict inequality).
        let mut shifted = proprio.clone();
        for p in &mut shifted.positions {
            p.x += model.cfg.termination_mean_error;
        }
        assert!(!check_termination(&shifted, &track, 0, &model.cfg));
        for p in &mut shifted.positions {
            p.x += 1e-9;
        }
        assert!(check_termination(&shifted, &track, 0, &model.cfg));
    }

    #[test]
    fn reset_lifts_penetrating_feet() {
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
        // Root 5 cm below standing height puts the soles 5 cm underground.
        let low = standing_motion(5, spec.standing_root_height() - 0.05);
        let track = Arc::new(MotionTrack::from_motion(&low, &spec).unwrap());
        let (state, proprio) = reset_to_reference(&model, &track, 0);
        assert_relative_eq!(state.root_pos.z, spec.standing_root_height(), epsilon = 1e-12);
        let min_sole = spec
            .foot_joints
            .iter()
            .map(|&f| proprio.positions[f].z - spec.foot_radius)
            .fold(f64::INFINITY, f64::min);
        assert!(min_sole >= -1e-12);
    }

    #[test]
    fn reset_velocities_match_reference_differences() {
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
        let frames: Vec<_> = (0..8)
            .map(|i| MotionFrame {
                root_translation: Vector3::new(0.05 * i as f64, 0.0, 1.2),
                root_orientation: UnitQuaternion::identity(),
                joint_rotations: vec![UnitQuaternion::identity(); spec.joint_count() - 1],
            })
            .collect();
        let track = Arc::new(
            MotionTrack::from_motion(&ReferenceMotion::new(frames).unwrap(), &spec).unwrap(),
        );
        let (_, proprio) = reset_to_reference(&model, &track, 3);
        for k in 0..spec.joint_count() {
            assert_relative_eq!(proprio.velocities[k], track.velocities[3][k], epsilon = 1e-12);
        }
    }

    struct ZeroAgent;

    impl RolloutAgent for ZeroAgent {
        fn observe(&self, env: &mut Env) -> Vec<f64> {
            vec![env.frame as f64]
        }
        fn decide(&self, _obs: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64) {
            (vec![0.0; 42], 0.0, 0.5)
        }
        fn value(&self, _obs: &[f64]) -> f64 {
            0.5
        }
        fn reward(&self, _env: &Env, _action: &Action) -> RewardSignal {
            RewardSignal {
                total: 1.0,
                breakdown: [1.0, 0.0, 0.0],
                amp_window: None,
            }
        }
    }

    fn make_envs(n: usize, frames: usize, seed: u64) -> Vec<Env> {
        let (model, track) = standing_setup(frames);
        let bundle = Arc::new(MotionBundle::motion_only("standing", track));
        let pool = Arc::new(vec![bundle]);
        (0..n)
            .map(|i| {
                Env::new(
                    model.clone(),
                    pool.clone(),
                    ChaCha8Rng::seed_from_u64(seed + i as u64),
                    10,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn rollout_single_step_single_env() {
        let mut envs = make_envs(1, 40, 1);
        let rollouts = batch_rollout(&mut envs, &ZeroAgent, 1);
        assert_eq!(rollouts.len(), 1);
        assert_eq!(rollouts[0].steps.len(), 1);
    }

    #[test]
    fn rollout_is_deterministic() {
        let mut a = make_envs(4, 40, 9);
        let mut b = make_envs(4, 40, 9);
        let ra = batch_rollout(&mut a, &ZeroAgent, 25);
        let rb = batch_rollout(&mut b, &ZeroAgent, 25);
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.steps.len(), y.steps.len());
            for (s, t) in x.steps.iter().zip(&y.steps) {
                assert_eq!(s.obs, t.obs);
                assert_eq!(s.reward, t.reward);
                assert_eq!(s.done, t.done);
            }
        }
    }

    #[test]
    fn rollout_matches_hand_traced_termination_schedule() {
        // Track of length 6 whose reference positions jump 10 m at frame 2:
        // from a fixed start at 0, every episode runs exactly 2 steps (the
        // second hits the mean-error termination), so a horizon of 4 records
        // dones at steps 1 and 3 for both environments.
        let spec = Arc::new(SkeletonSpec::default_humanoid());
        let model = Arc::new(SimModel::new(spec.clone(), SimConfig::default()).unwrap());
        let root_z = spec.standing_root_height();
        let frames: Vec<_> = (0..6)
            .map(|i| MotionFrame {
                root_translation: if i >= 2 {
                    Vector3::new(10.0, 0.0, root_z)
                } else {
                    Vector3::new(0.0, 0.0, root_z)
                },
                root_orientation: UnitQuaternion::identity(),
                joint_rotations: vec![UnitQuaternion::identity(); spec.joint_count() - 1],
            })
            .collect();
        let track = Arc::new(
            MotionTrack::from_motion(&ReferenceMotion::new(frames).unwrap(), &spec).unwrap(),
        );
        let pool = Arc::new(vec![Arc::new(MotionBundle::motion_only("jump", track))]);
        let mut envs: Vec<Env> = (0..2)
            .map(|i| {
                let mut e = Env::new(
                    model.clone(),
                    pool.clone(),
                    ChaCha8Rng::seed_from_u64(100 + i),
                    10,
                )
                .unwrap();
                e.fixed_start = Some(0);
                e.reset_to(0, 0);
                e
            })
            .collect();
        let rollouts = batch_rollout(&mut envs, &ZeroAgent, 4);
        for r in &rollouts {
            assert_eq!(r.steps.len(), 4);
            let dones: Vec<bool> = r.steps.iter().map(|s| s.done).collect();
            assert_eq!(dones, vec![false, true, false, true]);
        }
    }

    #[test]
    fn motion_end_is_terminal() {
        let mut envs = make_envs(1, 3, 5);
        envs[0].fixed_start = Some(0);
        envs[0].reset_to(0, 0);
        let rollouts = batch_rollout(&mut envs, &ZeroAgent, 2);
        // len 3: acting at t=0 then t=1 reaches frame 2 = len-1 -> done.
        assert!(rollouts[0].steps[1].done);
    }
}
