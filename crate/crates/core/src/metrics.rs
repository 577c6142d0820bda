//! Kinematic and physical-plausibility metrics over joint trajectories:
//! similarity alignment, the MPJPE family, foot sliding and height variance,
//! temporal consistency, and the 100-frame clip evaluation protocol.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Frames x joints world positions, meters.
pub type JointTrajectory = Vec<Vec<Vector3<f64>>>;

const MM: f64 = 1000.0;

/// Similarity transform `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares similarity fit (scale, rotation, translation) mapping `from`
/// points onto `to` points. Requires at least 3 points that are not
/// collinear.
pub fn procrustes_align(to: &[Vector3<f64>], from: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    if to.len() != from.len() {
        return Err(Error::structural(format!(
            "{} target points vs {} source points",
            to.len(),
            from.len()
        )));
    }
    let n = to.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mu_to: Vector3<f64> = to.iter().sum::<Vector3<f64>>() / nf;
    let mu_from: Vector3<f64> = from.iter().sum::<Vector3<f64>>() / nf;
    let var_from: f64 = from.iter().map(|p| (p - mu_from).norm_squared()).sum::<f64>() / nf;
    if var_from <= 1e-18 {
        return Err(Error::DegenerateGeometry("source points coincide".into()));
    }
    let mut cov = Matrix3::<f64>::zeros();
    for (a, b) in to.iter().zip(from) {
        cov += (a - mu_to) * (b - mu_from).transpose();
    }
    cov /= nf;
    let svd = cov.svd(true, true);
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1e-300) {
        return Err(Error::DegenerateGeometry(
            "points are collinear; rotation underdetermined".into(),
        ));
    }
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    let s_fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * s_fix * v_t;
    let scale = (svd.singular_values.component_mul(&Vector3::new(1.0, 1.0, d))).sum() / var_from;
    let translation = mu_to - scale * (rotation * mu_from);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn check_paired(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<(usize, usize)> {
    if pred.len() != gt.len() {
        return Err(Error::structural(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::structural("empty trajectories"));
    }
    let j = pred[0].len();
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != j || g.len() != j {
            return Err(Error::structural(format!("frame {f} joint count mismatch")));
        }
    }
    Ok((pred.len(), j))
}

/// Root-aligns each frame at joint 0 and returns the per-frame centered
/// clouds, flattened for alignment.
fn root_centered(traj: &JointTrajectory) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(traj.len() * traj[0].len());
    for frame in traj {
        let root = frame[0];
        out.extend(frame.iter().map(|p| p - root));
    }
    out
}

/// Mean per-joint position errors, in millimeters.
///
/// `mpj` aligns the root joint per frame, `wa` uses raw world coordinates,
/// and `pa` additionally fits one similarity transform per sequence to the
/// root-aligned clouds, keeping it only when it reduces the error.
pub fn mpjpe_suite(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<(f64, f64, f64)> {
    let (frames, j) = check_paired(pred, gt)?;
    let total = (frames * j) as f64;

    let mut wa = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            wa += (a - b).norm();
        }
    }
    wa = wa / total * MM;

    let pred_c = root_centered(pred);
    let gt_c = root_centered(gt);
    let mpj =
        pred_c.iter().zip(&gt_c).map(|(a, b)| (a - b).norm()).sum::<f64>() / total * MM;

    let pa = match procrustes_align(&gt_c, &pred_c) {
        Ok(t) => {
            let aligned = pred_c
                .iter()
                .zip(&gt_c)
                .map(|(a, b)| (t.apply(a) - b).norm())
                .sum::<f64>()
                / total
                * MM;
            aligned.min(mpj)
        }
        Err(_) => mpj,
    };
    Ok((pa, wa, mpj))
}

/// Per-frame mean error after the given sequence-level alignment of the
/// root-centered clouds; used for the per-frame success criterion.
fn per_frame_pa_errors(
    pred: &JointTrajectory,
    gt: &JointTrajectory,
    t: &SimilarityTransform,
) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let (rp, rg) = (p[0], g[0]);
            p.iter()
                .zip(g)
                .map(|(a, b)| (t.apply(&(a - rp)) - (b - rg)).norm())
                .sum::<f64>()
                / p.len() as f64
                * MM
        })
        .collect()
}

/// Foot sliding (mm per contact frame) and foot height variance (mm^2 of
/// the lowest-quartile lower-foot heights).
///
/// Heights are sole heights: foot joint z minus `foot_radius`. A frame is in
/// contact when the lower foot's sole is below `contact_threshold` (meters).
pub fn foot_metrics(
    motion: &JointTrajectory,
    foot_joints: &[usize],
    foot_radius: f64,
    contact_threshold: f64,
) -> Result<(f64, f64)> {
    if motion.is_empty() {
        return Err(Error::structural("empty trajectory"));
    }
    if foot_joints.is_empty() {
        return Err(Error::structural("no foot joints designated"));
    }
    let lower: Vec<(usize, f64)> = motion
        .iter()
        .map(|frame| {
            foot_joints
                .iter()
                .map(|&fj| (fj, frame[fj].z - foot_radius))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one foot joint")
        })
        .collect();

    // HV: variance of the lowest 25% of per-frame lower-foot heights.
    let mut heights: Vec<f64> = lower.iter().map(|(_, h)| *h * MM).collect();
    heights.sort_by(f64::total_cmp);
    let k = ((heights.len() as f64 * 0.25).floor() as usize).max(1);
    let quartile = &heights[..k];
    let mean = quartile.iter().sum::<f64>() / k as f64;
    let hv = quartile.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / k as f64;

    // FS: mean horizontal displacement of the contacting foot.
    let mut slide = 0.0;
    let mut contacts = 0usize;
    for f in 1..motion.len() {
        let (fj, h) = lower[f];
        if h < contact_threshold {
            let d = motion[f][fj] - motion[f - 1][fj];
            slide += (d.x * d.x + d.y * d.y).sqrt() * MM;
            contacts += 1;
        }
    }
    let fs = if contacts > 0 { slide / contacts as f64 } else { 0.0 };
    Ok((fs, hv))
}

/// Velocity error (mm/s) and acceleration error (mm/s^2) by finite
/// differences at the given frame rate. Requires at least 3 frames.
pub fn temporal_metrics(
    pred: &JointTrajectory,
    gt: &JointTrajectory,
    fps: f64,
) -> Result<(f64, f64)> {
    let (frames, j) = check_paired(pred, gt)?;
    if frames < 3 {
        return Err(Error::structural(format!(
            "temporal metrics need at least 3 frames, got {frames}"
        )));
    }
    let mut vel = 0.0;
    for f in 0..frames - 1 {
        for k in 0..j {
            let vp = (pred[f + 1][k] - pred[f][k]) * fps;
            let vg = (gt[f + 1][k] - gt[f][k]) * fps;
            vel += (vp - vg).norm();
        }
    }
    vel = vel / ((frames - 1) * j) as f64 * MM;

    let mut acc = 0.0;
    for f in 1..frames - 1 {
        for k in 0..j {
            let ap = (pred[f + 1][k] - 2.0 * pred[f][k] + pred[f - 1][k]) * fps * fps;
            let ag = (gt[f + 1][k] - 2.0 * gt[f][k] + gt[f - 1][k]) * fps * fps;
            acc += (ap - ag).norm();
        }
    }
    acc = acc / ((frames - 2) * j) as f64 * MM;
    Ok((acc, vel))
}

/// Protocol parameters for [`clip_protocol`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipProtocolConfig {
    pub clip_len: usize,
    /// Clips with PA-MPJPE above this (mm) are discarded from averages.
    pub discard_pa_mm: f64,
    /// A clip succeeds when per-frame PA error stays below this (mm).
    pub success_pa_mm: f64,
    pub foot_joints: Vec<usize>,
    pub foot_radius: f64,
    pub contact_threshold: f64,
    pub fps: f64,
}

impl ClipProtocolConfig {
    pub fn standard(foot_joints: Vec<usize>, foot_radius: f64) -> Self {
        ClipProtocolConfig {
            clip_len: 100,
            discard_pa_mm: 100.0,
            success_pa_mm: 50.0,
            foot_joints,
            foot_radius,
            contact_threshold: 0.05,
            fps: crate::humanoid::MOTION_FPS,
        }
    }
}

/// Metrics for one evaluated clip. Column order mirrors the report format:
/// PA, WA, MPJ, FS, HV, ACC, VEL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: usize,
    pub start_frame: usize,
    pub pa: f64,
    pub wa: f64,
    pub mpj: f64,
    pub fs: f64,
    pub hv: f64,
    pub acc: f64,
    pub vel: f64,
    pub success: bool,
    pub discarded: bool,
}

/// Mean metrics over retained clips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub pa: f64,
    pub wa: f64,
    pub mpj: f64,
    pub fs: f64,
    pub hv: f64,
    pub acc: f64,
    pub vel: f64,
}

/// Full evaluation report: per-clip breakdown plus aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clips: Vec<ClipMetrics>,
    /// `None` when no clip survived the discard filter.
    pub aggregate: Option<AggregateMetrics>,
    pub success_rate: f64,
    pub discard_fraction: f64,
    pub dropped_frames: usize,
    /// Set when the sequence was shorter than one clip; no silent zeros.
    pub empty: bool,
}

/// Splits paired motions into consecutive fixed-length clips, evaluates each
/// independently, discards clips whose PA-MPJPE exceeds the threshold from
/// the averages, and reports the per-frame success rate.
pub fn clip_protocol(
    pred: &JointTrajectory,
    gt: &JointTrajectory,
    cfg: &ClipProtocolConfig,
) -> Result<MetricsReport> {
    let (frames, _) = check_paired(pred, gt)?;
    let n_clips = frames / cfg.clip_len;
    if n_clips == 0 {
        return Ok(MetricsReport {
            clips: Vec::new(),
            aggregate: None,
            success_rate: 0.0,
            discard_fraction: 0.0,
            dropped_frames: frames,
            empty: true,
        });
    }
    let mut clips = Vec::with_capacity(n_clips);
    for c in 0..n_clips {
        let lo = c * cfg.clip_len;
        let hi = lo + cfg.clip_len;
        let p = pred[lo..hi].to_vec();
        let g = gt[lo..hi].to_vec();
        let (pa, wa, mpj) = mpjpe_suite(&p, &g)?;
        let (fs, hv) = foot_metrics(&p, &cfg.foot_joints, cfg.foot_radius, cfg.contact_threshold)?;
        let (acc, vel) = temporal_metrics(&p, &g, cfg.fps)?;
        let align = procrustes_align(&root_centered(&g), &root_centered(&p))
            .unwrap_or_else(|_| SimilarityTransform::identity());
        let success = per_frame_pa_errors(&p, &g, &align)
            .iter()
            .all(|e| *e < cfg.success_pa_mm);
        clips.push(ClipMetrics {
            clip: c,
            start_frame: lo,
            pa,
            wa,
            mpj,
            fs,
            hv,
            acc,
            vel,
            success,
            discarded: pa > cfg.discard_pa_mm,
        });
    }
    let retained: Vec<&ClipMetrics> = clips.iter().filter(|c| !c.discarded).collect();
    let aggregate = if retained.is_empty() {
        None
    } else {
        let n = retained.len() as f64;
        let mean = |f: fn(&ClipMetrics) -> f64| retained.iter().map(|c| f(c)).sum::<f64>() / n;
        Some(AggregateMetrics {
            pa: mean(|c| c.pa),
            wa: mean(|c| c.wa),
            mpj: mean(|c| c.mpj),
            fs: mean(|c| c.fs),
            hv: mean(|c| c.hv),
            acc: mean(|c| c.acc),
            vel: mean(|c| c.vel),
        })
    };
    Ok(MetricsReport {
        success_rate: clips.iter().filter(|c| c.success).count() as f64 / n_clips as f64,
        discard_fraction: clips.iter().filter(|c| c.discarded).count() as f64 / n_clips as f64,
        dropped_frames: frames - n_clips * cfg.clip_len,
        clips,
        aggregate,
        empty: false,
    })
}
