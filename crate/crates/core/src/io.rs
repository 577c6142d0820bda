//! Line-delimited JSON file formats: reference motions, camera trajectories,
//! keypoint tracks, corpus manifests, and generic helpers. Quaternions are
//! stored `[w, x, y, z]`; rotation matrices row-major. Files are written
//! atomically (temp file + rename).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{CameraModel, CameraToWorld, Keypoint2DSet};
use crate::humanoid::{MotionFrame, ReferenceMotion};
use crate::Result;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes one JSON record per line, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)
            .map_err(|e| Error::io(path_str(path), e.into()))?;
        buf.push(b'\n');
    }
    fs::write(&tmp, &buf).map_err(|e| Error::io(path_str(&tmp), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path_str(path), e))?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path_str(path), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path_str(path),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

fn quat_from_wxyz(v: [f64; 4], path: &Path, line: usize) -> Result<UnitQuaternion<f64>> {
    let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Format {
            path: path_str(path),
            line,
            reason: format!("quaternion norm {norm} too far from 1"),
        });
    }
    // Stored values come from unit quaternions; keeping the bits untouched
    // makes save/load an exact roundtrip.
    Ok(UnitQuaternion::new_unchecked(q))
}

/// One line of a motion file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionRecord {
    pub frame: usize,
    pub root_pos: [f64; 3],
    pub root_quat: [f64; 4],
    pub joint_quats: Vec<[f64; 4]>,
}

pub fn save_motion(path: &Path, motion: &ReferenceMotion) -> Result<()> {
    let records: Vec<MotionRecord> = motion
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| MotionRecord {
            frame: i,
            root_pos: [
                f.root_translation.x,
                f.root_translation.y,
                f.root_translation.z,
            ],
            root_quat: quat_to_wxyz(&f.root_orientation),
            joint_quats: f.joint_rotations.iter().map(quat_to_wxyz).collect(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Loads and validates a reference motion; frame indices must be
/// consecutive from zero.
pub fn load_motion(path: &Path) -> Result<ReferenceMotion> {
    let records: Vec<MotionRecord> = read_jsonl(path)?;
    let mut frames = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.frame != i {
            return Err(Error::Format {
                path: path_str(path),
                line: i + 1,
                reason: format!("frame index {} out of order (expected {i})", r.frame),
            });
        }
        frames.push(MotionFrame {
            root_translation: Vector3::new(r.root_pos[0], r.root_pos[1], r.root_pos[2]),
            root_orientation: quat_from_wxyz(r.root_quat, path, i + 1)?,
            joint_rotations: r
                .joint_quats
                .iter()
                .map(|q| quat_from_wxyz(*q, path, i + 1))
                .collect::<Result<Vec<_>>>()?,
        });
    }
    ReferenceMotion::new(frames)
}

/// One line of a camera trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub frame: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 3x3 camera-to-world rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

pub fn save_cameras(path: &Path, cams: &[(CameraModel, CameraToWorld)]) -> Result<()> {
    let records: Vec<CameraRecord> = cams
        .iter()
        .enumerate()
        .map(|(i, (cam, c2w))| {
            let r = c2w.rotation();
            CameraRecord {
                frame: i,
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
                rotation: [
                    r.m11, r.m12, r.m13, r.m21, r.m22, r.m23, r.m31, r.m32, r.m33,
                ],
                translation: [c2w.translation().x, c2w.translation().y, c2w.translation().z],
            }
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn load_cameras(path: &Path) -> Result<Vec<(CameraModel, CameraToWorld)>> {
    let records: Vec<CameraRecord> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.frame != i {
            return Err(Error::Format {
                path: path_str(path),
                line: i + 1,
                reason: format!("frame index {} out of order (expected {i})", r.frame),
            });
        }
        let cam = CameraModel::new(r.fx, r.fy, r.cx, r.cy)?;
        let m = r.rotation;
        let rot = Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]);
        let c2w = CameraToWorld::new(
            rot,
            Vector3::new(r.translation[0], r.translation[1], r.translation[2]),
        )?;
        out.push((cam, c2w));
    }
    Ok(out)
}

/// One line of a keypoint file: per joint (u, v, confidence, mask).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub frame: usize,
    pub joints: Vec<[f64; 4]>,
}

pub fn save_keypoints(path: &Path, frames: &[Keypoint2DSet]) -> Result<()> {
    let records: Vec<KeypointRecord> = frames
        .iter()
        .enumerate()
        .map(|(i, kps)| KeypointRecord {
            frame: i,
            joints: (0..kps.len())
                .map(|j| {
                    [
                        kps.pixels[j][0],
                        kps.pixels[j][1],
                        kps.confidence[j],
                        if kps.visible[j] { 1.0 } else { 0.0 },
                    ]
                })
                .collect(),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn load_keypoints(path: &Path) -> Result<Vec<Keypoint2DSet>> {
    let records: Vec<KeypointRecord> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.frame != i {
            return Err(Error::Format {
                path: path_str(path),
                line: i + 1,
                reason: format!("frame index {} out of order (expected {i})", r.frame),
            });
        }
        let pixels: Vec<[f64; 2]> = r.joints.iter().map(|j| [j[0], j[1]]).collect();
        let confidence: Vec<f64> = r.joints.iter().map(|j| j[2]).collect();
        let visible: Vec<bool> = r.joints.iter().map(|j| j[3] != 0.0).collect();
        out.push(Keypoint2DSet::new(pixels, confidence, visible).map_err(|e| Error::Format {
            path: path_str(path),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One line of a corpus manifest. Paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub motion_path: String,
    pub camera_path: Option<String>,
    pub keypoint_path: Option<String>,
    pub recipe: String,
    pub seed: u64,
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(path)
}

/// Resolves a manifest-relative path.
pub fn manifest_relative(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(rel)
}

/// Writes a string atomically.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(path_str(&tmp), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path_str(&tmp), e))?;
    f.flush().map_err(|e| Error::io(path_str(&tmp), e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path_str(path), e))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))
}
