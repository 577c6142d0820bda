//! Versioned JSON parameter dumps with an observation-layout hash guard.
//! A layout descriptor sidecar is written next to every checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::io::{read_text, write_text};
use crate::observe::ObsLayout;
use crate::Result;

use super::net::{Linear, Mlp, PolicyNet};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetParams {
    pub layers: Vec<LayerParams>,
}

impl NetParams {
    pub fn from_mlp(net: &Mlp) -> Self {
        NetParams {
            layers: net
                .layers
                .iter()
                .map(|l| LayerParams {
                    w: l.w.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    b: l.b.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let rows = l.w.len();
            if rows == 0 || rows != l.b.len() {
                return Err(Error::structural("checkpoint layer shape invalid"));
            }
            let cols = l.w[0].len();
            if l.w.iter().any(|r| r.len() != cols) {
                return Err(Error::structural("checkpoint weight rows ragged"));
            }
            let w = nalgebra::DMatrix::from_fn(rows, cols, |i, j| l.w[i][j]);
            let b = nalgebra::DVector::from_vec(l.b.clone());
            layers.push(Linear { w, b });
        }
        Ok(Mlp { layers })
    }
}

/// Serialized actor-critic (and optional discriminator) with the layout it
/// was trained against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Role of the policy: "teacher" or "student-<obs variant>".
    pub kind: String,
    pub layout: ObsLayout,
    pub layout_hash: String,
    pub policy: NetParams,
    pub log_std: Vec<f64>,
    pub value: NetParams,
    pub discriminator: Option<NetParams>,
    pub config_hash: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        kind: impl Into<String>,
        layout: &ObsLayout,
        policy: &PolicyNet,
        value: &Mlp,
        discriminator: Option<&Mlp>,
        config_hash: impl Into<String>,
        seed: u64,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            layout: layout.clone(),
            layout_hash: layout.hash(),
            policy: NetParams::from_mlp(&policy.mlp),
            log_std: policy.log_std.clone(),
            value: NetParams::from_mlp(value),
            discriminator: discriminator.map(NetParams::from_mlp),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn policy_net(&self) -> Result<PolicyNet> {
        Ok(PolicyNet {
            mlp: self.policy.to_mlp()?,
            log_std: self.log_std.clone(),
        })
    }

    pub fn value_net(&self) -> Result<Mlp> {
        self.value.to_mlp()
    }
}

/// Writes the checkpoint and its layout-descriptor sidecar
/// (`<path>.layout.json`).
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(ckpt)
        .map_err(|e| Error::io(path.display().to_string(), e.into()))?;
    write_text(path, &json)?;
    let sidecar = sidecar_path(path);
    write_text(&sidecar, &ckpt.layout.descriptor_json())?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".layout.json");
    path.with_file_name(name)
}

/// Loads a checkpoint; when `expected_layout_hash` is given, a mismatch is a
/// versioning error.
pub fn load_checkpoint(path: &Path, expected_layout_hash: Option<&str>) -> Result<Checkpoint> {
    let text = read_text(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: 0,
            reason: format!("unsupported checkpoint version {}", ckpt.version),
        });
    }
    if ckpt.layout.hash() != ckpt.layout_hash {
        return Err(Error::LayoutMismatch {
            found: ckpt.layout.hash(),
            expected: ckpt.layout_hash.clone(),
        });
    }
    if let Some(expected) = expected_layout_hash {
        if ckpt.layout_hash != expected {
            return Err(Error::LayoutMismatch {
                found: ckpt.layout_hash.clone(),
                expected: expected.to_string(),
            });
        }
    }
    Ok(ckpt)
}
