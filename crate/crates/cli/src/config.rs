//! Experiment configuration: one TOML file drives data generation,
//! training, evaluation and ablations. Every run artifact records the
//! config hash and seed so reruns are attributable and reproducible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use raymimic_core::learn::TrainConfig;
use raymimic_core::observe::{AugmentConfig, ObsVariant};
use raymimic_core::rewards::RewardConfig;
use raymimic_core::simulator::SimConfig;
use raymimic_core::synthdata::{CameraRecipe, MotionRecipe};
use raymimic_core::Error;

/// Training/evaluation variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Teacher,
    StudentPpo,
    StudentDistill,
    StudentJoint,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Teacher => "teacher",
            Variant::StudentPpo => "student-ppo",
            Variant::StudentDistill => "student-distill",
            Variant::StudentJoint => "student-joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "teacher" => Ok(Variant::Teacher),
            "student-ppo" => Ok(Variant::StudentPpo),
            "student-distill" => Ok(Variant::StudentDistill),
            "student-joint" => Ok(Variant::StudentJoint),
            other => Err(Error::config(
                "variant",
                format!("unknown variant '{other}' (teacher | student-ppo | student-distill | student-joint)"),
            )),
        }
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(self, Variant::StudentDistill | Variant::StudentJoint)
    }
}

pub fn parse_obs_variant(s: &str) -> Result<ObsVariant, Error> {
    match s {
        "imgfeat-only" => Ok(ObsVariant::ImgfeatOnly),
        "plus-3d-root" => Ok(ObsVariant::Plus3dRoot),
        "plus-pixelray" => Ok(ObsVariant::PlusPixelray),
        other => Err(Error::config(
            "obs_variant",
            format!("unknown observation variant '{other}' (imgfeat-only | plus-3d-root | plus-pixelray)"),
        )),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub variant: Variant,
    pub obs_variant: ObsVariant,
    pub envs: usize,
    pub horizon: usize,
    /// Environment-step budget for student runs and ablations.
    pub total_env_steps: u64,
    /// Environment-step budget for teacher training.
    pub teacher_budget_steps: u64,
    /// Rolling pose-reward threshold that ends teacher training early.
    pub teacher_pose_threshold: f64,
    /// Seeds per ablation variant.
    pub ablation_seeds: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            variant: Variant::StudentJoint,
            obs_variant: ObsVariant::PlusPixelray,
            envs: 64,
            horizon: 300,
            total_env_steps: 2_000_000,
            teacher_budget_steps: 2_000_000,
            teacher_pose_threshold: 0.9,
            ablation_seeds: 3,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    /// Training corpus manifest.
    pub corpus: Option<PathBuf>,
    /// Held-out evaluation corpus manifest.
    pub eval_corpus: Option<PathBuf>,
    pub teacher_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub out_dir: PathBuf,
    pub count: usize,
    pub motion_only_fraction: f64,
    pub recipes: Vec<MotionRecipe>,
    pub cameras: Vec<CameraRecipe>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            out_dir: PathBuf::from("data/corpus"),
            count: 8,
            motion_only_fraction: 0.0,
            recipes: Vec::new(),
            cameras: vec![CameraRecipe::static_default()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            policy_hidden: vec![512, 256, 128],
            value_hidden: vec![512, 256, 128],
            disc_hidden: vec![256, 128],
        }
    }
}

/// Noise applied to the student's synthetic goal inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentSection {
    pub feature_noise: f64,
    pub tau_noise: f64,
    /// Noise on the explicit root estimate for the plus-3d-root variant.
    pub root_noise: f64,
}

impl Default for StudentSection {
    fn default() -> Self {
        StudentSection {
            feature_noise: 0.05,
            tau_noise: 0.05,
            root_noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub paths: PathsSection,
    pub corpus: CorpusSection,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub network: NetworkSection,
    pub student: StudentSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        cfg.validate_static()?;
        Ok(cfg)
    }

    /// Field-level validation independent of the executing command.
    pub fn validate_static(&self) -> Result<(), Error> {
        self.sim.validate()?;
        self.reward.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        for r in &self.corpus.recipes {
            r.validate()?;
        }
        for c in &self.corpus.cameras {
            c.validate()?;
        }
        if self.experiment.envs == 0 || self.experiment.horizon == 0 {
            return Err(Error::config("envs", "envs and horizon must be positive"));
        }
        if self.network.policy_hidden.is_empty() {
            return Err(Error::config("policy_hidden", "need at least one hidden layer"));
        }
        if !(0.0..=1.0).contains(&self.corpus.motion_only_fraction) {
            return Err(Error::config("motion_only_fraction", "must be in [0,1]"));
        }
        Ok(())
    }

    /// Resolves a path relative to the config file location.
    pub fn training_corpus(&self) -> Result<&Path, Error> {
        self.paths
            .corpus
            .as_deref()
            .ok_or_else(|| Error::config("paths.corpus", "training corpus manifest not set"))
    }

    pub fn eval_corpus(&self) -> Result<&Path, Error> {
        self.paths
            .eval_corpus
            .as_deref()
            .ok_or_else(|| Error::config("paths.eval_corpus", "evaluation corpus manifest not set"))
    }

    /// Deterministic hash of the fully resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Shrinks budgets for a fast end-to-end pass.
    pub fn apply_smoke(&mut self) {
        self.experiment.envs = self.experiment.envs.min(8);
        self.experiment.horizon = self.experiment.horizon.min(48);
        self.experiment.total_env_steps = self.experiment.total_env_steps.min(2_000);
        self.experiment.teacher_budget_steps = self.experiment.teacher_budget_steps.min(2_000);
        self.experiment.ablation_seeds = 1;
        self.corpus.count = self.corpus.count.min(4);
    }
}

pub fn require_exists(path: &Path, field: &str) -> Result<(), Error> {
    if !path.exists() {
        return Err(Error::config(
            field,
            format!("path does not exist: {}", path.display()),
        ));
    }
    Ok(())
}
