//! Subcommand implementations: data generation, teacher/student training,
//! evaluation, and the two ablation families.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use raymimic_core::humanoid::SkeletonSpec;
use raymimic_core::learn::{
    eval_trajectory, load_checkpoint, save_checkpoint, train_student, train_teacher, Agent,
    Checkpoint, GoalMode, PolicyNet, Strategy, TrainOutcome, TrainRun, TrainerSetup,
};
use raymimic_core::metrics::{clip_protocol, ClipMetrics, ClipProtocolConfig, MetricsReport};
use raymimic_core::observe::{student_layout, teacher_layout, ObsVariant};
use raymimic_core::simulator::{load_bundles, MotionBundle, SimModel};
use raymimic_core::synthdata::build_corpus;
use raymimic_core::{io, Error};

use crate::artifacts::{
    format_table, outcome_name, write_curve, write_json, write_stats, DirLock, RunInfo,
};
use crate::config::{require_exists, ExperimentConfig, Variant};

/// Outcome of a command, mapped to process exit codes by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    /// Training budget ran out before the target threshold was met.
    BudgetWarning,
}

fn spec() -> SkeletonSpec {
    SkeletonSpec::default_humanoid()
}

fn model_from(cfg: &ExperimentConfig) -> Result<Arc<SimModel>, Error> {
    Ok(Arc::new(SimModel::new(
        Arc::new(spec()),
        cfg.sim.clone(),
    )?))
}

fn strategy_of(variant: Variant) -> Strategy {
    match variant {
        Variant::Teacher | Variant::StudentPpo => Strategy::PpoOnly,
        Variant::StudentDistill => Strategy::DistillOnly,
        Variant::StudentJoint => Strategy::PpoDistill,
    }
}

fn student_goal(cfg: &ExperimentConfig, obs_variant: ObsVariant) -> GoalMode {
    GoalMode::Student {
        variant: obs_variant,
        feature_noise: cfg.student.feature_noise,
        tau_noise: cfg.student.tau_noise,
        root_noise: cfg.student.root_noise,
        augment: cfg.augment.clone(),
    }
}

fn load_teacher(cfg: &ExperimentConfig, j: usize) -> Result<PolicyNet, Error> {
    let path = cfg.paths.teacher_checkpoint.as_deref().ok_or_else(|| {
        Error::config(
            "paths.teacher_checkpoint",
            "distillation variants require a teacher checkpoint",
        )
    })?;
    require_exists(path, "paths.teacher_checkpoint")?;
    let ckpt = load_checkpoint(path, Some(&teacher_layout(j).hash()))?;
    if ckpt.kind != "teacher" {
        return Err(Error::config(
            "paths.teacher_checkpoint",
            format!("checkpoint kind '{}' is not a teacher", ckpt.kind),
        ));
    }
    ckpt.policy_net()
}

fn trainer_setup(
    cfg: &ExperimentConfig,
    variant: Variant,
    obs_variant: ObsVariant,
    seed: u64,
    pool: Arc<Vec<Arc<MotionBundle>>>,
    model: Arc<SimModel>,
    teacher: Option<PolicyNet>,
) -> TrainerSetup {
    TrainerSetup {
        model,
        pool,
        env_count: cfg.experiment.envs,
        horizon: cfg.experiment.horizon,
        seed,
        policy_hidden: cfg.network.policy_hidden.clone(),
        value_hidden: cfg.network.value_hidden.clone(),
        disc_hidden: cfg.network.disc_hidden.clone(),
        train: cfg.train.clone(),
        reward: cfg.reward.clone(),
        goal: match variant {
            Variant::Teacher => GoalMode::Teacher,
            _ => student_goal(cfg, obs_variant),
        },
        strategy: strategy_of(variant),
        teacher,
    }
}

#[allow(clippy::too_many_arguments)]
fn save_run(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    command: &str,
    variant: Variant,
    obs_variant: ObsVariant,
    seed: u64,
    run: &TrainRun,
    kind: &str,
) -> Result<(), Error> {
    let ckpt = Checkpoint::new(
        kind,
        &run.layout,
        &run.policy,
        &run.value,
        run.discriminator.as_ref(),
        cfg.hash(),
        seed,
    );
    save_checkpoint(&out_dir.join("checkpoint.json"), &ckpt)?;
    write_stats(&out_dir.join("stats.jsonl"), &run.stats)?;
    write_curve(&out_dir.join("curve.jsonl"), &run.stats)?;
    write_json(
        &out_dir.join("run.json"),
        &RunInfo {
            command: command.to_string(),
            variant: variant.name().to_string(),
            obs_variant: obs_variant.name().to_string(),
            seed,
            config_hash: cfg.hash(),
            env_steps: run.env_steps,
            outcome: outcome_name(run.outcome).to_string(),
        },
    )?;
    Ok(())
}

/// `gen-data`: builds the procedural corpus described by the `[corpus]`
/// section and prints a manifest summary.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<ExitStatus, Error> {
    if cfg.corpus.recipes.is_empty() {
        return Err(Error::config("corpus.recipes", "no motion recipes configured"));
    }
    let entries = build_corpus(
        &cfg.corpus.recipes,
        &cfg.corpus.cameras,
        cfg.corpus.count,
        cfg.corpus.motion_only_fraction,
        cfg.experiment.seed,
        &spec(),
        &cfg.corpus.out_dir,
    )?;
    let motion_only = entries.iter().filter(|e| e.keypoint_path.is_none()).count();
    println!(
        "corpus: {} sequences ({} motion-only) -> {}",
        entries.len(),
        motion_only,
        cfg.corpus.out_dir.display()
    );
    for e in &entries {
        println!("  {}  {}  seed={}", e.id, e.recipe, e.seed);
    }
    Ok(ExitStatus::Success)
}

/// `train-teacher`: PPO-only motion imitation on privileged observations.
/// Exits with the budget-warning status when the pose-reward threshold was
/// not reached.
pub fn cmd_train_teacher(cfg: &ExperimentConfig) -> Result<ExitStatus, Error> {
    let corpus = cfg.training_corpus()?;
    require_exists(corpus, "paths.corpus")?;
    let out_dir = cfg.experiment.out_dir.clone();
    let _lock = DirLock::acquire(&out_dir)?;

    let model = model_from(cfg)?;
    let pool = Arc::new(load_bundles(corpus, &model.spec)?);
    let setup = trainer_setup(
        cfg,
        Variant::Teacher,
        cfg.experiment.obs_variant,
        cfg.experiment.seed,
        pool,
        model,
        None,
    );
    let run = train_teacher(
        setup,
        cfg.experiment.teacher_budget_steps,
        cfg.experiment.teacher_pose_threshold,
    )?;
    save_run(
        &out_dir,
        cfg,
        "train-teacher",
        Variant::Teacher,
        cfg.experiment.obs_variant,
        cfg.experiment.seed,
        &run,
        "teacher",
    )?;
    let last = run.stats.last();
    println!(
        "teacher: {} after {} env steps (pose reward {:.3})",
        outcome_name(run.outcome),
        run.env_steps,
        last.map_or(f64::NAN, |s| s.r_pose),
    );
    match run.outcome {
        TrainOutcome::BudgetExhausted => Ok(ExitStatus::BudgetWarning),
        _ => Ok(ExitStatus::Success),
    }
}

/// `train-student`: trains the vision-conditioned policy under the selected
/// learning strategy and observation variant.
pub fn cmd_train_student(
    cfg: &ExperimentConfig,
    variant_override: Option<Variant>,
) -> Result<ExitStatus, Error> {
    let variant = variant_override.unwrap_or(cfg.experiment.variant);
    if variant == Variant::Teacher {
        return Err(Error::config("variant", "train-student expects a student variant"));
    }
    let corpus = cfg.training_corpus()?;
    require_exists(corpus, "paths.corpus")?;
    let out_dir = cfg.experiment.out_dir.clone();
    let _lock = DirLock::acquire(&out_dir)?;

    let model = model_from(cfg)?;
    let teacher = if variant.needs_teacher() {
        Some(load_teacher(cfg, model.spec.joint_count())?)
    } else {
        None
    };
    let pool = Arc::new(load_bundles(corpus, &model.spec)?);
    let setup = trainer_setup(
        cfg,
        variant,
        cfg.experiment.obs_variant,
        cfg.experiment.seed,
        pool,
        model,
        teacher,
    );
    let run = train_student(setup, cfg.experiment.total_env_steps)?;
    let kind = format!("student-{}", cfg.experiment.obs_variant.name());
    save_run(
        &out_dir,
        cfg,
        "train-student",
        variant,
        cfg.experiment.obs_variant,
        cfg.experiment.seed,
        &run,
        &kind,
    )?;
    println!(
        "student [{} / {}]: {} env steps, final mean reward {:.3}, L_distill {:.4}",
        variant.name(),
        cfg.experiment.obs_variant.name(),
        run.env_steps,
        run.stats.last().map_or(f64::NAN, |s| s.mean_reward),
        run.stats.last().map_or(f64::NAN, |s| s.l_distill),
    );
    Ok(ExitStatus::Success)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEval {
    pub id: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_kind: String,
    pub sequences: usize,
    /// Pooled over every clip of every sequence.
    pub pa: Option<f64>,
    pub wa: Option<f64>,
    pub mpj: Option<f64>,
    pub fs: Option<f64>,
    pub hv: Option<f64>,
    pub acc: Option<f64>,
    pub vel: Option<f64>,
    pub success_rate: f64,
    pub discard_fraction: f64,
    pub total_clips: usize,
    pub empty: bool,
}

fn pool_clips(reports: &[SequenceEval]) -> (Vec<&ClipMetrics>, usize) {
    let clips: Vec<&ClipMetrics> = reports
        .iter()
        .flat_map(|r| r.report.clips.iter())
        .collect();
    let total = clips.len();
    (clips, total)
}

fn summarize(
    cfg_hash: String,
    seed: u64,
    kind: String,
    reports: &[SequenceEval],
) -> EvalSummary {
    let (clips, total) = pool_clips(reports);
    let retained: Vec<&&ClipMetrics> = clips.iter().filter(|c| !c.discarded).collect();
    let mean = |f: fn(&ClipMetrics) -> f64| -> Option<f64> {
        if retained.is_empty() {
            None
        } else {
            Some(retained.iter().map(|c| f(c)).sum::<f64>() / retained.len() as f64)
        }
    };
    EvalSummary {
        config_hash: cfg_hash,
        seed,
        checkpoint_kind: kind,
        sequences: reports.len(),
        pa: mean(|c| c.pa),
        wa: mean(|c| c.wa),
        mpj: mean(|c| c.mpj),
        fs: mean(|c| c.fs),
        hv: mean(|c| c.hv),
        acc: mean(|c| c.acc),
        vel: mean(|c| c.vel),
        success_rate: if total == 0 {
            0.0
        } else {
            clips.iter().filter(|c| c.success).count() as f64 / total as f64
        },
        discard_fraction: if total == 0 {
            0.0
        } else {
            clips.iter().filter(|c| c.discarded).count() as f64 / total as f64
        },
        total_clips: total,
        empty: total == 0,
    }
}

/// Rolls out a checkpoint on a corpus and scores it with the clip protocol.
/// Writes per-sequence reports, simulated-motion dumps, and a pooled
/// summary under `out_dir`.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    corpus_manifest: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<EvalSummary, Error> {
    let model = model_from(cfg)?;
    let j = model.spec.joint_count();

    // The layout expected by the active config gates the checkpoint.
    let (expected_layout, goal) = match cfg.experiment.variant {
        Variant::Teacher => (teacher_layout(j), GoalMode::Teacher),
        _ => {
            let v = cfg.experiment.obs_variant;
            let mut goal = student_goal(cfg, v);
            // Evaluation disables training-time masking/perturbation.
            if let GoalMode::Student { augment, .. } = &mut goal {
                *augment = raymimic_core::observe::AugmentConfig::disabled();
            }
            (
                student_layout(j, raymimic_core::observe::feature_dim(j), v),
                goal,
            )
        }
    };
    let ckpt = load_checkpoint(ckpt_path, Some(&expected_layout.hash()))?;
    let policy = ckpt.policy_net()?;
    let value = ckpt.value_net()?;

    let bundles = load_bundles(corpus_manifest, &model.spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let protocol = ClipProtocolConfig::standard(model.spec.foot_joints.clone(), model.spec.foot_radius);
    let mut reports = Vec::new();
    for bundle in &bundles {
        let agent = Agent {
            policy: &policy,
            value: &value,
            discriminator: None,
            teacher: None,
            reward_cfg: &cfg.reward,
            goal: goal.clone(),
            amp_window: cfg.train.amp_window,
            deterministic: true,
        };
        let (pred, sim_motion) = eval_trajectory(&model, bundle, &agent, seed);
        let gt = bundle.track.positions.clone();
        let report = clip_protocol(&pred, &gt, &protocol)?;
        io::save_motion(
            &out_dir.join(format!("{}.sim.jsonl", bundle.id)),
            &raymimic_core::humanoid::ReferenceMotion {
                frames: sim_motion,
                fps: raymimic_core::humanoid::MOTION_FPS,
            },
        )?;
        let mut lines: Vec<serde_json::Value> = report
            .clips
            .iter()
            .map(|c| serde_json::to_value(c).expect("clip serializes"))
            .collect();
        lines.push(serde_json::json!({
            "aggregate": true,
            "id": bundle.id,
            "summary": &report.aggregate,
            "success_rate": report.success_rate,
            "discard_fraction": report.discard_fraction,
            "dropped_frames": report.dropped_frames,
            "empty": report.empty,
        }));
        io::write_jsonl(&out_dir.join(format!("{}.report.jsonl", bundle.id)), &lines)?;
        reports.push(SequenceEval {
            id: bundle.id.clone(),
            report,
        });
    }
    let summary = summarize(cfg.hash(), seed, ckpt.kind.clone(), &reports);
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `evaluate`: scores a checkpoint on the held-out corpus.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>) -> Result<ExitStatus, Error> {
    let ckpt_path = checkpoint
        .or_else(|| Some(cfg.experiment.out_dir.join("checkpoint.json")))
        .unwrap();
    require_exists(&ckpt_path, "checkpoint")?;
    let corpus = cfg.eval_corpus()?;
    require_exists(corpus, "paths.eval_corpus")?;
    let out_dir = cfg.experiment.out_dir.join("eval");
    let summary = evaluate_checkpoint(cfg, &ckpt_path, corpus, &out_dir, cfg.experiment.seed)?;
    if summary.empty {
        println!("evaluation: empty report (no full clips in the test corpus)");
    } else {
        println!(
            "evaluation over {} sequences / {} clips: PA {:.1} WA {:.1} MPJ {:.1} FS {:.2} HV {:.2} ACC {:.1} VEL {:.1} | success {:.1}% discards {:.1}%",
            summary.sequences,
            summary.total_clips,
            summary.pa.unwrap_or(f64::NAN),
            summary.wa.unwrap_or(f64::NAN),
            summary.mpj.unwrap_or(f64::NAN),
            summary.fs.unwrap_or(f64::NAN),
            summary.hv.unwrap_or(f64::NAN),
            summary.acc.unwrap_or(f64::NAN),
            summary.vel.unwrap_or(f64::NAN),
            summary.success_rate * 100.0,
            summary.discard_fraction * 100.0,
        );
    }
    Ok(ExitStatus::Success)
}

/// Which comparison family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Strategy,
    Observation,
    Both,
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "strategy" => Ok(AblationKind::Strategy),
            "observation" => Ok(AblationKind::Observation),
            "both" => Ok(AblationKind::Both),
            other => Err(Error::config(
                "ablation",
                format!("unknown ablation '{other}' (strategy | observation | both)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub pa: Option<f64>,
    pub wa: Option<f64>,
    pub mpj: Option<f64>,
    pub success_rate: Option<f64>,
    pub final_reward: Option<f64>,
    pub early_reward: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub family: String,
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
}

#[allow(clippy::too_many_arguments)]
fn run_one_ablation(
    cfg: &ExperimentConfig,
    variant: Variant,
    obs_variant: ObsVariant,
    seed: u64,
    pool: &Arc<Vec<Arc<MotionBundle>>>,
    model: &Arc<SimModel>,
    teacher: &PolicyNet,
    eval_manifest: &Path,
    run_dir: &Path,
    label: &str,
) -> Result<AblationRow, Error> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    let teacher_net = if variant.needs_teacher() {
        Some(teacher.clone())
    } else {
        None
    };
    let setup = trainer_setup(cfg, variant, obs_variant, seed, pool.clone(), model.clone(), teacher_net);
    let run = train_student(setup, cfg.experiment.total_env_steps)?;

    write_stats(&run_dir.join("stats.jsonl"), &run.stats)?;
    write_curve(&run_dir.join("curve.jsonl"), &run.stats)?;
    let kind = format!("student-{}", obs_variant.name());
    let ckpt = Checkpoint::new(&kind, &run.layout, &run.policy, &run.value, None, cfg.hash(), seed);
    let ckpt_path = run_dir.join("checkpoint.json");
    save_checkpoint(&ckpt_path, &ckpt)?;

    // Evaluate with the matching observation variant.
    let mut eval_cfg = cfg.clone();
    eval_cfg.experiment.variant = variant;
    eval_cfg.experiment.obs_variant = obs_variant;
    let summary = evaluate_checkpoint(
        &eval_cfg,
        &ckpt_path,
        eval_manifest,
        &run_dir.join("eval"),
        seed,
    )?;

    let quarter = (run.stats.len() / 4).max(1);
    let early_reward =
        run.stats.iter().take(quarter).map(|s| s.mean_reward).sum::<f64>() / quarter as f64;
    let final_reward =
        run.stats.iter().rev().take(quarter).map(|s| s.mean_reward).sum::<f64>() / quarter as f64;
    Ok(AblationRow {
        variant: label.to_string(),
        seed,
        pa: summary.pa,
        wa: summary.wa,
        mpj: summary.mpj,
        success_rate: Some(summary.success_rate),
        final_reward: Some(final_reward),
        early_reward: Some(early_reward),
        error: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn ablation_family(
    cfg: &ExperimentConfig,
    family: &str,
    combos: &[(Variant, ObsVariant, String)],
    pool: &Arc<Vec<Arc<MotionBundle>>>,
    model: &Arc<SimModel>,
    teacher: &PolicyNet,
    eval_manifest: &Path,
) -> Result<AblationTable, Error> {
    let base = cfg.experiment.out_dir.join("ablation").join(family);
    let mut rows = Vec::new();
    for (variant, obs_variant, label) in combos {
        for s in 0..cfg.experiment.ablation_seeds {
            let seed = cfg.experiment.seed + s;
            let run_dir = base.join(format!("{label}-s{seed}"));
            let row = match run_one_ablation(
                cfg,
                *variant,
                *obs_variant,
                seed,
                pool,
                model,
                teacher,
                eval_manifest,
                &run_dir,
                label,
            ) {
                Ok(row) => row,
                Err(e) => AblationRow {
                    variant: label.clone(),
                    seed,
                    pa: None,
                    wa: None,
                    mpj: None,
                    success_rate: None,
                    final_reward: None,
                    early_reward: None,
                    error: Some(e.to_string()),
                },
            };
            println!(
                "  [{family}] {label} seed {seed}: PA {} WA {} SR {}",
                row.pa.map_or("failed".into(), |v| format!("{v:.1}")),
                row.wa.map_or("failed".into(), |v| format!("{v:.1}")),
                row.success_rate
                    .map_or("failed".into(), |v| format!("{:.0}%", v * 100.0)),
            );
            rows.push(row);
        }
    }
    let table = AblationTable {
        family: family.to_string(),
        config_hash: cfg.hash(),
        rows,
    };
    write_json(&base.join(format!("ablation_{family}.json")), &table)?;
    let text_rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let cell = |v: Option<f64>, prec: usize| {
                v.map_or("failed".to_string(), |x| format!("{x:.prec$}"))
            };
            vec![
                r.variant.clone(),
                r.seed.to_string(),
                cell(r.pa, 1),
                cell(r.wa, 1),
                cell(r.mpj, 1),
                cell(r.success_rate.map(|v| v * 100.0), 1),
                cell(r.final_reward, 3),
                cell(r.early_reward, 3),
            ]
        })
        .collect();
    let text = format_table(
        &["variant", "seed", "PA", "WA", "MPJ", "SR%", "final_r", "early_r"],
        &text_rows,
    );
    raymimic_core::io::write_text(&base.join(format!("ablation_{family}.txt")), &text)?;
    println!("{text}");
    Ok(table)
}

/// `ablate`: trains and evaluates the learning-strategy and/or
/// global-instruction variants over several seeds, emitting ordered
/// comparison tables. Per-variant failures are recorded, not fatal.
pub fn cmd_ablate(cfg: &ExperimentConfig, which: AblationKind) -> Result<ExitStatus, Error> {
    let corpus = cfg.training_corpus()?;
    require_exists(corpus, "paths.corpus")?;
    let eval_manifest = cfg.eval_corpus()?.to_path_buf();
    require_exists(&eval_manifest, "paths.eval_corpus")?;
    let _lock = DirLock::acquire(&cfg.experiment.out_dir)?;

    let model = model_from(cfg)?;
    let teacher = load_teacher(cfg, model.spec.joint_count())?;
    let pool = Arc::new(load_bundles(corpus, &model.spec)?);

    if matches!(which, AblationKind::Strategy | AblationKind::Both) {
        let combos = vec![
            (Variant::StudentPpo, cfg.experiment.obs_variant, "ppo-only".to_string()),
            (Variant::StudentDistill, cfg.experiment.obs_variant, "distill-only".to_string()),
            (Variant::StudentJoint, cfg.experiment.obs_variant, "ppo-distill".to_string()),
        ];
        ablation_family(cfg, "strategy", &combos, &pool, &model, &teacher, &eval_manifest)?;
    }
    if matches!(which, AblationKind::Observation | AblationKind::Both) {
        let combos = vec![
            (Variant::StudentJoint, ObsVariant::ImgfeatOnly, "imgfeat-only".to_string()),
            (Variant::StudentJoint, ObsVariant::Plus3dRoot, "plus-3d-root".to_string()),
            (Variant::StudentJoint, ObsVariant::PlusPixelray, "plus-pixelray".to_string()),
        ];
        ablation_family(cfg, "observation", &combos, &pool, &model, &teacher, &eval_manifest)?;
    }
    Ok(ExitStatus::Success)
}
