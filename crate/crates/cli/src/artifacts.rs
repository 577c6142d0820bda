//! Run-artifact plumbing: output-directory locking, training logs, reward
//! curves, and run metadata. Artifacts never embed timestamps so identical
//! (config, seed) reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use raymimic_core::learn::{IterationStats, TrainOutcome};
use raymimic_core::Error;

/// Exclusive per-output-directory lock; one experiment process at a time.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out_dir: &Path) -> Result<Self, Error> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        let path = out_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(
                "out_dir",
                format!(
                    "another experiment holds the lock at {} (remove the file if stale)",
                    path.display()
                ),
            )),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Metadata written next to every run's artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub variant: String,
    pub obs_variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub env_steps: u64,
    pub outcome: String,
}

pub fn outcome_name(o: TrainOutcome) -> &'static str {
    match o {
        TrainOutcome::ReachedThreshold => "reached-threshold",
        TrainOutcome::BudgetExhausted => "budget-exhausted",
        TrainOutcome::Completed => "completed",
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path.display().to_string(), e.into()))?;
    raymimic_core::io::write_text(path, &text)
}

/// Training statistics, one JSON record per iteration.
pub fn write_stats(path: &Path, stats: &[IterationStats]) -> Result<(), Error> {
    raymimic_core::io::write_jsonl(path, stats)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_reward: f64,
}

/// Reward curve: (environment step, mean reward) per iteration.
pub fn write_curve(path: &Path, stats: &[IterationStats]) -> Result<(), Error> {
    let points: Vec<CurvePoint> = stats
        .iter()
        .map(|s| CurvePoint {
            step: s.step,
            mean_reward: s.mean_reward,
        })
        .collect();
    raymimic_core::io::write_jsonl(path, &points)
}

/// Fixed-width text table with a header row.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<String>, widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    out.push_str(&fmt_row(
        headers.iter().map(|h| h.to_string()).collect(),
        &widths,
    ));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row.clone(), &widths));
        out.push('\n');
    }
    out
}
