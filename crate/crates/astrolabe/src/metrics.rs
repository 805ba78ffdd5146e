use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use astrolabe_core::nftcore::EpochMetrics;
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardMeans {
    pub vq: f64,
    pub mq: f64,
    pub ta: f64,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub reward_means: RewardMeans,
    pub composite: f64,
    pub policy_loss: f64,
    pub kl_loss: f64,
    pub total_loss: f64,
    pub mask_fraction: f64,
    /// `None` when no group had a nonnegative disagreement.
    pub tau: Option<f64>,
    pub rho: f64,
    pub grad_norm: f64,
    pub reset: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl MetricsRecord {
    pub fn from_epoch(m: &EpochMetrics) -> Self {
        let [vq, mq, ta] = m.rollout.reward_means;
        Self {
            epoch: m.epoch,
            reward_means: RewardMeans { vq, mq, ta },
            composite: m.rollout.composite,
            policy_loss: m.policy_loss,
            kl_loss: m.kl_loss,
            total_loss: m.total_loss,
            mask_fraction: m.mask_fraction,
            tau: m.tau,
            rho: m.rho,
            grad_norm: m.grad_norm,
            reset: m.reset,
            window_start: None,
            wall_time_s: m.wall_time_s,
        }
    }
}

/// Appends JSON lines to a log file, flushing after every record.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self, RunError> {
        let file = File::create(path).map_err(|e| RunError::io(path, e))?;
        Ok(Self::wrap(path, file))
    }

    pub fn append(path: &Path) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| RunError::io(path, e))?;
        Ok(Self::wrap(path, file))
    }

    fn wrap(path: &Path, file: File) -> Self {
        Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        }
    }

    pub fn log(&mut self, record: &MetricsRecord) -> Result<(), RunError> {
        log_metrics(record, &mut self.out).map_err(|e| RunError::io(&self.path, e))?;
        self.out.flush().map_err(|e| RunError::io(&self.path, e))
    }
}

pub fn log_metrics(record: &MetricsRecord, sink: &mut impl Write) -> std::io::Result<()> {
    serde_json::to_writer(&mut *sink, record)?;
    sink.write_all(b"\n")
}

/// Reads a log, skipping blank lines; errors name the offending line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, RunError> {
    let file = File::open(path).map_err(|e| RunError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| RunError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
