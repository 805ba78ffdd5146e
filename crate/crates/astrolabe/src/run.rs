use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use astrolabe_core::flowgen::{pretrain_base, PretrainReport, ToyCorpus};
use astrolabe_core::longtune::train_window_epoch;
use astrolabe_core::nftcore::Trainer;
use astrolabe_core::rng::{NoiseStream, Purpose, StreamKey};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{Mode, RunConfig};
use crate::metrics::{MetricsLog, MetricsRecord};
use crate::RunError;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    /// Epochs trained by this invocation.
    pub epochs_run: u64,
    /// Epoch counter of the final checkpoint.
    pub final_epoch: u64,
    /// Mean training MSE over the last 50 pretraining steps; `None` on resume.
    pub pretrain_final_mse: Option<f64>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Samples the teacher corpus and fits the base generator.
pub fn pretrain(cfg: &RunConfig) -> Result<(ToyCorpus, PretrainReport), RunError> {
    let p = cfg.pretrain;
    let mut rng = NoiseStream::new(StreamKey::new(cfg.seed, Purpose::Corpus));
    let corpus = ToyCorpus::generate(cfg.task(), p.corpus_size, p.clips_per_trajectory, &mut rng)?;
    let report = pretrain_base(&corpus, cfg.arch(), &cfg.schedule()?, &cfg.pretrain_config())?;
    Ok((corpus, report))
}

pub fn build_trainer(cfg: &RunConfig, checkpoint: Checkpoint) -> Result<Trainer, RunError> {
    checkpoint.into_trainer(cfg.task(), cfg.schedule()?, cfg.nft_config()?)
}

/// Runs one epoch in the configured mode.
pub fn train_one_epoch(cfg: &RunConfig, trainer: &mut Trainer) -> Result<MetricsRecord, RunError> {
    Ok(match cfg.mode {
        Mode::Short => MetricsRecord::from_epoch(&trainer.train_epoch()?),
        Mode::Long => {
            let (spec, m) = train_window_epoch(trainer, cfg.total_clips, cfg.window_clips)?;
            let mut rec = MetricsRecord::from_epoch(&m);
            rec.window_start = Some(spec.start);
            rec
        }
    })
}

/// Pretrains the base (or resumes from `resume`), trains until the epoch
/// counter reaches `cfg.epochs`, and writes the config, metrics log, final
/// checkpoint and a summary into `out_dir`. A resumed run appends to the
/// existing log.
pub fn run_training(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| RunError::io(out_dir, e))?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    let metrics_path = out_dir.join(METRICS_FILE);

    let (checkpoint, pretrain_final_mse, mut log) = match resume {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            if ck.seed != cfg.seed {
                return Err(RunError::Checkpoint(format!(
                    "checkpoint seed {} differs from config seed {}",
                    ck.seed, cfg.seed
                )));
            }
            (ck, None, MetricsLog::append(&metrics_path)?)
        }
        None => {
            let (_, report) = pretrain(cfg)?;
            let tail = &report.losses[report.losses.len().saturating_sub(50)..];
            let mse = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
            let ck = Checkpoint::base(report.params, cfg.seed, cfg.rho0)?;
            (ck, mse, MetricsLog::create(&metrics_path)?)
        }
    };

    let mut trainer = build_trainer(cfg, checkpoint)?;
    let start_epoch = trainer.state().epoch;
    let clock = Instant::now();
    while trainer.state().epoch < cfg.epochs {
        let mut rec = train_one_epoch(cfg, &mut trainer)?;
        if cfg.record_wall_time {
            rec.wall_time_s = Some(clock.elapsed().as_secs_f64());
        }
        log.log(&rec)?;
    }

    let ck_dir = out_dir.join(CHECKPOINT_DIR);
    Checkpoint::from_trainer(&trainer).save(&ck_dir)?;
    let summary = RunSummary {
        epochs_run: trainer.state().epoch - start_epoch,
        final_epoch: trainer.state().epoch,
        pretrain_final_mse,
        checkpoint: ck_dir,
        metrics: metrics_path,
    };
    let spath = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| RunError::Parse(e.to_string()))?;
    fs::write(&spath, text).map_err(|e| RunError::io(&spath, e))?;
    Ok(summary)
}
