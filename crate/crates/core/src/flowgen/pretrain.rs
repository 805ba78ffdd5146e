use alloc::vec::Vec;

use super::net::ContextInput;
use super::{forward_path, Clip, DenoiseRow, NetArch, NetParams, TimestepSchedule, ToyCorpus};
use crate::error::{Error, Result};
use crate::rng::{NoiseStream, Purpose, StreamKey};
use crate::streamctx::ContextWindow;
use crate::tensorgrad::{clip_global_norm, AdamW, AdamWConfig, DenseArray, Graph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate; decays with a half cosine to `lr * final_lr_fraction`.
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub max_grad_norm: f64,
    /// Probability of drawing `t` uniformly from (0, 1] instead of from the
    /// schedule, so fixed-noise-level training sees nearby inputs.
    pub continuous_t_prob: f64,
    pub sink: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 64,
            lr: 2e-3,
            final_lr_fraction: 0.05,
            max_grad_norm: 1.0,
            continuous_t_prob: 0.25,
            sink: 3,
            window: 21,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub params: NetParams,
    /// Per-element training MSE at every step.
    pub losses: Vec<f64>,
}

fn context_before(corpus: &ToyCorpus, traj: usize, clip: usize, sink: usize, window: usize) -> ContextWindow {
    let dims = corpus.task.dims;
    let mut ctx = ContextWindow::new(sink, window, dims.frame_dim);
    for c in &corpus.trajectories[traj].clips[..clip] {
        ctx.push_clip(c);
    }
    ctx
}

/// Regresses clean clips from noised ones under teacher-forced context:
/// minimizes the per-element squared error of the clean-sample prediction.
pub fn pretrain_base(
    corpus: &ToyCorpus,
    arch: NetArch,
    schedule: &TimestepSchedule,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if corpus.is_empty() || corpus.clips_per_trajectory() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut params = NetParams::init(arch, &mut NoiseStream::new(StreamKey::new(cfg.seed, Purpose::Init)));
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut rng = NoiseStream::new(StreamKey::new(cfg.seed, Purpose::Pretrain));
    let n_clips = corpus.clips_per_trajectory();
    let dims = arch.dims;
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress));
        opt.config.lr = cfg.lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cosine);

        let mut noisy = Vec::with_capacity(cfg.batch_size);
        let mut meta = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size * dims.clip_numel());
        for _ in 0..cfg.batch_size {
            let traj = rng.index(corpus.len());
            let clip = rng.index(n_clips);
            let t = if rng.uniform() < cfg.continuous_t_prob {
                1.0 - rng.uniform_in(0.0, 0.98)
            } else {
                schedule.values()[rng.index(schedule.len())]
            };
            let x0 = &corpus.trajectories[traj].clips[clip];
            let eps = Clip::new(dims.frame_dim, rng.normal_vec(dims.clip_numel()))?;
            noisy.push(forward_path(x0, &eps, t)?);
            let ctx = context_before(corpus, traj, clip, cfg.sink, cfg.window);
            meta.push((traj, t, ctx.summary_values()));
            targets.extend_from_slice(x0.data());
        }
        let rows: Vec<DenoiseRow<'_>> = noisy
            .iter()
            .zip(&meta)
            .map(|(x_t, (traj, t, summary))| DenoiseRow {
                x_t,
                t: *t,
                context: ContextInput::Values(summary.clone()),
                prompt: &corpus.trajectories[*traj].prompt,
            })
            .collect();

        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, true);
        let pred = bound.predict_rows(&mut graph, &rows)?;
        let target = graph.constant(DenseArray::matrix(cfg.batch_size, dims.clip_numel(), targets)?);
        let diff = graph.sub(pred, target)?;
        let sq = graph.square(diff)?;
        let loss = graph.mean(sq)?;
        let loss_value = graph.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                stage: "pretraining",
                step: step as u64,
                value: loss_value,
            });
        }
        losses.push(loss_value);
        let mut grads = graph.backward(loss)?.into_param_vec();
        clip_global_norm(&mut grads, cfg.max_grad_norm);
        opt.step(params.tensors_mut(), &grads).map_err(|_| Error::Diverged {
            stage: "pretraining update",
            step: step as u64,
            value: loss_value,
        })?;
    }
    Ok(PretrainReport { params, losses })
}

/// Per-element MSE of clean-sample predictions over every clip of `corpus`
/// at every schedule timestep, with teacher-forced context.
pub fn evaluate_mse(
    params: &NetParams,
    corpus: &ToyCorpus,
    schedule: &TimestepSchedule,
    sink: usize,
    window: usize,
    rng: &mut NoiseStream,
) -> Result<f64> {
    let dims = params.arch().dims;
    let mut total = 0.0;
    let mut count = 0usize;
    for (ti, traj) in corpus.trajectories.iter().enumerate() {
        for ci in 0..traj.clips.len() {
            let summary = context_before(corpus, ti, ci, sink, window).summary_values();
            let x0 = &traj.clips[ci];
            let noisy: Vec<Clip> = schedule
                .values()
                .iter()
                .map(|&t| {
                    let eps = Clip::new(dims.frame_dim, rng.normal_vec(dims.clip_numel()))?;
                    forward_path(x0, &eps, t)
                })
                .collect::<Result<_>>()?;
            let rows: Vec<DenoiseRow<'_>> = noisy
                .iter()
                .zip(schedule.values())
                .map(|(x_t, &t)| DenoiseRow {
                    x_t,
                    t,
                    context: ContextInput::Values(summary.clone()),
                    prompt: &traj.prompt,
                })
                .collect();
            let mut graph = Graph::new();
            let bound = params.bind(&mut graph, false);
            let pred = bound.predict_rows(&mut graph, &rows)?;
            let value = graph.value(pred);
            for r in 0..value.rows() {
                for (p, x) in value.row_slice(r).iter().zip(x0.data()) {
                    total += (p - x) * (p - x);
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}
