//! Streaming long tuning: a random window of a long rollout is optimized
//! while everything before it enters only as detached context values.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flowgen::{
    rows_to_clips, sample_clips, sample_on_graph, BoundNet, Clip, ContextInput, NetParams, PromptEmbedding,
    TimestepSchedule,
};
use crate::nftcore::{Candidate, EpochMetrics, GroupBatch, GroupSignals, StepGradients, Trainer};
use crate::rng::{NoiseStream, Purpose, StreamKey};
use crate::streamctx::{detach_history, ContextWindow, GroupKey};
use crate::tensorgrad::{DenseArray, Graph};

/// Window placement inside a rollout, in whole clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub total_clips: usize,
    pub window_clips: usize,
    /// First clip of the window.
    pub start: usize,
    pub clip_len: usize,
}

impl WindowSpec {
    pub fn new(total_clips: usize, window_clips: usize, start: usize, clip_len: usize) -> Result<Self> {
        if window_clips == 0 || clip_len == 0 {
            return Err(Error::InvalidConfig("window and clip length must be positive"));
        }
        if window_clips > total_clips {
            return Err(Error::WindowTooLarge {
                window: window_clips,
                total: total_clips,
            });
        }
        if start > total_clips - window_clips {
            return Err(Error::InvalidConfig("window start past the last valid position"));
        }
        Ok(Self {
            total_clips,
            window_clips,
            start,
            clip_len,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.total_clips * self.clip_len
    }

    pub fn window_frames(&self) -> usize {
        self.window_clips * self.clip_len
    }

    pub fn start_frame(&self) -> usize {
        self.start * self.clip_len
    }

    pub fn required_clips(&self) -> usize {
        self.start + self.window_clips
    }

    pub fn required_frames(&self) -> usize {
        self.required_clips() * self.clip_len
    }
}

/// Uniform clip-aligned start in `[0, total - window]`.
pub fn select_window(total_clips: usize, window_clips: usize, rng: &mut NoiseStream) -> Result<usize> {
    if window_clips > total_clips {
        return Err(Error::WindowTooLarge {
            window: window_clips,
            total: total_clips,
        });
    }
    Ok(rng.index(total_clips - window_clips + 1))
}

/// The window of `epoch`; any worker with the same seed derives the same one.
pub fn epoch_window(
    seed: u64,
    epoch: u64,
    total_clips: usize,
    window_clips: usize,
    clip_len: usize,
) -> Result<WindowSpec> {
    let mut rng = NoiseStream::new(StreamKey::new(seed, Purpose::Window).epoch(epoch));
    let start = select_window(total_clips, window_clips, &mut rng)?;
    WindowSpec::new(total_clips, window_clips, start, clip_len)
}

/// Generates `clips` clips one after another into `ctx`.
pub fn generate_prefix(
    params: &NetParams,
    ctx: &mut ContextWindow,
    prompt: &PromptEmbedding,
    schedule: &TimestepSchedule,
    clips: usize,
    rng: &mut NoiseStream,
) -> Result<Vec<Clip>> {
    let mut out = Vec::with_capacity(clips);
    for _ in 0..clips {
        let clip = sample_clips(params, &[&*ctx], prompt, schedule, core::slice::from_mut(rng))?
            .pop()
            .expect("one row in, one clip out");
        ctx.push_clip(&clip);
        out.push(clip);
    }
    Ok(out)
}

/// [`generate_prefix`] recorded on `graph`: each clip is pushed as tracked
/// frames, so later predictions stay connected to it until detached.
pub fn generate_tracked_prefix(
    graph: &mut Graph,
    bound: &BoundNet,
    ctx: &mut ContextWindow,
    prompt: &PromptEmbedding,
    schedule: &TimestepSchedule,
    clips: usize,
    rng: &mut NoiseStream,
) -> Result<Vec<Clip>> {
    let mut out = Vec::with_capacity(clips);
    for _ in 0..clips {
        let input = ctx.summary_input(graph)?;
        let node = sample_on_graph(
            graph,
            bound,
            alloc::vec![input],
            prompt,
            schedule,
            core::slice::from_mut(rng),
        )?;
        ctx.push_tracked_clip(graph, node, 0)?;
        out.extend(rows_to_clips(graph.value(node), bound.arch().dims.frame_dim)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRollout {
    /// Detached context at the window start.
    pub history: ContextWindow,
    pub prefix: Vec<Clip>,
    pub candidates: Vec<Candidate>,
}

/// One shared prefix of `spec.start` clips from the group's prefix stream,
/// then `group_size` candidate windows, each continuing its own copy of the
/// context with its own stream.
pub fn rollout_to_window(
    params_old: &NetParams,
    prompt: &PromptEmbedding,
    spec: WindowSpec,
    ctx: &ContextWindow,
    schedule: &TimestepSchedule,
    group_size: usize,
    key: GroupKey,
) -> Result<WindowRollout> {
    if group_size < 2 {
        return Err(Error::GroupTooSmall(group_size));
    }
    let mut history = detach_history(ctx);
    let prefix = generate_prefix(
        params_old,
        &mut history,
        prompt,
        schedule,
        spec.start,
        &mut key.prefix_stream(),
    )?;
    let mut streams: Vec<NoiseStream> = (0..group_size).map(|i| key.candidate_stream(i)).collect();
    let mut contexts: Vec<ContextWindow> = (0..group_size).map(|_| history.clone()).collect();
    let mut candidates: Vec<Candidate> = (0..group_size)
        .map(|_| Candidate {
            clips: Vec::with_capacity(spec.window_clips),
            summaries: Vec::with_capacity(spec.window_clips),
        })
        .collect();
    for _ in 0..spec.window_clips {
        let refs: Vec<&ContextWindow> = contexts.iter().collect();
        let clips = sample_clips(params_old, &refs, prompt, schedule, &mut streams)?;
        for ((c, ctx), clip) in candidates.iter_mut().zip(&mut contexts).zip(clips) {
            c.summaries.push(ctx.summary_values());
            ctx.push_clip(&clip);
            c.clips.push(clip);
        }
    }
    Ok(WindowRollout {
        history,
        prefix,
        candidates,
    })
}

/// Window groups of `epoch` under `params`, one per selected prompt.
pub fn window_groups(trainer: &Trainer, params: &NetParams, spec: WindowSpec, epoch: u64) -> Result<Vec<GroupBatch>> {
    let ctx = trainer.empty_context();
    trainer
        .epoch_prompts(epoch)
        .into_iter()
        .enumerate()
        .map(|(slot, prompt_id)| {
            let prompt = trainer.pool().get(prompt_id).clone();
            let key = trainer.group_key(epoch, slot as u64);
            let r = rollout_to_window(
                params,
                &prompt,
                spec,
                &ctx,
                trainer.schedule(),
                trainer.config().group_size,
                key,
            )?;
            Ok(GroupBatch {
                slot: slot as u64,
                prompt_id,
                prompt,
                candidates: r.candidates,
            })
        })
        .collect()
}

/// Long-mode epoch: pick the window, roll out to it under the behavior
/// policy, then optimize on the window alone.
pub fn train_window_epoch(
    trainer: &mut Trainer,
    total_clips: usize,
    window_clips: usize,
) -> Result<(WindowSpec, EpochMetrics)> {
    let epoch = trainer.state().epoch;
    let clip_len = trainer.task().dims.clip_len;
    let spec = epoch_window(trainer.seed(), epoch, total_clips, window_clips, clip_len)?;
    let groups = window_groups(trainer, &trainer.policies().old, spec, epoch)?;
    let metrics = trainer.train_on_groups(&groups)?;
    Ok((spec, metrics))
}

/// How the history before the window enters a gradient computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryLink {
    /// History frames become graph constants.
    Constants,
    /// History frames keep their graph links.
    Attached,
}

/// Mini-batch gradients with `history` (possibly tracked on `graph`) as the
/// conditioning context before each candidate's window.
#[allow(clippy::too_many_arguments)]
pub fn gradients_with_history(
    trainer: &Trainer,
    graph: &mut Graph,
    theta: &BoundNet,
    history: &ContextWindow,
    link: HistoryLink,
    batch: &GroupBatch,
    signals: &GroupSignals,
    epoch: u64,
) -> Result<StepGradients> {
    let base = match link {
        HistoryLink::Constants => detach_history(history),
        HistoryLink::Attached => history.clone(),
    };
    let mut contexts = Vec::new();
    for c in &batch.candidates {
        let mut ctx = base.clone();
        for clip in &c.clips {
            let input = match ctx.summary_input(graph)? {
                ContextInput::Values(v) => ContextInput::Node(graph.constant(DenseArray::row(&v))),
                node => node,
            };
            contexts.push(input);
            ctx.push_clip(clip);
        }
    }
    let loss = trainer.group_loss_on(graph, theta, batch, signals, epoch, Some(contexts))?;
    StepGradients::from_graph(graph, loss, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgen::{NetArch, ToyTask};
    use crate::nftcore::NftConfig;

    fn trainer(seed: u64) -> Trainer {
        let task = ToyTask::default();
        let arch = NetArch::new(task.dims, 16);
        let params = NetParams::init(arch, &mut NoiseStream::new(StreamKey::new(seed, Purpose::Init)));
        let cfg = NftConfig {
            group_size: 4,
            prompts_per_epoch: 2,
            prompt_pool_size: 4,
            ..NftConfig::default()
        };
        Trainer::new(params, task, TimestepSchedule::default(), cfg, seed).unwrap()
    }

    #[test]
    fn window_spec_bounds() {
        let w = WindowSpec::new(8, 2, 6, 4).unwrap();
        assert_eq!(
            (
                w.total_frames(),
                w.window_frames(),
                w.start_frame(),
                w.required_frames()
            ),
            (32, 8, 24, 32)
        );
        assert!(WindowSpec::new(8, 2, 7, 4).is_err());
        assert!(WindowSpec::new(2, 3, 0, 4).is_err());
        assert!(WindowSpec::new(2, 0, 0, 4).is_err());
    }

    #[test]
    fn full_length_window_starts_at_zero() {
        let mut rng = NoiseStream::new(StreamKey::new(1, Purpose::Window));
        for _ in 0..100 {
            assert_eq!(select_window(5, 5, &mut rng).unwrap(), 0);
        }
        assert!(select_window(2, 3, &mut rng).is_err());
    }

    #[test]
    fn starts_are_uniform() {
        let mut rng = NoiseStream::new(StreamKey::new(2, Purpose::Window));
        let n = 10_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            counts[select_window(8, 2, &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / 7.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // upper 1% point of chi-square with 6 degrees of freedom
        assert!(chi2 < 16.812, "{chi2} {counts:?}");
    }

    #[test]
    fn workers_agree_on_the_window() {
        for epoch in 0..20 {
            assert_eq!(
                epoch_window(9, epoch, 8, 2, 4).unwrap(),
                epoch_window(9, epoch, 8, 2, 4).unwrap()
            );
        }
    }

    #[test]
    fn prefix_is_shared_and_context_is_bounded() {
        let tr = trainer(3);
        let prompt = tr.pool().get(0).clone();
        let key = tr.group_key(0, 0);
        for start in [0usize, 1, 5, 7] {
            let spec = WindowSpec::new(8, 1, start, 4).unwrap();
            let r = rollout_to_window(
                &tr.policies().old,
                &prompt,
                spec,
                &tr.empty_context(),
                tr.schedule(),
                4,
                key,
            )
            .unwrap();
            assert_eq!(r.prefix.len(), start);
            assert_eq!(r.history.frame_count(), (start * 4).min(24));
            assert!(!r.history.has_tracked_frames());
            let first = &r.candidates[0].summaries[0];
            assert!(r.candidates.iter().all(|c| &c.summaries[0] == first));
            assert_eq!(first, &r.history.summary_values());
        }
    }

    #[test]
    fn full_length_window_matches_short_mode() {
        let mut a = trainer(4);
        let mut b = trainer(4);
        for _ in 0..2 {
            let (spec, m) = train_window_epoch(&mut a, 1, 1).unwrap();
            assert_eq!(spec.start, 0);
            assert_eq!(m, b.train_epoch().unwrap());
        }
        assert_eq!(a.policies(), b.policies());
    }

    #[test]
    fn attached_history_carries_gradient_and_detached_does_not() {
        let mut tr = trainer(5);
        let spec = WindowSpec::new(4, 1, 2, 4).unwrap();
        let groups = window_groups(&tr, &tr.policies().old.clone(), spec, 0).unwrap();
        let signals = tr.assess(&groups).unwrap();
        let reference = tr.group_gradients(&groups[0], &signals[0], 0).unwrap();

        let run = |link: HistoryLink| {
            let mut graph = Graph::new();
            let bound = tr.policies().theta.bind(&mut graph, true);
            let mut ctx = tr.empty_context();
            let mut rng = tr.group_key(0, 0).prefix_stream();
            let prompt = &groups[0].prompt;
            generate_tracked_prefix(
                &mut graph,
                &bound,
                &mut ctx,
                prompt,
                tr.schedule(),
                spec.start,
                &mut rng,
            )
            .unwrap();
            gradients_with_history(&tr, &mut graph, &bound, &ctx, link, &groups[0], &signals[0], 0).unwrap()
        };
        let cut = run(HistoryLink::Constants);
        let linked = run(HistoryLink::Attached);
        let max_gap = |a: &StepGradients| {
            a.grads
                .iter()
                .zip(&reference.grads)
                .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max)
        };
        assert!(max_gap(&cut) <= 1e-10);
        assert_eq!(cut.live_nodes, reference.live_nodes);
        assert!(max_gap(&linked) > 1e-8);
        assert!(linked.live_nodes > reference.live_nodes);
    }
}
