//! Bounded conditioning state and clip-level group rollout.
//!
//! The context keeps the first `sink` frames ever generated plus the `window`
//! most recent frames that are not in the sink, so its size never exceeds
//! `sink + window`.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flowgen::{sample_clips, Clip, Frame, NetParams, PromptEmbedding, TimestepSchedule};
use crate::rng::{NoiseStream, Purpose, StreamKey};
use crate::tensorgrad::{DenseArray, Graph, NodeId};

pub use crate::flowgen::ContextInput;

#[derive(Clone, Debug, PartialEq)]
struct ContextFrame {
    values: Frame,
    /// `[1, frame_dim]` node on the graph that produced this frame.
    node: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    sink_size: usize,
    window_size: usize,
    frame_dim: usize,
    sink: Vec<ContextFrame>,
    rolling: VecDeque<ContextFrame>,
    total_generated: usize,
}

impl ContextWindow {
    pub fn new(sink_size: usize, window_size: usize, frame_dim: usize) -> Self {
        Self {
            sink_size,
            window_size,
            frame_dim,
            sink: Vec::with_capacity(sink_size),
            rolling: VecDeque::with_capacity(window_size),
            total_generated: 0,
        }
    }

    pub fn sink_size(&self) -> usize {
        self.sink_size
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn total_generated(&self) -> usize {
        self.total_generated
    }

    /// Frames currently held (sink plus rolling).
    pub fn frame_count(&self) -> usize {
        self.sink.len() + self.rolling.len()
    }

    pub fn sink_frames(&self) -> impl Iterator<Item = &Frame> + '_ {
        self.sink.iter().map(|f| &f.values)
    }

    pub fn rolling_frames(&self) -> impl Iterator<Item = &Frame> + '_ {
        self.rolling.iter().map(|f| &f.values)
    }

    /// Sink frames then rolling frames, oldest first.
    pub fn frames(&self) -> impl Iterator<Item = &Frame> + '_ {
        self.sink_frames().chain(self.rolling_frames())
    }

    pub fn has_tracked_frames(&self) -> bool {
        self.sink.iter().chain(&self.rolling).any(|f| f.node.is_some())
    }

    fn push_frame(&mut self, frame: ContextFrame) {
        self.total_generated += 1;
        if self.sink.len() < self.sink_size {
            self.sink.push(frame);
            return;
        }
        if self.window_size == 0 {
            return;
        }
        if self.rolling.len() == self.window_size {
            self.rolling.pop_front();
        }
        self.rolling.push_back(frame);
    }

    pub fn push_clip(&mut self, clip: &Clip) {
        for f in clip.frames() {
            self.push_frame(ContextFrame {
                values: Frame::new(f.to_vec()),
                node: None,
            });
        }
    }

    /// Pushes a clip that lives on `graph` as one row of `clips` (shape
    /// `[rows, clip_len * frame_dim]`). Each frame keeps a slice node, so a
    /// later prediction conditioned on this context stays differentiable
    /// through it until [`detach_history`] is applied.
    pub fn push_tracked_clip(&mut self, graph: &mut Graph, clips: NodeId, row: usize) -> Result<()> {
        let value = graph.value(clips).clone();
        let numel = value.cols();
        if !numel.is_multiple_of(self.frame_dim) || row >= value.rows() {
            return Err(Error::Shape {
                what: "tracked clip",
                expected: self.frame_dim,
                got: numel,
            });
        }
        let row_node = if value.rows() == 1 {
            clips
        } else {
            let selector = one_hot_row(value.rows(), row);
            let sel = graph.constant(selector);
            graph.matmul(sel, clips)?
        };
        for k in 0..numel / self.frame_dim {
            let node = graph.slice(row_node, k * self.frame_dim, (k + 1) * self.frame_dim)?;
            let values = Frame::new(value.row_slice(row)[k * self.frame_dim..(k + 1) * self.frame_dim].to_vec());
            self.push_frame(ContextFrame {
                values,
                node: Some(node),
            });
        }
        Ok(())
    }

    fn newest(&self) -> Option<&ContextFrame> {
        self.rolling.back().or_else(|| self.sink.last())
    }

    /// Mean sink frame followed by the newest frame; zeros stand in for
    /// missing parts.
    pub fn summary_values(&self) -> Vec<f64> {
        let d = self.frame_dim;
        let mut out = alloc::vec![0.0; 2 * d];
        if !self.sink.is_empty() {
            for f in &self.sink {
                for (o, v) in out[..d].iter_mut().zip(f.values.iter()) {
                    *o += v;
                }
            }
            let n = self.sink.len() as f64;
            out[..d].iter_mut().for_each(|o| *o /= n);
        }
        if let Some(f) = self.newest() {
            out[d..].copy_from_slice(&f.values);
        }
        out
    }

    /// The summary as network input: plain values when no frame is tracked,
    /// otherwise a `[1, 2 * frame_dim]` node on `graph`.
    pub fn summary_input(&self, graph: &mut Graph) -> Result<ContextInput> {
        if !self.has_tracked_frames() {
            return Ok(ContextInput::Values(self.summary_values()));
        }
        let d = self.frame_dim;
        let frame_node = |graph: &mut Graph, f: &ContextFrame| match f.node {
            Some(n) => n,
            None => graph.constant(DenseArray::row(&f.values)),
        };
        let sink_mean = if self.sink.is_empty() {
            graph.constant(DenseArray::zeros(&[1, d]))
        } else {
            let mut acc = frame_node(graph, &self.sink[0]);
            for f in &self.sink[1..] {
                let n = frame_node(graph, f);
                acc = graph.add(acc, n)?;
            }
            graph.scale(acc, 1.0 / self.sink.len() as f64)?
        };
        let newest = match self.newest() {
            Some(f) => frame_node(graph, f),
            None => graph.constant(DenseArray::zeros(&[1, d])),
        };
        Ok(ContextInput::Node(graph.concat(&[sink_mean, newest], 1)?))
    }
}

fn one_hot_row(rows: usize, row: usize) -> DenseArray {
    let mut data = alloc::vec![0.0; rows];
    data[row] = 1.0;
    DenseArray::matrix(1, rows, data).expect("non-empty selector")
}

/// Same frame values with every graph link removed.
pub fn detach_history(ctx: &ContextWindow) -> ContextWindow {
    let mut out = ctx.clone();
    out.sink
        .iter_mut()
        .chain(out.rolling.iter_mut())
        .for_each(|f| f.node = None);
    out
}

/// Keys for the candidate noise streams of one group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupKey {
    pub seed: u64,
    pub epoch: u64,
    pub prompt_slot: u64,
}

impl GroupKey {
    pub fn candidate_stream(&self, candidate: usize) -> NoiseStream {
        NoiseStream::new(
            StreamKey::new(self.seed, Purpose::Candidate)
                .epoch(self.epoch)
                .slot(self.prompt_slot)
                .lane(candidate as u64),
        )
    }

    pub fn prefix_stream(&self) -> NoiseStream {
        NoiseStream::new(
            StreamKey::new(self.seed, Purpose::Prefix)
                .epoch(self.epoch)
                .slot(self.prompt_slot),
        )
    }
}

/// Samples `group_size` candidate clips that all condition on the same
/// frozen `ctx`. Candidate `i` draws noise only from its own stream.
pub fn group_rollout(
    params_old: &NetParams,
    ctx: &ContextWindow,
    prompt: &PromptEmbedding,
    group_size: usize,
    schedule: &TimestepSchedule,
    key: GroupKey,
) -> Result<Vec<Clip>> {
    let mut streams: Vec<NoiseStream> = (0..group_size).map(|i| key.candidate_stream(i)).collect();
    group_rollout_with_streams(params_old, ctx, prompt, schedule, &mut streams)
}

/// [`group_rollout`] with caller-provided candidate streams.
pub fn group_rollout_with_streams(
    params_old: &NetParams,
    ctx: &ContextWindow,
    prompt: &PromptEmbedding,
    schedule: &TimestepSchedule,
    streams: &mut [NoiseStream],
) -> Result<Vec<Clip>> {
    if streams.len() < 2 {
        return Err(Error::GroupTooSmall(streams.len()));
    }
    let contexts: Vec<&ContextWindow> = (0..streams.len()).map(|_| ctx).collect();
    sample_clips(params_old, &contexts, prompt, schedule, streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgen::{ClipDims, NetArch};
    use crate::tensorgrad::ParamId;

    fn scalar_clip(values: &[f64]) -> Clip {
        Clip::new(1, values.to_vec()).unwrap()
    }

    fn frame_ids(ctx: &ContextWindow) -> Vec<f64> {
        ctx.frames().map(|f| f[0]).collect()
    }

    #[test]
    fn sink_and_rolling_after_ten_frames() {
        let mut ctx = ContextWindow::new(3, 4, 1);
        for i in 1..=10 {
            ctx.push_clip(&scalar_clip(&[i as f64]));
        }
        assert_eq!(frame_ids(&ctx), vec![1.0, 2.0, 3.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(ctx.total_generated(), 10);
    }

    #[test]
    fn warmup_keeps_everything_in_sink() {
        let mut ctx = ContextWindow::new(3, 4, 1);
        ctx.push_clip(&scalar_clip(&[1.0, 2.0]));
        assert_eq!(ctx.rolling_frames().count(), 0);
        assert_eq!(frame_ids(&ctx), vec![1.0, 2.0]);
        ctx.push_clip(&scalar_clip(&[3.0]));
        assert_eq!(ctx.rolling_frames().count(), 0);
        assert_eq!(ctx.sink_frames().count(), 3);
    }

    #[test]
    fn frame_count_saturates_at_sink_plus_window() {
        let mut ctx = ContextWindow::new(3, 4, 1);
        for i in 0..1000 {
            ctx.push_clip(&scalar_clip(&[i as f64]));
            assert_eq!(ctx.frame_count(), (i + 1).min(7));
        }
        assert_eq!(ctx.frame_count(), 7);
    }

    #[test]
    fn sink_depends_only_on_first_frames() {
        let mut a = ContextWindow::new(2, 3, 1);
        let mut b = ContextWindow::new(2, 3, 1);
        a.push_clip(&scalar_clip(&[1.0, 2.0, 5.0, 6.0]));
        b.push_clip(&scalar_clip(&[1.0, 2.0, 9.0, 9.0, 9.0, 9.0]));
        assert!(a.sink_frames().eq(b.sink_frames()));
        let mut c = ContextWindow::new(2, 3, 1);
        c.push_clip(&scalar_clip(&[2.0, 1.0, 5.0, 6.0]));
        assert!(!a.sink_frames().eq(c.sink_frames()));
    }

    #[test]
    fn summary_is_sink_mean_then_newest() {
        let mut ctx = ContextWindow::new(2, 2, 2);
        assert_eq!(ctx.summary_values(), vec![0.0; 4]);
        ctx.push_clip(&Clip::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        assert_eq!(ctx.summary_values(), vec![2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn detach_keeps_values_and_drops_links() {
        let mut graph = Graph::new();
        let p = graph.param(ParamId(0), DenseArray::row(&[0.5, -1.0, 2.0, 0.25]));
        let clip = graph.scale(p, 3.0).unwrap();
        let mut ctx = ContextWindow::new(1, 4, 2);
        ctx.push_tracked_clip(&mut graph, clip, 0).unwrap();
        assert!(ctx.has_tracked_frames());
        let detached = detach_history(&ctx);
        assert!(!detached.has_tracked_frames());
        assert!(ctx.frames().eq(detached.frames()));

        // loss through tracked context reaches the param; through the detached one it does not
        for (c, expect_zero) in [(&ctx, false), (&detached, true)] {
            let ContextInput::Node(n) = c.summary_input(&mut graph).unwrap() else {
                assert!(expect_zero);
                continue;
            };
            let sq = graph.square(n).unwrap();
            let loss = graph.sum(sq).unwrap();
            let grads = graph.backward(loss).unwrap();
            let g = grads.param(ParamId(0)).unwrap();
            assert_eq!(g.data().iter().all(|v| *v == 0.0), expect_zero);
        }
    }

    fn tiny_net() -> NetParams {
        let arch = NetArch::new(ClipDims::default(), 16);
        NetParams::init(arch, &mut NoiseStream::new(StreamKey::new(5, Purpose::Init)))
    }

    #[test]
    fn group_rollout_rejects_small_groups() {
        let net = tiny_net();
        let ctx = ContextWindow::new(3, 21, 8);
        let prompt = PromptEmbedding::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let key = GroupKey {
            seed: 1,
            epoch: 0,
            prompt_slot: 0,
        };
        let err = group_rollout(&net, &ctx, &prompt, 1, &TimestepSchedule::default(), key);
        assert_eq!(err, Err(Error::GroupTooSmall(1)));
    }

    #[test]
    fn equal_streams_give_equal_candidates() {
        let net = tiny_net();
        let mut ctx = ContextWindow::new(3, 21, 8);
        ctx.push_clip(&Clip::new(8, (0..32).map(|i| i as f64 / 32.0).collect()).unwrap());
        let prompt = PromptEmbedding::new(vec![0.3, 0.4, 0.1, 0.0]).unwrap();
        let key = GroupKey {
            seed: 9,
            epoch: 2,
            prompt_slot: 1,
        };
        let mut streams = vec![key.candidate_stream(0), key.candidate_stream(0)];
        let clips =
            group_rollout_with_streams(&net, &ctx, &prompt, &TimestepSchedule::default(), &mut streams).unwrap();
        assert_eq!(clips[0], clips[1]);
        let distinct = group_rollout(&net, &ctx, &prompt, 2, &TimestepSchedule::default(), key).unwrap();
        assert_ne!(distinct[0], distinct[1]);
    }
}
