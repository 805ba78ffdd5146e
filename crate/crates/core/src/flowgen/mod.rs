//! Toy autoregressive flow generator: frames, clips, the noising path, the
//! shifted few-step schedule, the clean-sample network, the renoising
//! sampler, and base pretraining on circle trajectories.

mod net;
mod pretrain;
mod sampler;
mod toy;

use alloc::vec::Vec;
use core::ops::Deref;

pub(crate) use net::rows_to_clips;
pub use net::{predict_clean, time_features, BoundNet, ContextInput, DenoiseRow, NetArch, NetParams, TIME_FEATURES};
pub use pretrain::{evaluate_mse, pretrain_base, PretrainConfig, PretrainReport};
pub(crate) use sampler::sample_on_graph;
pub use sampler::{sample_clip, sample_clips};
pub use toy::{ToyCorpus, ToyTask, Trajectory};

use crate::error::{Error, Result};

/// Sizes shared by every clip, frame, and prompt in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipDims {
    pub frame_dim: usize,
    pub clip_len: usize,
    pub prompt_dim: usize,
}

impl Default for ClipDims {
    fn default() -> Self {
        Self {
            frame_dim: 8,
            clip_len: 4,
            prompt_dim: 4,
        }
    }
}

impl ClipDims {
    pub fn clip_numel(&self) -> usize {
        self.frame_dim * self.clip_len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Vec<f64>);

impl Frame {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(alloc::vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Frame {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Consecutive frames stored row-major (`frames x frame_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frame_dim: usize,
    data: Vec<f64>,
}

impl Clip {
    pub fn new(frame_dim: usize, data: Vec<f64>) -> Result<Self> {
        if frame_dim == 0 || data.is_empty() || !data.len().is_multiple_of(frame_dim) {
            return Err(Error::Shape {
                what: "clip data",
                expected: frame_dim,
                got: data.len(),
            });
        }
        Ok(Self { frame_dim, data })
    }

    pub fn zeros(dims: ClipDims) -> Self {
        Self {
            frame_dim: dims.frame_dim,
            data: alloc::vec![0.0; dims.clip_numel()],
        }
    }

    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let dim = frames.first().map(|f| f.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * frames.len());
        for f in frames {
            if f.len() != dim {
                return Err(Error::Shape {
                    what: "frame",
                    expected: dim,
                    got: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(dim, data)
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.frame_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.data[k * self.frame_dim..(k + 1) * self.frame_dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.frame_dim)
    }

    pub fn to_frames(&self) -> Vec<Frame> {
        self.frames().map(|f| Frame(f.to_vec())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Joins clips end to end along time.
    pub fn concat(clips: &[Clip]) -> Result<Self> {
        let dim = clips.first().map(|c| c.frame_dim).ok_or(Error::EmptyDataset)?;
        let mut data = Vec::new();
        for c in clips {
            if c.frame_dim != dim {
                return Err(Error::Shape {
                    what: "clip frame_dim",
                    expected: dim,
                    got: c.frame_dim,
                });
            }
            data.extend_from_slice(&c.data);
        }
        Self::new(dim, data)
    }

    /// Splits into clips of `clip_len` frames each.
    pub fn split(&self, clip_len: usize) -> Vec<Clip> {
        self.data
            .chunks_exact(clip_len * self.frame_dim)
            .map(|c| Clip {
                frame_dim: self.frame_dim,
                data: c.to_vec(),
            })
            .collect()
    }
}

/// Unit-norm conditioning vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding(Vec<f64>);

impl PromptEmbedding {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = libm::sqrt(values.iter().map(|v| v * v).sum::<f64>());
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Degenerate("prompt embedding has zero or non-finite norm"));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Standard flow-matching shift `s t / (1 + (s - 1) t)`; fixes 0 and 1.
pub fn shift_timestep(t_raw: f64, shift: f64) -> f64 {
    shift * t_raw / (1.0 + (shift - 1.0) * t_raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimestepSchedule {
    raw_steps: Vec<u32>,
    shift: f64,
    values: Vec<f64>,
}

impl Default for TimestepSchedule {
    fn default() -> Self {
        Self::new(alloc::vec![1000, 750, 500, 250], 5.0).expect("default schedule is valid")
    }
}

impl TimestepSchedule {
    pub const TRAIN_STEPS: f64 = 1000.0;

    pub fn new(raw_steps: Vec<u32>, shift: f64) -> Result<Self> {
        if raw_steps.is_empty() || !(shift > 0.0) {
            return Err(Error::InvalidConfig("schedule needs at least one step and shift > 0"));
        }
        let values: Vec<f64> = raw_steps
            .iter()
            .map(|&s| shift_timestep(s as f64 / Self::TRAIN_STEPS, shift))
            .collect();
        let in_range = values.iter().all(|&t| t > 0.0 && t <= 1.0);
        let decreasing = values.windows(2).all(|w| w[0] > w[1]);
        if !(in_range && decreasing) {
            return Err(Error::InvalidConfig(
                "schedule must be strictly decreasing within (0, 1]",
            ));
        }
        Ok(Self {
            raw_steps,
            shift,
            values,
        })
    }

    pub fn raw_steps(&self) -> &[u32] {
        &self.raw_steps
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Normalized, shifted timesteps, largest first.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(1 - t) x0 + t eps`, elementwise.
pub fn forward_path(x0: &Clip, eps: &Clip, t: f64) -> Result<Clip> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    if x0.data.len() != eps.data.len() || x0.frame_dim != eps.frame_dim {
        return Err(Error::Shape {
            what: "noise clip",
            expected: x0.data.len(),
            got: eps.data.len(),
        });
    }
    let data = x0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(&x, &e)| (1.0 - t) * x + t * e)
        .collect();
    Ok(Clip {
        frame_dim: x0.frame_dim,
        data,
    })
}
