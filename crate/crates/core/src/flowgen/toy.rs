use alloc::vec::Vec;

use super::{Clip, ClipDims, Frame, PromptEmbedding};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Circle-trajectory task.
///
/// A prompt fixes a starting phase (the angle of its first two components).
/// Frames lie on the circle of `radius` in the first two coordinates, all
/// other coordinates zero. Each clip advances by its own angular step, drawn
/// around `angular_step`; the first clip also carries a random phase offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyTask {
    pub dims: ClipDims,
    pub radius: f64,
    pub angular_step: f64,
    /// Relative half-width of the per-clip step distribution.
    pub speed_jitter: f64,
    /// Standard deviation of the starting-phase offset.
    pub phase_jitter: f64,
    /// Standard deviation of the non-phase prompt components before
    /// normalization.
    pub prompt_spread: f64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            dims: ClipDims::default(),
            radius: 1.0,
            angular_step: 0.25,
            speed_jitter: 0.3,
            phase_jitter: 0.4,
            prompt_spread: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub prompt: PromptEmbedding,
    pub clips: Vec<Clip>,
}

impl ToyTask {
    pub fn prompt_phase(&self, prompt: &PromptEmbedding) -> f64 {
        let p = prompt.values();
        libm::atan2(p[1], p[0])
    }

    pub fn sample_prompt(&self, rng: &mut NoiseStream) -> PromptEmbedding {
        let phase = rng.uniform_in(-core::f64::consts::PI, core::f64::consts::PI);
        let mut v = Vec::with_capacity(self.dims.prompt_dim);
        v.push(libm::cos(phase));
        v.push(libm::sin(phase));
        for _ in 2..self.dims.prompt_dim {
            v.push(self.prompt_spread * rng.normal());
        }
        PromptEmbedding::new(v).expect("leading components have unit norm")
    }

    pub fn frame_at(&self, angle: f64) -> Frame {
        let mut v = alloc::vec![0.0; self.dims.frame_dim];
        v[0] = self.radius * libm::cos(angle);
        v[1] = self.radius * libm::sin(angle);
        Frame::new(v)
    }

    /// L2 distance to the nearest point of the circle.
    pub fn manifold_distance(&self, frame: &[f64]) -> f64 {
        let planar = libm::hypot(frame[0], frame[1]);
        let off: f64 = frame[2..].iter().map(|v| v * v).sum();
        libm::sqrt((planar - self.radius) * (planar - self.radius) + off)
    }

    /// Nearest circle point; the origin maps to the point at angle zero.
    pub fn project_to_manifold(&self, frame: &[f64]) -> Frame {
        self.frame_at(libm::atan2(frame[1], frame[0]))
    }

    /// Angle of the first frame of clip 0, before jitter. Chosen so the
    /// first clip is centred on the prompt phase.
    fn base_angle(&self, prompt: &PromptEmbedding) -> f64 {
        let centre = (self.dims.clip_len as f64 - 1.0) / 2.0;
        self.prompt_phase(prompt) - centre * self.angular_step
    }

    pub fn trajectory(&self, prompt: PromptEmbedding, n_clips: usize, rng: &mut NoiseStream) -> Result<Trajectory> {
        let mut angle = self.base_angle(&prompt) + self.phase_jitter * rng.normal();
        let mut clips = Vec::with_capacity(n_clips);
        for n in 0..n_clips {
            let step = self.angular_step * (1.0 + self.speed_jitter * rng.uniform_in(-1.0, 1.0));
            let mut frames = Vec::with_capacity(self.dims.clip_len);
            for k in 0..self.dims.clip_len {
                if n > 0 || k > 0 {
                    angle += step;
                }
                frames.push(self.frame_at(angle));
            }
            clips.push(Clip::from_frames(&frames)?);
        }
        Ok(Trajectory { prompt, clips })
    }
}

/// Fixed set of trajectories generated from one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub task: ToyTask,
    pub trajectories: Vec<Trajectory>,
}

impl ToyCorpus {
    pub fn generate(task: ToyTask, count: usize, clips_per_trajectory: usize, rng: &mut NoiseStream) -> Result<Self> {
        if count == 0 || clips_per_trajectory == 0 {
            return Err(Error::EmptyDataset);
        }
        let trajectories = (0..count)
            .map(|_| {
                let prompt = task.sample_prompt(rng);
                task.trajectory(prompt, clips_per_trajectory, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { task, trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn clips_per_trajectory(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.clips.len())
    }
}
