//! Analytic reward analogs, composite aggregation, ranking, rank
//! disagreement, and the uncertainty mask.
//!
//! Three reward models score a clip, higher is better:
//!
//! * visual quality (primary): mean of `-dist^2` to the target manifold over
//!   the best `ceil(0.3 C)` frames;
//! * motion quality: minus the mean squared second temporal difference of
//!   each frame's coordinate mean;
//! * text alignment: cosine between the clip-mean frame (first `d_p`
//!   coordinates) and the prompt.

mod risk;
mod stats;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flowgen::{Clip, PromptEmbedding, ToyTask};

pub use risk::{ConstantRisk, RiskState, RiskStrategy, RISK_BUFFER_CAPACITY};
pub use stats::{RunningStats, Standardizer, STD_FLOOR};

pub const NUM_MODELS: usize = 3;
pub const VISUAL_QUALITY: usize = 0;
pub const MOTION_QUALITY: usize = 1;
pub const TEXT_ALIGNMENT: usize = 2;
pub const MODEL_NAMES: [&str; NUM_MODELS] = ["vq", "mq", "ta"];

/// Per-model scores for one candidate; index 0 is the primary model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardVector(pub [f64; NUM_MODELS]);

impl RewardVector {
    pub fn primary(&self) -> f64 {
        self.0[VISUAL_QUALITY]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardModels {
    pub task: ToyTask,
    /// Fraction of frames, by per-frame score, that the visual score keeps.
    pub top_fraction: f64,
}

impl RewardModels {
    pub fn new(task: ToyTask) -> Self {
        Self {
            task,
            top_fraction: 0.3,
        }
    }

    /// `ceil(top_fraction * frames)`, at least one frame.
    pub fn top_count(&self, frames: usize) -> usize {
        let raw = self.top_fraction * frames as f64;
        // guard against 0.3 * 10 = 3.0000000000000004
        let k = libm::ceil(raw - 1e-9) as usize;
        k.clamp(1, frames.max(1))
    }

    pub fn visual_quality(&self, clip: &Clip) -> f64 {
        let mut scores: Vec<f64> = clip
            .frames()
            .map(|f| {
                let d = self.task.manifold_distance(f);
                -d * d
            })
            .collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let k = self.top_count(scores.len());
        scores[..k].iter().sum::<f64>() / k as f64
    }

    pub fn motion_quality(&self, clip: &Clip) -> f64 {
        let proj: Vec<f64> = clip.frames().map(|f| f.iter().sum::<f64>() / f.len() as f64).collect();
        if proj.len() < 3 {
            return 0.0;
        }
        let n = proj.len() - 2;
        let total: f64 = proj
            .windows(3)
            .map(|w| {
                let a = w[2] - 2.0 * w[1] + w[0];
                a * a
            })
            .sum();
        -total / n as f64
    }

    pub fn text_alignment(&self, clip: &Clip, prompt: &PromptEmbedding) -> f64 {
        let p = prompt.values();
        let mut mean = alloc::vec![0.0; p.len()];
        let frames = clip.len() as f64;
        for f in clip.frames() {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / frames;
            }
        }
        let norm = libm::sqrt(mean.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return 0.0;
        }
        mean.iter().zip(p).map(|(m, q)| m * q).sum::<f64>() / norm
    }

    pub fn score(&self, clip: &Clip, prompt: &PromptEmbedding) -> RewardVector {
        RewardVector([
            self.visual_quality(clip),
            self.motion_quality(clip),
            self.text_alignment(clip, prompt),
        ])
    }

    pub fn eval_rewards(&self, clips: &[Clip], prompt: &PromptEmbedding) -> Vec<RewardVector> {
        clips.iter().map(|c| self.score(c, prompt)).collect()
    }
}

/// Nonnegative per-model weights that sum to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights([f64; NUM_MODELS]);

impl Default for RewardWeights {
    fn default() -> Self {
        Self([1.0 / 3.0; NUM_MODELS])
    }
}

impl RewardWeights {
    pub fn new(weights: [f64; NUM_MODELS]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("reward weights must be nonnegative and sum to 1"));
        }
        Ok(Self(weights))
    }

    pub fn primary_only() -> Self {
        let mut w = [0.0; NUM_MODELS];
        w[VISUAL_QUALITY] = 1.0;
        Self(w)
    }

    pub fn values(&self) -> [f64; NUM_MODELS] {
        self.0
    }
}

/// Weighted sum of (already standardized) per-model scores.
pub fn aggregate_composite(scores: &RewardVector, weights: &RewardWeights) -> f64 {
    scores.0.iter().zip(weights.0).map(|(s, w)| s * w).sum()
}

/// Which reward the advantages are built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdvantageSource {
    #[default]
    Composite,
    Primary,
}

/// Rank 1 is the highest score; ties go to the lower index.
pub fn rank_samples(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = alloc::vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Primary rank minus the mean auxiliary rank, per candidate.
pub fn rank_disagreement(primary: &[usize], aux: &[Vec<usize>]) -> Result<Vec<f64>> {
    if aux.is_empty() {
        return Err(Error::Degenerate("rank disagreement needs at least two reward models"));
    }
    for a in aux {
        if a.len() != primary.len() {
            return Err(Error::Shape {
                what: "auxiliary ranks",
                expected: primary.len(),
                got: a.len(),
            });
        }
    }
    let m = aux.len() as f64;
    Ok((0..primary.len())
        .map(|i| primary[i] as f64 - aux.iter().map(|a| a[i] as f64).sum::<f64>() / m)
        .collect())
}

/// Linear-interpolation percentile of `sorted` (ascending) at `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskReport {
    /// `+inf` when no discrepancy is nonnegative.
    pub tau: f64,
    pub mask: Vec<bool>,
}

impl MaskReport {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.mask.len() as f64
        }
    }
}

pub fn validate_risk_ratio(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidConfig("risk ratio must lie in (0, 0.5]"))
    }
}

/// Threshold at the `100 (1 - rho)` percentile of the nonnegative
/// discrepancies; a candidate is masked when its discrepancy exceeds it.
pub fn uncertainty_mask(delta: &[f64], rho: f64) -> Result<MaskReport> {
    validate_risk_ratio(rho)?;
    let mut nonneg: Vec<f64> = delta.iter().copied().filter(|d| *d >= 0.0).collect();
    nonneg.sort_by(f64::total_cmp);
    let tau = percentile(&nonneg, 100.0 * (1.0 - rho)).unwrap_or(f64::INFINITY);
    Ok(MaskReport {
        tau,
        mask: delta.iter().map(|&d| d > tau).collect(),
    })
}

/// Ranks of every model, the discrepancies, and the mask for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    pub ranks: [Vec<usize>; NUM_MODELS],
    pub delta: Vec<f64>,
    pub mask: MaskReport,
}

pub fn rank_report(rewards: &[RewardVector], rho: f64) -> Result<RankReport> {
    let ranks: [Vec<usize>; NUM_MODELS] =
        core::array::from_fn(|m| rank_samples(&rewards.iter().map(|r| r.0[m]).collect::<Vec<_>>()));
    let delta = rank_disagreement(&ranks[VISUAL_QUALITY], &ranks[1..])?;
    let mask = uncertainty_mask(&delta, rho)?;
    Ok(RankReport { ranks, delta, mask })
}
