use alloc::collections::BTreeMap;

use super::{RewardVector, NUM_MODELS};

pub const STD_FLOOR: f64 = 1e-6;

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations from the running mean.
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Unbiased sample variance; `None` below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }
}

/// Per-prompt running means with one pooled within-prompt std per model.
///
/// A score is standardized as `(r - mean_prompt) / std_model`, where
/// `std_model` pools the squared deviations of every prompt around its own
/// mean. Before any prompt has two observations the std is taken as 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Standardizer {
    per_prompt: BTreeMap<u64, [RunningStats; NUM_MODELS]>,
}

impl Standardizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u64, [RunningStats; NUM_MODELS])>) -> Self {
        Self {
            per_prompt: entries.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&u64, &[RunningStats; NUM_MODELS])> + '_ {
        self.per_prompt.iter()
    }

    pub fn observe(&mut self, prompt_id: u64, rewards: &[RewardVector]) {
        let stats = self.per_prompt.entry(prompt_id).or_default();
        for r in rewards {
            for (s, v) in stats.iter_mut().zip(r.0) {
                s.push(v);
            }
        }
    }

    pub fn mean(&self, prompt_id: u64, model: usize) -> f64 {
        self.per_prompt.get(&prompt_id).map_or(0.0, |s| s[model].mean)
    }

    pub fn std(&self, model: usize) -> f64 {
        let (m2, dof) = self.per_prompt.values().fold((0.0, 0u64), |(m2, dof), s| {
            let st = s[model];
            if st.count >= 2 {
                (m2 + st.m2, dof + st.count - 1)
            } else {
                (m2, dof)
            }
        });
        if dof == 0 {
            return 1.0;
        }
        libm::sqrt(m2 / dof as f64).max(STD_FLOOR)
    }

    pub fn standardize(&self, prompt_id: u64, raw: &RewardVector) -> RewardVector {
        RewardVector(core::array::from_fn(|m| {
            (raw.0[m] - self.mean(prompt_id, m)) / self.std(m)
        }))
    }
}
