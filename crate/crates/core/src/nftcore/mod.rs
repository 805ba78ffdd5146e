//! Negative-aware fine-tuning with a selectively applied KL penalty.
//!
//! The trainable policy `theta` is contrasted against the behavior policy
//! `theta_old` through the implicit positive and negative policies
//! `v+ = (1 - beta) v_old + beta v_theta` and `v- = (1 + beta) v_old - beta v_theta`.
//! A candidate's normalized advantage `r` weighs its regression of `v+` and
//! `v-` onto the sampled clean clip. Candidates whose primary reward disagrees
//! with the auxiliary rewards are additionally pulled towards `theta_ref`.

mod loss;
mod trainer;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flowgen::NetParams;
use crate::rewardlab::{validate_risk_ratio, AdvantageSource, RewardWeights};
use crate::tensorgrad::AdamWConfig;

pub use loss::{group_loss, GroupLoss, LossInputs};
pub use trainer::{
    Candidate, EpochMetrics, GroupBatch, GroupSignals, PromptPool, RolloutStats, StepGradients, Trainer,
};

/// How the forward-process noise level is chosen for each mini-batch.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum NoiseLevel {
    /// Uniform over the sampler's shifted timesteps.
    #[default]
    Schedule,
    Fixed(f64),
}

impl NoiseLevel {
    pub const TABLE_FIXED: f64 = 0.7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EmaInterval {
    #[default]
    EveryStep,
    EveryEpoch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NftConfig {
    pub beta: f64,
    pub lambda_kl: f64,
    /// Reference reset threshold on the selective KL term.
    pub tau_kl: f64,
    /// Maximum epochs between reference resets.
    pub k_max: u64,
    pub a_max: f64,
    pub gamma: f64,
    pub ema_interval: EmaInterval,
    pub noise_level: NoiseLevel,
    pub group_size: usize,
    pub prompts_per_epoch: usize,
    pub prompt_pool_size: usize,
    pub rho0: f64,
    pub weights: RewardWeights,
    pub advantage_source: AdvantageSource,
    pub max_grad_norm: f64,
    pub optimizer: AdamWConfig,
    pub sink_size: usize,
    pub window_size: usize,
}

impl Default for NftConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lambda_kl: 1e-4,
            tau_kl: 0.05,
            k_max: 20,
            a_max: 5.0,
            gamma: 0.9,
            ema_interval: EmaInterval::EveryStep,
            noise_level: NoiseLevel::Schedule,
            group_size: 8,
            prompts_per_epoch: 8,
            prompt_pool_size: 16,
            rho0: 0.2,
            weights: RewardWeights::default(),
            advantage_source: AdvantageSource::Composite,
            max_grad_norm: 1.0,
            optimizer: AdamWConfig::default(),
            sink_size: 3,
            window_size: 21,
        }
    }
}

impl NftConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &'static str| if ok { Ok(()) } else { Err(Error::InvalidConfig(msg)) };
        check(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive")?;
        check(
            self.lambda_kl >= 0.0 && self.lambda_kl.is_finite(),
            "lambda_kl must be nonnegative",
        )?;
        check(self.tau_kl > 0.0, "tau_kl must be positive")?;
        check(self.a_max > 0.0 && self.a_max.is_finite(), "a_max must be positive")?;
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)")?;
        if let NoiseLevel::Fixed(t) = self.noise_level {
            check(t > 0.0 && t <= 1.0, "fixed noise level must lie in (0, 1]")?;
        }
        check(self.group_size >= 2, "group size must be at least 2")?;
        check(self.prompts_per_epoch >= 1, "prompts_per_epoch must be at least 1")?;
        check(self.prompt_pool_size >= 1, "prompt pool must not be empty")?;
        validate_risk_ratio(self.rho0)?;
        check(self.max_grad_norm > 0.0, "max_grad_norm must be positive")?;
        let o = &self.optimizer;
        check(o.lr > 0.0 && o.lr.is_finite(), "learning rate must be positive")?;
        check(
            (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2),
            "adam betas must lie in [0, 1)",
        )?;
        check(
            o.eps > 0.0 && o.weight_decay >= 0.0,
            "adam eps must be positive and weight decay nonnegative",
        )?;
        Ok(())
    }
}

/// `theta`, the behavior policy `theta_old`, and the KL reference `theta_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTriple {
    pub theta: NetParams,
    pub old: NetParams,
    pub reference: NetParams,
}

impl PolicyTriple {
    /// All three start from the same weights.
    pub fn from_base(base: NetParams) -> Self {
        Self {
            theta: base.clone(),
            old: base.clone(),
            reference: base,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainState {
    /// Index of the next epoch to run.
    pub epoch: u64,
    pub last_reset: u64,
}

pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    // centred on the first reward so that equal rewards give exact zeros
    let r0 = rewards[0];
    let mean = r0 + rewards.iter().map(|r| r - r0).sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// `clip(a / a_max, -1, 1) / 2 + 1/2`.
pub fn normalize_advantage(a: f64, a_max: f64) -> f64 {
    (a / a_max).clamp(-1.0, 1.0) / 2.0 + 0.5
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { what, expected, got })
    }
}

pub fn implicit_policies(v_theta: &[f64], v_old: &[f64], beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("old prediction", v_theta.len(), v_old.len())?;
    let plus = v_theta
        .iter()
        .zip(v_old)
        .map(|(t, o)| (1.0 - beta) * o + beta * t)
        .collect();
    let minus = v_theta
        .iter()
        .zip(v_old)
        .map(|(t, o)| (1.0 + beta) * o - beta * t)
        .collect();
    Ok((plus, minus))
}

fn mean_sq_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `r |v+ - x0|^2 + (1 - r) |v- - x0|^2`, each norm averaged over elements.
pub fn policy_loss(r_tilde: f64, v_plus: &[f64], v_minus: &[f64], x0: &[f64]) -> Result<f64> {
    check_len("positive policy", x0.len(), v_plus.len())?;
    check_len("negative policy", x0.len(), v_minus.len())?;
    Ok(r_tilde * mean_sq_gap(v_plus, x0) + (1.0 - r_tilde) * mean_sq_gap(v_minus, x0))
}

/// Mean over masked samples of the per-element mean squared gap; zero for
/// an empty mask.
pub fn selective_kl_loss(v_theta: &[Vec<f64>], v_ref: &[Vec<f64>], mask: &[bool]) -> Result<f64> {
    check_len("reference predictions", v_theta.len(), v_ref.len())?;
    check_len("mask", v_theta.len(), mask.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((a, b), &m) in v_theta.iter().zip(v_ref).zip(mask) {
        if m {
            check_len("reference prediction", a.len(), b.len())?;
            total += mean_sq_gap(a, b);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

pub fn total_loss(policy: f64, kl: f64, lambda_kl: f64) -> f64 {
    policy + lambda_kl * kl
}

/// `old <- gamma old + (1 - gamma) theta`, elementwise.
pub fn ema_update(old: &mut NetParams, theta: &NetParams, gamma: f64) -> Result<()> {
    if old.arch() != theta.arch() {
        return Err(Error::InvalidConfig("EMA over mismatched architectures"));
    }
    for (o, t) in old.tensors_mut().iter_mut().zip(theta.tensors()) {
        for (a, b) in o.data_mut().iter_mut().zip(t.data()) {
            *a = gamma * *a + (1.0 - gamma) * b;
        }
    }
    Ok(())
}

/// Copies `theta` into the reference when `l_kl > tau_kl` or more than
/// `k_max` epochs have passed since the last reset.
pub fn maybe_reset_reference(
    state: &mut TrainState,
    policies: &mut PolicyTriple,
    l_kl: f64,
    tau_kl: f64,
    k_max: u64,
) -> bool {
    let elapsed = state.epoch.saturating_sub(state.last_reset);
    let reset = l_kl > tau_kl || elapsed > k_max;
    if reset {
        policies.reference = policies.theta.clone();
        state.last_reset = state.epoch;
    }
    reset
}
