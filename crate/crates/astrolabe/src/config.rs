use std::fs;
use std::path::Path;

use astrolabe_core::flowgen::{ClipDims, NetArch, PretrainConfig, TimestepSchedule, ToyTask};
use astrolabe_core::nftcore::{EmaInterval, NftConfig, NoiseLevel};
use astrolabe_core::rewardlab::{AdvantageSource, RewardWeights};
use astrolabe_core::tensorgrad::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::RunError;

/// Group size used by `--paper-scale`.
pub const FULL_SCALE_GROUP_SIZE: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Short,
    Long,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    #[default]
    Step,
    Epoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    #[default]
    Composite,
    Primary,
}

/// `"schedule"` or `{"fixed": t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Schedule,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            max_grad_norm: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub radius: f64,
    pub angular_step: f64,
    pub speed_jitter: f64,
    pub phase_jitter: f64,
    pub prompt_spread: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let t = ToyTask::default();
        Self {
            radius: t.radius,
            angular_step: t.angular_step,
            speed_jitter: t.speed_jitter,
            phase_jitter: t.phase_jitter,
            prompt_spread: t.prompt_spread,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub continuous_t_prob: f64,
    /// Trajectories in the pretraining corpus.
    pub corpus_size: usize,
    pub clips_per_trajectory: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            steps: p.steps,
            hidden: 128,
            batch_size: p.batch_size,
            lr: p.lr,
            final_lr_fraction: p.final_lr_fraction,
            continuous_t_prob: p.continuous_t_prob,
            corpus_size: 256,
            clips_per_trajectory: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub frame_dim: usize,
    pub clip_len: usize,
    pub prompt_dim: usize,
    pub sink_size: usize,
    pub window_size: usize,
    pub group_size: usize,
    pub prompts_per_epoch: usize,
    pub prompt_pool_size: usize,
    pub epochs: u64,
    pub beta: f64,
    pub lambda_kl: f64,
    pub tau_kl: f64,
    pub k_max: u64,
    pub gamma: f64,
    pub ema_interval: EmaMode,
    pub a_max: f64,
    pub rho0: f64,
    /// Visual, motion, and text-alignment weights.
    pub reward_weights: [f64; 3],
    pub advantage_source: AdvantageMode,
    pub noise_level: NoiseMode,
    pub mode: Mode,
    pub total_clips: usize,
    pub window_clips: usize,
    pub raw_steps: Vec<u32>,
    pub shift: f64,
    pub optimizer: OptimizerConfig,
    pub task: TaskConfig,
    pub pretrain: PretrainSection,
    /// Adds elapsed seconds to each metrics record; off keeps logs
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let nft = NftConfig::default();
        let dims = ClipDims::default();
        let sched = TimestepSchedule::default();
        Self {
            seed: 0,
            frame_dim: dims.frame_dim,
            clip_len: dims.clip_len,
            prompt_dim: dims.prompt_dim,
            sink_size: nft.sink_size,
            window_size: nft.window_size,
            group_size: nft.group_size,
            prompts_per_epoch: nft.prompts_per_epoch,
            prompt_pool_size: nft.prompt_pool_size,
            epochs: 200,
            beta: nft.beta,
            lambda_kl: nft.lambda_kl,
            tau_kl: nft.tau_kl,
            k_max: nft.k_max,
            gamma: nft.gamma,
            ema_interval: EmaMode::Step,
            a_max: nft.a_max,
            rho0: nft.rho0,
            reward_weights: nft.weights.values(),
            advantage_source: AdvantageMode::Composite,
            noise_level: NoiseMode::Schedule,
            mode: Mode::Short,
            total_clips: 8,
            window_clips: 1,
            raw_steps: sched.raw_steps().to_vec(),
            shift: sched.shift(),
            optimizer: OptimizerConfig::default(),
            task: TaskConfig::default(),
            pretrain: PretrainSection::default(),
            record_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        fs::write(path, self.to_json()).map_err(|e| RunError::io(path, e))
    }

    /// Switches to the full-scale group size.
    pub fn full_scale(mut self) -> Self {
        self.group_size = FULL_SCALE_GROUP_SIZE;
        self
    }

    pub fn dims(&self) -> ClipDims {
        ClipDims {
            frame_dim: self.frame_dim,
            clip_len: self.clip_len,
            prompt_dim: self.prompt_dim,
        }
    }

    pub fn task(&self) -> ToyTask {
        ToyTask {
            dims: self.dims(),
            radius: self.task.radius,
            angular_step: self.task.angular_step,
            speed_jitter: self.task.speed_jitter,
            phase_jitter: self.task.phase_jitter,
            prompt_spread: self.task.prompt_spread,
        }
    }

    pub fn arch(&self) -> NetArch {
        NetArch::new(self.dims(), self.pretrain.hidden)
    }

    pub fn schedule(&self) -> Result<TimestepSchedule, RunError> {
        Ok(TimestepSchedule::new(self.raw_steps.clone(), self.shift)?)
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain.steps,
            batch_size: self.pretrain.batch_size,
            lr: self.pretrain.lr,
            final_lr_fraction: self.pretrain.final_lr_fraction,
            continuous_t_prob: self.pretrain.continuous_t_prob,
            sink: self.sink_size,
            window: self.window_size,
            seed: self.seed,
            ..PretrainConfig::default()
        }
    }

    pub fn nft_config(&self) -> Result<NftConfig, RunError> {
        let o = self.optimizer;
        let cfg = NftConfig {
            beta: self.beta,
            lambda_kl: self.lambda_kl,
            tau_kl: self.tau_kl,
            k_max: self.k_max,
            a_max: self.a_max,
            gamma: self.gamma,
            ema_interval: match self.ema_interval {
                EmaMode::Step => EmaInterval::EveryStep,
                EmaMode::Epoch => EmaInterval::EveryEpoch,
            },
            noise_level: match self.noise_level {
                NoiseMode::Schedule => NoiseLevel::Schedule,
                NoiseMode::Fixed(t) => NoiseLevel::Fixed(t),
            },
            group_size: self.group_size,
            prompts_per_epoch: self.prompts_per_epoch,
            prompt_pool_size: self.prompt_pool_size,
            rho0: self.rho0,
            weights: RewardWeights::new(self.reward_weights)?,
            advantage_source: match self.advantage_source {
                AdvantageMode::Composite => AdvantageSource::Composite,
                AdvantageMode::Primary => AdvantageSource::Primary,
            },
            max_grad_norm: o.max_grad_norm,
            optimizer: AdamWConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
            },
            sink_size: self.sink_size,
            window_size: self.window_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(RunError::Config(msg.to_string()))
            }
        };
        check(self.frame_dim >= 2, "frame_dim must be at least 2")?;
        check(self.clip_len >= 1, "clip_len must be positive")?;
        check(
            self.prompt_dim >= 2 && self.prompt_dim <= self.frame_dim,
            "prompt_dim must lie in 2..=frame_dim",
        )?;
        check(self.pretrain.hidden >= 1, "pretrain.hidden must be positive")?;
        check(self.pretrain.batch_size >= 1, "pretrain.batch_size must be positive")?;
        check(self.pretrain.corpus_size >= 1, "pretrain.corpus_size must be positive")?;
        check(
            self.pretrain.clips_per_trajectory >= 1,
            "pretrain.clips_per_trajectory must be positive",
        )?;
        check(self.pretrain.lr > 0.0, "pretrain.lr must be positive")?;
        check(self.window_clips >= 1, "window_clips must be positive")?;
        check(
            self.window_clips <= self.total_clips,
            "window_clips must not exceed total_clips",
        )?;
        check(self.task.radius > 0.0, "task.radius must be positive")?;
        check(
            self.task.phase_jitter >= 0.0 && self.task.speed_jitter >= 0.0 && self.task.prompt_spread >= 0.0,
            "task jitters must be nonnegative",
        )?;
        self.schedule()?;
        self.nft_config()?;
        Ok(())
    }
}
