use alloc::vec::Vec;

use super::loss::{group_loss, GroupLoss, LossInputs};
use super::{
    compute_advantages, ema_update, maybe_reset_reference, normalize_advantage, EmaInterval, NftConfig, NoiseLevel,
    PolicyTriple, TrainState,
};
use crate::error::{Error, Result};
use crate::flowgen::{
    forward_path, BoundNet, Clip, ContextInput, DenoiseRow, NetParams, PromptEmbedding, TimestepSchedule, ToyTask,
};
use crate::rewardlab::{
    aggregate_composite, rank_report, AdvantageSource, RankReport, RewardModels, RewardVector, RiskState, Standardizer,
    NUM_MODELS,
};
use crate::rng::{NoiseStream, Purpose, StreamKey};
use crate::streamctx::{group_rollout, ContextWindow, GroupKey};
use crate::tensorgrad::{clip_global_norm, AdamW, DenseArray, GradError, Graph};

/// Fixed set of prompts; a prompt's id is its index.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptPool {
    prompts: Vec<PromptEmbedding>,
}

impl PromptPool {
    pub fn generate(task: &ToyTask, size: usize, seed: u64) -> Self {
        let mut rng = NoiseStream::new(StreamKey::new(seed, Purpose::PromptPool));
        Self {
            prompts: (0..size).map(|_| task.sample_prompt(&mut rng)).collect(),
        }
    }

    pub fn from_prompts(prompts: Vec<PromptEmbedding>) -> Self {
        Self { prompts }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, id: u64) -> &PromptEmbedding {
        &self.prompts[id as usize]
    }

    /// `count` prompt ids for `epoch`, distinct while the pool allows.
    pub fn select(&self, seed: u64, epoch: u64, count: usize) -> Vec<u64> {
        let mut rng = NoiseStream::new(StreamKey::new(seed, Purpose::PromptSelect).epoch(epoch));
        let mut ids: Vec<u64> = (0..self.prompts.len() as u64).collect();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let fresh = count - out.len();
            for i in 0..fresh.min(ids.len()) {
                let j = i + rng.index(ids.len() - i);
                ids.swap(i, j);
                out.push(ids[i]);
            }
        }
        out
    }
}

/// One candidate's generated window: clips in order and the context summary
/// each clip was generated under.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub clips: Vec<Clip>,
    pub summaries: Vec<Vec<f64>>,
}

impl Candidate {
    /// All clips joined along time; this is what the rewards score.
    pub fn window(&self) -> Result<Clip> {
        Clip::concat(&self.clips)
    }
}

/// Candidates for one prompt. `slot` is the group's position in the epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupBatch {
    pub slot: u64,
    pub prompt_id: u64,
    pub prompt: PromptEmbedding,
    pub candidates: Vec<Candidate>,
}

/// Rewards, advantages and mask for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSignals {
    pub rewards: Vec<RewardVector>,
    pub advantages: Vec<f64>,
    pub r_tilde: Vec<f64>,
    pub report: RankReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutStats {
    /// Mean raw score of each reward model.
    pub reward_means: [f64; NUM_MODELS],
    /// Configured weighted sum of the raw means.
    pub composite: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub rollout: RolloutStats,
    pub policy_loss: f64,
    pub kl_loss: f64,
    pub total_loss: f64,
    pub mask_fraction: f64,
    /// Mean threshold over groups with a finite one.
    pub tau: Option<f64>,
    pub rho: f64,
    /// Mean pre-clip gradient norm.
    pub grad_norm: f64,
    pub reset: bool,
    /// Largest tracked node count any loss depended on.
    pub live_nodes: usize,
    pub wall_time_s: Option<f64>,
}

/// Result of one mini-batch backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGradients {
    pub policy: f64,
    pub kl: f64,
    pub total: f64,
    /// One gradient per parameter tensor, before clipping.
    pub grads: Vec<DenseArray>,
    /// Tracked nodes the loss depends on.
    pub live_nodes: usize,
}

impl StepGradients {
    pub fn from_graph(graph: &Graph, loss: GroupLoss, epoch: u64) -> Result<Self> {
        let total = graph.value(loss.total).data()[0];
        if !total.is_finite() {
            return Err(Error::Diverged {
                stage: "policy loss",
                step: epoch,
                value: total,
            });
        }
        let grads = graph
            .backward(loss.total)
            .map_err(|e| diverged("backward", epoch)(e.into()))?;
        Ok(Self {
            policy: loss.policy,
            kl: loss.kl,
            total,
            grads: grads.into_param_vec(),
            live_nodes: graph.live_size(loss.total),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: NftConfig,
    policies: PolicyTriple,
    state: TrainState,
    optimizer: AdamW,
    standardizer: Standardizer,
    risk: RiskState,
    rewards: RewardModels,
    schedule: TimestepSchedule,
    pool: PromptPool,
    seed: u64,
}

fn diverged(stage: &'static str, epoch: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Grad(GradError::NonFinite { .. }) => Error::Diverged {
            stage,
            step: epoch,
            value: f64::NAN,
        },
        other => other,
    }
}

impl Trainer {
    pub fn new(base: NetParams, task: ToyTask, schedule: TimestepSchedule, cfg: NftConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pool = PromptPool::generate(&task, cfg.prompt_pool_size, seed);
        Ok(Self {
            policies: PolicyTriple::from_base(base),
            state: TrainState::default(),
            optimizer: AdamW::new(cfg.optimizer),
            standardizer: Standardizer::new(),
            risk: RiskState::new(cfg.rho0)?,
            rewards: RewardModels::new(task),
            schedule,
            pool,
            cfg,
            seed,
        })
    }

    /// Restores a trainer from saved state.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        task: ToyTask,
        schedule: TimestepSchedule,
        cfg: NftConfig,
        seed: u64,
        policies: PolicyTriple,
        state: TrainState,
        optimizer: AdamW,
        standardizer: Standardizer,
        risk: RiskState,
    ) -> Result<Self> {
        let mut t = Self::new(policies.theta.clone(), task, schedule, cfg, seed)?;
        t.policies = policies;
        t.state = state;
        t.optimizer = optimizer;
        t.standardizer = standardizer;
        t.risk = risk;
        Ok(t)
    }

    pub fn config(&self) -> &NftConfig {
        &self.cfg
    }

    pub fn policies(&self) -> &PolicyTriple {
        &self.policies
    }

    pub fn policies_mut(&mut self) -> &mut PolicyTriple {
        &mut self.policies
    }

    pub fn state(&self) -> TrainState {
        self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState {
        &mut self.state
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn risk(&self) -> &RiskState {
        &self.risk
    }

    pub fn reward_models(&self) -> &RewardModels {
        &self.rewards
    }

    pub fn schedule(&self) -> &TimestepSchedule {
        &self.schedule
    }

    pub fn pool(&self) -> &PromptPool {
        &self.pool
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn task(&self) -> &ToyTask {
        &self.rewards.task
    }

    pub fn epoch_prompts(&self, epoch: u64) -> Vec<u64> {
        self.pool.select(self.seed, epoch, self.cfg.prompts_per_epoch)
    }

    pub fn group_key(&self, epoch: u64, slot: u64) -> GroupKey {
        GroupKey {
            seed: self.seed,
            epoch,
            prompt_slot: slot,
        }
    }

    pub fn empty_context(&self) -> ContextWindow {
        ContextWindow::new(self.cfg.sink_size, self.cfg.window_size, self.task().dims.frame_dim)
    }

    /// One-clip groups from an empty context, sampled with `params`.
    pub fn short_groups(&self, params: &NetParams, epoch: u64) -> Result<Vec<GroupBatch>> {
        let ctx = self.empty_context();
        let summary = ctx.summary_values();
        self.epoch_prompts(epoch)
            .into_iter()
            .enumerate()
            .map(|(slot, prompt_id)| {
                let prompt = self.pool.get(prompt_id).clone();
                let key = self.group_key(epoch, slot as u64);
                let clips = group_rollout(params, &ctx, &prompt, self.cfg.group_size, &self.schedule, key)?;
                Ok(GroupBatch {
                    slot: slot as u64,
                    prompt_id,
                    prompt,
                    candidates: clips
                        .into_iter()
                        .map(|c| Candidate {
                            clips: alloc::vec![c],
                            summaries: alloc::vec![summary.clone()],
                        })
                        .collect(),
                })
            })
            .collect()
    }

    /// Raw reward statistics of `groups`.
    pub fn rollout_stats(&self, groups: &[GroupBatch]) -> Result<RolloutStats> {
        let mut sums = [0.0; NUM_MODELS];
        let mut n = 0usize;
        for g in groups {
            for c in &g.candidates {
                let r = self.rewards.score(&c.window()?, &g.prompt);
                for (s, v) in sums.iter_mut().zip(r.0) {
                    *s += v;
                }
                n += 1;
            }
        }
        let reward_means = sums.map(|s| s / n.max(1) as f64);
        let composite = aggregate_composite(&RewardVector(reward_means), &self.cfg.weights);
        Ok(RolloutStats {
            reward_means,
            composite,
        })
    }

    /// Statistics of the short-mode rollout `params` would produce at
    /// `epoch`, with the same prompts and noise the trainer would use.
    pub fn evaluate_short(&self, params: &NetParams, epoch: u64) -> Result<RolloutStats> {
        self.rollout_stats(&self.short_groups(params, epoch)?)
    }

    /// Short-clip epoch: roll out under the behavior policy, then optimize.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let groups = self.short_groups(&self.policies.old, self.state.epoch)?;
        self.train_on_groups(&groups)
    }

    /// Rewards, standardization, advantages, rank disagreement and masks for
    /// every group; updates the running reward statistics and risk buffer.
    pub fn assess(&mut self, groups: &[GroupBatch]) -> Result<Vec<GroupSignals>> {
        let mut raw = Vec::with_capacity(groups.len());
        for g in groups {
            if g.candidates.len() < 2 {
                return Err(Error::GroupTooSmall(g.candidates.len()));
            }
            let windows = g.candidates.iter().map(Candidate::window).collect::<Result<Vec<_>>>()?;
            let r = self.rewards.eval_rewards(&windows, &g.prompt);
            if let Some(bad) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    stage: "reward evaluation",
                    step: self.state.epoch,
                    value: bad.primary(),
                });
            }
            self.standardizer.observe(g.prompt_id, &r);
            raw.push(r);
        }
        let deltas = groups
            .iter()
            .zip(&raw)
            .map(|(_, r)| rank_report(r, self.risk.rho()).map(|rep| rep.delta))
            .collect::<Result<Vec<_>>>()?;
        let rho = self.risk.update(&deltas.concat());

        groups
            .iter()
            .zip(raw)
            .map(|(g, rewards)| {
                let scalar: Vec<f64> = rewards
                    .iter()
                    .map(|r| {
                        let z = self.standardizer.standardize(g.prompt_id, r);
                        match self.cfg.advantage_source {
                            AdvantageSource::Composite => aggregate_composite(&z, &self.cfg.weights),
                            AdvantageSource::Primary => z.primary(),
                        }
                    })
                    .collect();
                let advantages = compute_advantages(&scalar)?;
                let r_tilde = advantages
                    .iter()
                    .map(|&a| normalize_advantage(a, self.cfg.a_max))
                    .collect();
                let report = rank_report(&rewards, rho)?;
                Ok(GroupSignals {
                    rewards,
                    advantages,
                    r_tilde,
                    report,
                })
            })
            .collect()
    }

    fn forward_noise(&self, epoch: u64, slot: u64, rows: usize) -> (f64, Vec<Vec<f64>>) {
        let mut rng = NoiseStream::new(StreamKey::new(self.seed, Purpose::ForwardNoise).epoch(epoch).slot(slot));
        let t = match self.cfg.noise_level {
            NoiseLevel::Schedule => self.schedule.values()[rng.index(self.schedule.len())],
            NoiseLevel::Fixed(t) => t,
        };
        let numel = self.task().dims.clip_numel();
        (t, (0..rows).map(|_| rng.normal_vec(numel)).collect())
    }

    /// Builds the mini-batch loss for `batch` on `graph`, with `theta`
    /// already bound there. `theta_contexts` overrides the context input of
    /// each row of the trainable prediction; by default the stored summaries
    /// enter as values.
    pub fn group_loss_on(
        &self,
        graph: &mut Graph,
        theta: &BoundNet,
        batch: &GroupBatch,
        signals: &GroupSignals,
        epoch: u64,
        theta_contexts: Option<Vec<ContextInput>>,
    ) -> Result<GroupLoss> {
        let dims = self.task().dims;
        let mut x0_rows = Vec::new();
        let mut noisy = Vec::new();
        let mut summaries = Vec::new();
        let mut r_rows = Vec::new();
        let mut kl_rows = Vec::new();
        let masked = signals.report.mask.count();
        let n_rows: usize = batch.candidates.iter().map(|c| c.clips.len()).sum();
        let (t, eps) = self.forward_noise(epoch, batch.slot, n_rows);
        let mut eps = eps.into_iter();
        for (i, c) in batch.candidates.iter().enumerate() {
            let kl_w = if signals.report.mask.mask[i] {
                1.0 / (masked * c.clips.len()) as f64
            } else {
                0.0
            };
            for (clip, summary) in c.clips.iter().zip(&c.summaries) {
                let e = Clip::new(dims.frame_dim, eps.next().expect("one noise row per clip"))?;
                noisy.push(forward_path(clip, &e, t)?);
                x0_rows.extend_from_slice(clip.data());
                summaries.push(summary);
                r_rows.push(signals.r_tilde[i]);
                kl_rows.push(kl_w);
            }
        }
        let rows = |ctx: &mut dyn FnMut(usize) -> ContextInput| -> Vec<DenoiseRow<'_>> {
            noisy
                .iter()
                .enumerate()
                .map(|(r, x_t)| DenoiseRow {
                    x_t,
                    t,
                    context: ctx(r),
                    prompt: &batch.prompt,
                })
                .collect()
        };
        let detached = |params: &NetParams| -> Result<DenseArray> {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let out = bound.predict_rows(&mut g, &rows(&mut |r| ContextInput::Values(summaries[r].clone())))?;
            Ok(g.value(out).clone())
        };
        let v_old = detached(&self.policies.old)?;
        let v_ref = detached(&self.policies.reference)?;
        let x0 = DenseArray::matrix(n_rows, dims.clip_numel(), x0_rows)?;

        let theta_rows = match theta_contexts {
            Some(ctxs) => {
                if ctxs.len() != n_rows {
                    return Err(Error::Shape {
                        what: "trainable contexts",
                        expected: n_rows,
                        got: ctxs.len(),
                    });
                }
                let mut it = ctxs.into_iter();
                rows(&mut |_| it.next().expect("length checked"))
            }
            None => rows(&mut |r| ContextInput::Values(summaries[r].clone())),
        };
        let v_theta = theta.predict_rows(graph, &theta_rows)?;
        group_loss(
            graph,
            v_theta,
            LossInputs {
                x0: &x0,
                v_old: &v_old,
                v_ref: &v_ref,
                r_tilde: &r_rows,
                kl_row_weights: &kl_rows,
                beta: self.cfg.beta,
                lambda_kl: self.cfg.lambda_kl,
            },
        )
    }

    /// Loss values and unclipped gradients of one mini-batch at the current
    /// `theta`.
    pub fn group_gradients(&self, batch: &GroupBatch, signals: &GroupSignals, epoch: u64) -> Result<StepGradients> {
        let mut graph = Graph::new();
        let bound = self.policies.theta.bind(&mut graph, true);
        let loss = self
            .group_loss_on(&mut graph, &bound, batch, signals, epoch, None)
            .map_err(diverged("policy loss", epoch))?;
        StepGradients::from_graph(&graph, loss, epoch)
    }

    /// Full epoch on already generated groups: assessment, one optimizer
    /// step per group, conditional reference reset, behavior-policy EMA.
    pub fn train_on_groups(&mut self, groups: &[GroupBatch]) -> Result<EpochMetrics> {
        let epoch = self.state.epoch;
        let rollout = self.rollout_stats(groups)?;
        let signals = self.assess(groups)?;

        let mut policy_sum = 0.0;
        let mut total_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut kl_groups = 0usize;
        let mut norm_sum = 0.0;
        let mut live_nodes = 0;
        for (batch, sig) in groups.iter().zip(&signals) {
            let step = self.group_gradients(batch, sig, epoch)?;
            let total = step.total;
            let mut grads = step.grads;
            live_nodes = live_nodes.max(step.live_nodes);
            norm_sum += clip_global_norm(&mut grads, self.cfg.max_grad_norm);
            self.optimizer
                .step(self.policies.theta.tensors_mut(), &grads)
                .map_err(|_| Error::Diverged {
                    stage: "optimizer step",
                    step: epoch,
                    value: total,
                })?;
            if self.cfg.ema_interval == EmaInterval::EveryStep {
                ema_update(&mut self.policies.old, &self.policies.theta, self.cfg.gamma)?;
            }
            policy_sum += step.policy;
            total_sum += total;
            if sig.report.mask.count() > 0 {
                kl_sum += step.kl;
                kl_groups += 1;
            }
        }

        let n = groups.len().max(1) as f64;
        let kl_loss = if kl_groups == 0 { 0.0 } else { kl_sum / kl_groups as f64 };
        let reset = maybe_reset_reference(
            &mut self.state,
            &mut self.policies,
            kl_loss,
            self.cfg.tau_kl,
            self.cfg.k_max,
        );
        if self.cfg.ema_interval == EmaInterval::EveryEpoch {
            ema_update(&mut self.policies.old, &self.policies.theta, self.cfg.gamma)?;
        }
        self.state.epoch += 1;

        let finite_tau: Vec<f64> = signals
            .iter()
            .map(|s| s.report.mask.tau)
            .filter(|t| t.is_finite())
            .collect();
        let masked: usize = signals.iter().map(|s| s.report.mask.count()).sum();
        let candidates: usize = signals.iter().map(|s| s.report.mask.mask.len()).sum();
        Ok(EpochMetrics {
            epoch,
            rollout,
            policy_loss: policy_sum / n,
            kl_loss,
            total_loss: total_sum / n,
            mask_fraction: masked as f64 / candidates.max(1) as f64,
            tau: (!finite_tau.is_empty()).then(|| finite_tau.iter().sum::<f64>() / finite_tau.len() as f64),
            rho: self.risk.rho(),
            grad_norm: norm_sum / n,
            reset,
            live_nodes,
            wall_time_s: None,
        })
    }
}
