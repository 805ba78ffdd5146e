//! Checkpoint directory: `manifest.json` plus `payload.bin`, the latter
//! holding every tensor as little-endian `f32` at the offsets the manifest
//! lists.

use std::fs;
use std::path::Path;

use astrolabe_core::flowgen::{ClipDims, NetArch, NetParams, TimestepSchedule, ToyTask};
use astrolabe_core::nftcore::{NftConfig, PolicyTriple, TrainState, Trainer};
use astrolabe_core::rewardlab::{ConstantRisk, RiskState, RunningStats, Standardizer, NUM_MODELS};
use astrolabe_core::tensorgrad::{AdamW, DenseArray};
use serde::{Deserialize, Serialize};

use crate::RunError;

pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "payload.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchEntry {
    pub frame_dim: usize,
    pub clip_len: usize,
    pub prompt_dim: usize,
    pub hidden: usize,
}

impl ArchEntry {
    fn of(arch: NetArch) -> Self {
        Self {
            frame_dim: arch.dims.frame_dim,
            clip_len: arch.dims.clip_len,
            prompt_dim: arch.dims.prompt_dim,
            hidden: arch.hidden,
        }
    }

    fn arch(&self) -> NetArch {
        NetArch::new(
            ClipDims {
                frame_dim: self.frame_dim,
                clip_len: self.clip_len,
                prompt_dim: self.prompt_dim,
            },
            self.hidden,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsEntry {
    pub prompt_id: u64,
    /// `[count, mean, m2]` per reward model.
    pub stats: Vec<(u64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub epoch: u64,
    pub last_reset: u64,
    pub arch: ArchEntry,
    pub optimizer_step: u64,
    pub payload_bytes: u64,
    pub tensors: Vec<TensorEntry>,
    pub standardizer: Vec<StatsEntry>,
    pub risk_rho: f64,
    pub risk_capacity: usize,
    pub risk_buffer: Vec<Vec<f64>>,
}

/// Everything needed to resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub policies: PolicyTriple,
    pub state: TrainState,
    pub optimizer_step: u64,
    pub first_moments: Vec<DenseArray>,
    pub second_moments: Vec<DenseArray>,
    pub standardizer: Standardizer,
    pub risk: RiskState,
}

impl Checkpoint {
    /// A pretrained base with no RL state.
    pub fn base(params: NetParams, seed: u64, rho0: f64) -> Result<Self, RunError> {
        Ok(Self {
            seed,
            policies: PolicyTriple::from_base(params),
            state: TrainState::default(),
            optimizer_step: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
            standardizer: Standardizer::new(),
            risk: RiskState::new(rho0)?,
        })
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            seed: t.seed(),
            policies: t.policies().clone(),
            state: t.state(),
            optimizer_step: t.optimizer().step_count(),
            first_moments: t.optimizer().first_moments().to_vec(),
            second_moments: t.optimizer().second_moments().to_vec(),
            standardizer: t.standardizer().clone(),
            risk: t.risk().clone(),
        }
    }

    pub fn into_trainer(self, task: ToyTask, schedule: TimestepSchedule, cfg: NftConfig) -> Result<Trainer, RunError> {
        if self.policies.theta.arch() != NetArch::new(task.dims, self.policies.theta.arch().hidden) {
            return Err(RunError::Checkpoint(
                "checkpoint dimensions differ from the config".into(),
            ));
        }
        let optimizer = AdamW::from_parts(
            cfg.optimizer,
            self.first_moments,
            self.second_moments,
            self.optimizer_step,
        );
        Ok(Trainer::from_parts(
            task,
            schedule,
            cfg,
            self.seed,
            self.policies,
            self.state,
            optimizer,
            self.standardizer,
            self.risk,
        )?)
    }

    fn named_tensors(&self) -> Vec<(String, &DenseArray)> {
        let mut out = Vec::new();
        let groups: [(&str, &[DenseArray]); 5] = [
            ("theta", self.policies.theta.tensors()),
            ("old", self.policies.old.tensors()),
            ("reference", self.policies.reference.tensors()),
            ("adam_m", &self.first_moments),
            ("adam_v", &self.second_moments),
        ];
        for (group, tensors) in groups {
            for (i, t) in tensors.iter().enumerate() {
                out.push((format!("{group}.{i}"), t));
            }
        }
        out
    }

    pub fn encode(&self) -> (Manifest, Vec<u8>) {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.named_tensors() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for &x in t.data() {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let standardizer = self
            .standardizer
            .entries()
            .map(|(&prompt_id, stats)| StatsEntry {
                prompt_id,
                stats: stats.iter().map(|s| (s.count, s.mean, s.m2)).collect(),
            })
            .collect();
        let manifest = Manifest {
            format: FORMAT_VERSION,
            seed: self.seed,
            epoch: self.state.epoch,
            last_reset: self.state.last_reset,
            arch: ArchEntry::of(self.policies.theta.arch()),
            optimizer_step: self.optimizer_step,
            payload_bytes: payload.len() as u64,
            tensors,
            standardizer,
            risk_rho: self.risk.rho(),
            risk_capacity: self.risk.capacity(),
            risk_buffer: self.risk.buffer().iter().cloned().collect(),
        };
        (manifest, payload)
    }

    pub fn decode(manifest: &Manifest, payload: &[u8]) -> Result<Self, RunError> {
        let bad = |msg: String| RunError::Checkpoint(msg);
        if manifest.format != FORMAT_VERSION {
            return Err(bad(format!("unsupported format {}", manifest.format)));
        }
        if payload.len() as u64 != manifest.payload_bytes {
            return Err(bad(format!(
                "payload is {} bytes, manifest expects {}",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        let mut groups: [Vec<DenseArray>; 5] = Default::default();
        let names = ["theta", "old", "reference", "adam_m", "adam_v"];
        let mut cursor = 0u64;
        for entry in &manifest.tensors {
            let (group, index) = entry
                .name
                .split_once('.')
                .and_then(|(g, i)| Some((names.iter().position(|n| *n == g)?, i.parse::<usize>().ok()?)))
                .ok_or_else(|| bad(format!("unknown tensor {}", entry.name)))?;
            if index != groups[group].len() || entry.offset != cursor {
                return Err(bad(format!("tensor {} out of order", entry.name)));
            }
            let numel: usize = entry.shape.iter().product();
            let end = entry.offset + 4 * numel as u64;
            if end > payload.len() as u64 {
                return Err(bad(format!("tensor {} runs past the payload", entry.name)));
            }
            let data = payload[entry.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let t = DenseArray::new(entry.shape.clone(), data).map_err(|e| bad(e.to_string()))?;
            groups[group].push(t);
            cursor = end;
        }
        if cursor != manifest.payload_bytes {
            return Err(bad("payload has trailing bytes".into()));
        }
        let [theta, old, reference, m, v] = groups;
        let arch = manifest.arch.arch();
        let params = |t: Vec<DenseArray>| NetParams::from_tensors(arch, t).map_err(RunError::from);
        let standardizer = Standardizer::from_entries(
            manifest
                .standardizer
                .iter()
                .map(|e| {
                    if e.stats.len() != NUM_MODELS {
                        return Err(bad(format!("prompt {} has {} stats", e.prompt_id, e.stats.len())));
                    }
                    let mut s = [RunningStats::default(); NUM_MODELS];
                    for (dst, &(count, mean, m2)) in s.iter_mut().zip(&e.stats) {
                        *dst = RunningStats { count, mean, m2 };
                    }
                    Ok((e.prompt_id, s))
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
        Ok(Self {
            seed: manifest.seed,
            policies: PolicyTriple {
                theta: params(theta)?,
                old: params(old)?,
                reference: params(reference)?,
            },
            state: TrainState {
                epoch: manifest.epoch,
                last_reset: manifest.last_reset,
            },
            optimizer_step: manifest.optimizer_step,
            first_moments: m,
            second_moments: v,
            standardizer,
            risk: RiskState::restore(
                manifest.risk_rho,
                manifest.risk_capacity,
                ConstantRisk,
                manifest.risk_buffer.iter().cloned(),
            )?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), RunError> {
        fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        let (manifest, payload) = self.encode();
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Checkpoint(e.to_string()))?;
        let mpath = dir.join(MANIFEST);
        fs::write(&mpath, text).map_err(|e| RunError::io(&mpath, e))?;
        let ppath = dir.join(PAYLOAD);
        fs::write(&ppath, payload).map_err(|e| RunError::io(&ppath, e))
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| RunError::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RunError::Parse(e.to_string()))?;
        let ppath = dir.join(PAYLOAD);
        let payload = fs::read(&ppath).map_err(|e| RunError::io(&ppath, e))?;
        Self::decode(&manifest, &payload)
    }
}
