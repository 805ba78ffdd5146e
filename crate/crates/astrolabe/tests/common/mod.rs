#![allow(dead_code)]

use astrolabe::config::RunConfig;

/// A run small enough for unit-speed tests.
pub fn tiny_config(seed: u64, epochs: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        epochs,
        group_size: 4,
        prompts_per_epoch: 2,
        optimizer: astrolabe::config::OptimizerConfig {
            lr: 1e-4,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    cfg.pretrain.steps = 60;
    cfg.pretrain.hidden = 16;
    cfg.pretrain.corpus_size = 16;
    cfg.pretrain.batch_size = 16;
    cfg
}
