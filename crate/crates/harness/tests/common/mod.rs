#![allow(dead_code)]

use graphllm_core::task::TaskInstance;
use graphllm_harness::config::TrainConfig;
use graphllm_harness::experiment::{mini_counting_config, pretrain_backbone, Backbone};

/// A configuration small enough to train for a few hundred steps inside a
/// unit test.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        d: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        gt_layers: 1,
        prefix_len: 3,
        walk_len: 4,
        max_desc_len: 96,
        lm_layers: 1,
        d_model: 16,
        lm_heads: 2,
        lm_max_len: 96,
        batch_size: 4,
        epochs: 2,
        pretrain_steps: 20,
        pretrain_batch: 8,
        pretrain_warmup: 5,
        seed: 11,
        ..TrainConfig::default()
    }
}

pub fn mini_instances(count: usize) -> Vec<TaskInstance> {
    mini_counting_config().generate_range(0, count, 3).unwrap()
}

pub fn tiny_backbone(cfg: &TrainConfig, insts: &[TaskInstance]) -> Backbone {
    pretrain_backbone(cfg, insts, insts).unwrap()
}
