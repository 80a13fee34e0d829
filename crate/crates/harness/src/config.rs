//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys and repeated keys are errors. [`TrainConfig::to_text`]
//! writes every key, so a saved config documents the full key list.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use graphllm_core::model::{GraphLlmConfig, Method};
use graphllm_core::prefixlm::{BackboneConfig, PretrainConfig};
use graphllm_core::task::{Pooling, TaskKind};

use crate::error::HarnessError;

/// Everything needed to build, pretrain and fine-tune one model.
///
/// The defaults are desk-scale. For reference, the full-scale setting the
/// method was designed for uses hidden width 768, 6 heads, prefix length 5,
/// walk length 8, batch 32, learning rate 5e-5, 1 warmup epoch and weight
/// decay 0.1 on a 7B/13B backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub method: Method,
    /// Hidden width `d` of the node encoder and graph transformer.
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub gt_layers: usize,
    /// Prefix length `K`.
    pub prefix_len: usize,
    /// Random-walk length `C`.
    pub walk_len: usize,
    pub max_desc_len: usize,
    pub ffn_mult: usize,
    pub b_std: f64,
    /// Mix attention-weighted pair states into node updates (off in the
    /// reference formulation).
    pub edge_values: bool,
    pub lm_layers: usize,
    pub d_model: usize,
    pub lm_heads: usize,
    pub lm_max_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    /// Rescale each step's gradient to at most this global L2 norm; 0
    /// disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub pooling: BTreeMap<TaskKind, Pooling>,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub pretrain_warmup: usize,
    pub pretrain_loss_target: f64,
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::SubstructureCounting,
            method: Method::GraphLlm,
            d: 32,
            heads: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            gt_layers: 3,
            prefix_len: 5,
            walk_len: 8,
            max_desc_len: 96,
            ffn_mult: 2,
            b_std: 0.02,
            edge_values: false,
            lm_layers: 2,
            d_model: 64,
            lm_heads: 4,
            lm_max_len: 128,
            batch_size: 16,
            lr: 3e-3,
            epochs: 10,
            warmup_epochs: 1,
            weight_decay: 0.01,
            grad_clip: 0.0,
            seed: 0,
            pooling: TaskKind::ALL.iter().map(|&t| (t, t.default_pooling())).collect(),
            pretrain_steps: 600,
            pretrain_batch: 16,
            pretrain_lr: 3e-3,
            pretrain_warmup: 50,
            pretrain_loss_target: 0.05,
            max_new_tokens: 24,
        }
    }
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    match s {
        "anchor" => Ok(Pooling::Anchor),
        "mean" => Ok(Pooling::Mean),
        _ => Err(format!("pooling must be anchor or mean, got {s:?}")),
    }
}

fn pooling_name(p: Pooling) -> &'static str {
    match p {
        Pooling::Anchor => "anchor",
        Pooling::Mean => "mean",
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

impl TrainConfig {
    pub fn pooling_for(&self, task: TaskKind) -> Pooling {
        self.pooling.get(&task).copied().unwrap_or_else(|| task.default_pooling())
    }

    pub fn backbone(&self, vocab: usize) -> BackboneConfig {
        BackboneConfig {
            vocab,
            d_model: self.d_model,
            heads: self.lm_heads,
            layers: self.lm_layers,
            max_len: self.lm_max_len,
            ffn_mult: self.ffn_mult,
        }
    }

    pub fn graph_llm(&self) -> GraphLlmConfig {
        GraphLlmConfig {
            d: self.d,
            heads: self.heads,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            gt_layers: self.gt_layers,
            prefix_len: self.prefix_len,
            walk_len: self.walk_len,
            max_desc_len: self.max_desc_len,
            ffn_mult: self.ffn_mult,
            b_std: self.b_std,
            edge_values: self.edge_values,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            max_steps: self.pretrain_steps,
            batch: self.pretrain_batch,
            lr: self.pretrain_lr,
            warmup_steps: self.pretrain_warmup,
            weight_decay: self.weight_decay,
            loss_target: self.pretrain_loss_target,
            window: 20,
            seed: self.seed,
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "task" => self.task = v.parse()?,
            "method" => self.method = v.parse()?,
            "d" => self.d = num(v)?,
            "heads" => self.heads = num(v)?,
            "encoder_layers" => self.encoder_layers = num(v)?,
            "decoder_layers" => self.decoder_layers = num(v)?,
            "gt_layers" => self.gt_layers = num(v)?,
            "prefix_len" => self.prefix_len = num(v)?,
            "walk_len" => self.walk_len = num(v)?,
            "max_desc_len" => self.max_desc_len = num(v)?,
            "ffn_mult" => self.ffn_mult = num(v)?,
            "b_std" => self.b_std = num(v)?,
            "edge_values" => self.edge_values = num(v)?,
            "lm_layers" => self.lm_layers = num(v)?,
            "d_model" => self.d_model = num(v)?,
            "lm_heads" => self.lm_heads = num(v)?,
            "lm_max_len" => self.lm_max_len = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "lr" => self.lr = num(v)?,
            "epochs" => self.epochs = num(v)?,
            "warmup_epochs" => self.warmup_epochs = num(v)?,
            "weight_decay" => self.weight_decay = num(v)?,
            "grad_clip" => self.grad_clip = num(v)?,
            "seed" => self.seed = num(v)?,
            "pretrain_steps" => self.pretrain_steps = num(v)?,
            "pretrain_batch" => self.pretrain_batch = num(v)?,
            "pretrain_lr" => self.pretrain_lr = num(v)?,
            "pretrain_warmup" => self.pretrain_warmup = num(v)?,
            "pretrain_loss_target" => self.pretrain_loss_target = num(v)?,
            "max_new_tokens" => self.max_new_tokens = num(v)?,
            _ => match key.strip_prefix("pooling.") {
                Some(task) => {
                    let task: TaskKind = task.parse()?;
                    self.pooling.insert(task, parse_pooling(v)?);
                }
                None => return Err(format!("unknown key {key:?}")),
            },
        }
        Ok(())
    }

    /// Parse config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| HarnessError::Config { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let positive = [
            ("d", self.d),
            ("heads", self.heads),
            ("prefix_len", self.prefix_len),
            ("walk_len", self.walk_len),
            ("max_desc_len", self.max_desc_len),
            ("ffn_mult", self.ffn_mult),
            ("lm_layers", self.lm_layers),
            ("d_model", self.d_model),
            ("lm_heads", self.lm_heads),
            ("lm_max_len", self.lm_max_len),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("pretrain_batch", self.pretrain_batch),
            ("max_new_tokens", self.max_new_tokens),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::InvalidConfig(format!("{k} must be positive")));
        }
        if !self.d.is_multiple_of(self.heads) || !self.d_model.is_multiple_of(self.lm_heads) {
            return Err(HarnessError::InvalidConfig("head counts must divide their widths".into()));
        }
        for (k, v) in [("lr", self.lr), ("pretrain_lr", self.pretrain_lr), ("b_std", self.b_std)] {
            if v.is_nan() || v <= 0.0 || v.is_infinite() {
                return Err(HarnessError::InvalidConfig(format!("{k} must be positive")));
            }
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(HarnessError::InvalidConfig("grad_clip must be non-negative".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(HarnessError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Every key, in a stable order; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("task", self.task.as_str().into());
        kv("method", self.method.as_str().into());
        kv("d", self.d.to_string());
        kv("heads", self.heads.to_string());
        kv("encoder_layers", self.encoder_layers.to_string());
        kv("decoder_layers", self.decoder_layers.to_string());
        kv("gt_layers", self.gt_layers.to_string());
        kv("prefix_len", self.prefix_len.to_string());
        kv("walk_len", self.walk_len.to_string());
        kv("max_desc_len", self.max_desc_len.to_string());
        kv("ffn_mult", self.ffn_mult.to_string());
        kv("b_std", format!("{:?}", self.b_std));
        kv("edge_values", self.edge_values.to_string());
        kv("lm_layers", self.lm_layers.to_string());
        kv("d_model", self.d_model.to_string());
        kv("lm_heads", self.lm_heads.to_string());
        kv("lm_max_len", self.lm_max_len.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("epochs", self.epochs.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("grad_clip", format!("{:?}", self.grad_clip));
        kv("seed", self.seed.to_string());
        for (t, p) in &self.pooling {
            kv(&format!("pooling.{}", t.as_str()), pooling_name(*p).into());
        }
        kv("pretrain_steps", self.pretrain_steps.to_string());
        kv("pretrain_batch", self.pretrain_batch.to_string());
        kv("pretrain_lr", format!("{:?}", self.pretrain_lr));
        kv("pretrain_warmup", self.pretrain_warmup.to_string());
        kv("pretrain_loss_target", format!("{:?}", self.pretrain_loss_target));
        kv("max_new_tokens", self.max_new_tokens.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig {
            lr: 1.25e-4,
            grad_clip: 0.5,
            ..TrainConfig::default()
        };
        cfg.pooling.insert(TaskKind::ShortestPath, Pooling::Mean);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainConfig::parse("# desk run\nd = 16 # narrow\n\nheads=2\n").unwrap();
        assert_eq!((cfg.d, cfg.heads), (16, 2));
        assert!(matches!(TrainConfig::parse("bogus = 1"), Err(HarnessError::Config { line: 1, .. })));
        assert!(matches!(TrainConfig::parse("d = 8\nd = 8"), Err(HarnessError::Config { line: 2, .. })));
        assert!(matches!(TrainConfig::parse("epochs = 0"), Err(HarnessError::InvalidConfig(_))));
        assert!(matches!(TrainConfig::parse("d = 10\nheads = 4"), Err(HarnessError::InvalidConfig(_))));
        assert!(matches!(TrainConfig::parse("lr"), Err(HarnessError::Config { .. })));
    }
}
