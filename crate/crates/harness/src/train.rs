//! Fine-tuning a prefix model on top of a frozen backbone.

use graphllm_core::model::{Example, GraphLlm, PrefixHead, PrefixModel};
use graphllm_core::prefixlm::{BackboneLm, VanillaPrefix, LM_PREFIX};
use graphllm_tensor::{AdamW, ParamStore, Tape, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::error::HarnessError;
use graphllm_core::model::Method;

/// Add the trainable prefix source for `cfg.method` next to `lm`.
pub fn build_model(cfg: &TrainConfig, lm: BackboneLm, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<PrefixModel, HarnessError> {
    let head = match cfg.method {
        Method::GraphLlm => PrefixHead::Graph(GraphLlm::new(store, rng, &lm, cfg.graph_llm())?),
        Method::VanillaPrefix => PrefixHead::Vanilla(VanillaPrefix::new(store, rng, &lm.cfg, cfg.prefix_len, cfg.b_std)?),
    };
    Ok(PrefixModel { lm, head })
}

/// Summed cross-entropy over the positions where `mask` is set. Labels at
/// unmasked positions are never read.
pub fn masked_loss(tape: &mut Tape, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var, TensorError> {
    let targets: Vec<Option<usize>> = labels.iter().zip(mask).map(|(&l, &m)| m.then_some(l)).collect();
    tape.cross_entropy(logits, &targets)
}

/// Optimiser state plus the data-order cursor; everything a checkpoint has
/// to carry to resume bitwise.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: PrefixModel,
    pub store: ParamStore,
    pub opt: AdamW,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub order: Vec<usize>,
    pub cursor: usize,
}

impl Trainer {
    /// Start fine-tuning from a pretrained backbone whose parameters are
    /// all frozen and live in `store`.
    pub fn new(cfg: TrainConfig, lm: BackboneLm, mut store: ParamStore) -> Result<Self, HarnessError> {
        cfg.validate()?;
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable || !p.name.starts_with(LM_PREFIX)) {
            return Err(HarnessError::InvalidConfig(format!(
                "expected a frozen backbone store, found {} (trainable: {})",
                p.name, p.trainable
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = build_model(&cfg, lm, &mut store, &mut rng)?;
        let opt = AdamW::new(&store, cfg.weight_decay);
        Ok(Self {
            cfg,
            model,
            store,
            opt,
            step: 0,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        self.cfg.epochs as u64 * self.steps_per_epoch(n)
    }

    /// Linear warmup over the configured warmup epochs, constant after.
    pub fn lr_at(&self, step: u64, n: usize) -> f64 {
        let warmup = self.cfg.warmup_epochs as u64 * self.steps_per_epoch(n);
        if warmup == 0 {
            return self.cfg.lr;
        }
        self.cfg.lr * ((step + 1) as f64 / warmup as f64).min(1.0)
    }

    /// Mean per-token loss and summed gradients of a batch. Examples are
    /// processed in parallel and reduced in order, so the result does not
    /// depend on the thread count.
    pub fn batch_gradients(&self, batch: &[&Example]) -> Result<(f64, usize, Vec<Tensor>), HarnessError> {
        let trainable: Vec<_> = self.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        let parts = batch
            .par_iter()
            .map(|ex| -> Result<_, HarnessError> {
                let mut tape = Tape::new();
                let (loss, n) = self.model.response_loss(&mut tape, &self.store, ex)?;
                let value = tape.value(loss).data()[0];
                let g = tape.backward(loss)?;
                let grads: Vec<Option<Tensor>> = trainable
                    .iter()
                    .map(|&id| tape.bound_param(id).and_then(|v| g.get(v)))
                    .collect();
                Ok((value, n, grads))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut total = vec![None::<Tensor>; self.store.len()];
        let (mut loss, mut tokens) = (0.0, 0);
        for (value, n, grads) in parts {
            loss += value;
            tokens += n;
            for (&id, g) in trainable.iter().zip(grads) {
                let Some(g) = g else { continue };
                match &mut total[id.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let scale = 1.0 / tokens.max(1) as f64;
        let grads = total
            .into_iter()
            .zip(self.store.iter())
            .map(|(g, (_, p))| match g {
                Some(mut g) => {
                    g.data_mut().iter_mut().for_each(|x| *x *= scale);
                    g
                }
                None => Tensor::zeros(p.tensor.shape()),
            })
            .collect();
        Ok((loss * scale, tokens, grads))
    }

    /// One optimiser step on the next batch; reshuffles at epoch
    /// boundaries. Returns the batch's mean per-token loss.
    pub fn train_step(&mut self, data: &[Example]) -> Result<f64, HarnessError> {
        if data.is_empty() {
            return Err(HarnessError::EmptyDataset);
        }
        if self.order.len() != data.len() || self.cursor >= self.order.len() {
            self.order = (0..data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let batch: Vec<&Example> = self.order[self.cursor..end].iter().map(|&i| &data[i]).collect();
        self.cursor = end;
        let (loss, _, mut grads) = self.batch_gradients(&batch)?;
        if self.cfg.grad_clip > 0.0 {
            clip_global_norm(&mut grads, self.cfg.grad_clip);
        }
        let lr = self.lr_at(self.step, data.len());
        self.opt.step(&mut self.store, &grads, lr);
        self.step += 1;
        Ok(loss)
    }

    /// Run until `steps` steps have been taken in total (or the configured
    /// epochs are done when `steps` is `None`).
    pub fn fit(&mut self, data: &[Example], steps: Option<u64>) -> Result<Vec<f64>, HarnessError> {
        let until = steps.unwrap_or_else(|| self.total_steps(data.len()));
        let mut losses = Vec::new();
        while self.step < until {
            losses.push(self.train_step(data)?);
        }
        Ok(losses)
    }
}

/// Scale `grads` down so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}
