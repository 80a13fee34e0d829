//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "GLLMCKPT"
//! version      u32       1
//! config       u64 len, UTF-8 bytes   (key = value text)
//! vocabulary   u64 len, UTF-8 bytes   (one escaped token per line)
//! step         u64
//! rng          32-byte seed, u64 stream, u128 word position
//! order        u64 count, then count x u64; cursor u64
//! parameters   u64 count, then per parameter:
//!                u32 name len, name bytes, u8 trainable,
//!                u32 rank, rank x u64 dims, numel x f64 values
//! optimiser    u8 present; if 1: u64 steps, then per parameter
//!                numel x f64 first moments, numel x f64 second moments
//! ```
//!
//! A backbone checkpoint written by `pretrain` holds only `lm.` parameters
//! and no optimiser state.

use std::io::{Read, Write};
use std::path::Path;

use graphllm_core::prefixlm::BackboneLm;
use graphllm_core::tokenizer::Tokenizer;
use graphllm_tensor::{AdamW, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::HarnessError;
use crate::train::{build_model, Trainer};

const MAGIC: &[u8; 8] = b"GLLMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub tokenizer: Tokenizer,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub params: ParamStore,
    pub optimizer: Option<(u64, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], HarnessError> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, HarnessError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self, limit: u64) -> Result<usize, HarnessError> {
        let n = self.u64()?;
        if n > limit {
            return Err(bad(format!("length {n} exceeds {limit}")));
        }
        Ok(n as usize)
    }
    fn string(&mut self, len: usize) -> Result<String, HarnessError> {
        let mut b = vec![0u8; len];
        self.0.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        String::from_utf8(b).map_err(|_| bad("invalid UTF-8"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, HarnessError> {
        let mut b = vec![0u8; n * 8];
        self.0.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

const MAX_LEN: u64 = 1 << 32;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u64).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        let mut vocab = Vec::new();
        self.tokenizer.write_vocab(&mut vocab).expect("writing to memory");
        put_str(&mut out, std::str::from_utf8(&vocab).expect("vocabulary is UTF-8"));
        out.extend(self.step.to_le_bytes());
        out.extend(self.rng.get_seed());
        out.extend(self.rng.get_stream().to_le_bytes());
        out.extend(self.rng.get_word_pos().to_le_bytes());
        out.extend((self.order.len() as u64).to_le_bytes());
        for &i in &self.order {
            out.extend((i as u64).to_le_bytes());
        }
        out.extend((self.cursor as u64).to_le_bytes());
        out.extend((self.params.len() as u64).to_le_bytes());
        for (_, p) in self.params.iter() {
            out.extend((p.name.len() as u32).to_le_bytes());
            out.extend(p.name.as_bytes());
            out.push(p.trainable as u8);
            out.extend((p.tensor.ndim() as u32).to_le_bytes());
            for &d in p.tensor.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            put_f64s(&mut out, p.tensor.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some((steps, m, v)) => {
                out.push(1);
                out.extend(steps.to_le_bytes());
                for (m, v) in m.iter().zip(v) {
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Reader(bytes);
        if &r.bytes::<8>()? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = r.len(MAX_LEN)?;
        let config = TrainConfig::parse(&r.string(n)?)?;
        let n = r.len(MAX_LEN)?;
        let tokenizer = Tokenizer::read_vocab(r.string(n)?.as_bytes())?;
        let step = r.u64()?;
        let mut rng = ChaCha8Rng::from_seed(r.bytes::<32>()?);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(u128::from_le_bytes(r.bytes()?));
        let n = r.len(MAX_LEN)?;
        let order = (0..n).map(|_| r.u64().map(|i| i as usize)).collect::<Result<Vec<_>, _>>()?;
        let cursor = r.u64()? as usize;
        let n = r.len(MAX_LEN)?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(bad(format!("bad trainable flag {b}"))),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len(MAX_LEN)).collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let tensor = Tensor::new(shape, r.f64s(numel)?)?;
            params.add(name, tensor, trainable)?;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let steps = r.u64()?;
                let (mut m, mut v) = (Vec::new(), Vec::new());
                for (_, p) in params.iter() {
                    m.push(r.f64s(p.tensor.numel())?);
                    v.push(r.f64s(p.tensor.numel())?);
                }
                Some((steps, m, v))
            }
            b => return Err(bad(format!("bad optimiser flag {b}"))),
        };
        if !r.0.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            config,
            tokenizer,
            step,
            rng,
            order,
            cursor,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// A pretrained backbone, ready to hand to [`Trainer::new`].
    pub fn backbone(config: &TrainConfig, tokenizer: &Tokenizer, lm_store: &ParamStore) -> Self {
        Self {
            config: config.clone(),
            tokenizer: tokenizer.clone(),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            params: lm_store.clone(),
            optimizer: None,
        }
    }

    /// Rebuild the backbone and copy in the stored values.
    pub fn load_backbone(&self) -> Result<(BackboneLm, ParamStore), HarnessError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lm = BackboneLm::new(&mut store, &mut rng, self.config.backbone(self.tokenizer.vocab_size()))?;
        copy_matching(&mut store, &self.params, true)?;
        Ok((lm, store))
    }

    pub fn from_trainer(t: &Trainer, tokenizer: &Tokenizer) -> Self {
        Self {
            config: t.cfg.clone(),
            tokenizer: tokenizer.clone(),
            step: t.step,
            rng: t.rng.clone(),
            order: t.order.clone(),
            cursor: t.cursor,
            params: t.store.clone(),
            optimizer: Some((
                t.opt.steps_taken(),
                t.opt.first_moments().to_vec(),
                t.opt.second_moments().to_vec(),
            )),
        }
    }

    /// Restore a fine-tuning run exactly where it was saved.
    pub fn into_trainer(self) -> Result<(Trainer, Tokenizer), HarnessError> {
        let (lm, mut store) = self.load_backbone()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = build_model(&self.config, lm, &mut store, &mut rng)?;
        copy_matching(&mut store, &self.params, false)?;
        let mut opt = AdamW::new(&store, self.config.weight_decay);
        if let Some((steps, m, v)) = self.optimizer {
            opt.restore(steps, m, v);
        }
        let trainer = Trainer {
            cfg: self.config,
            model,
            store,
            opt,
            step: self.step,
            rng: self.rng,
            order: self.order,
            cursor: self.cursor,
        };
        Ok((trainer, self.tokenizer))
    }
}

/// Copy every parameter of `src` into the identically laid-out `dst`. With
/// `prefix_only`, `dst` may be a leading subset of `src`.
fn copy_matching(dst: &mut ParamStore, src: &ParamStore, prefix_only: bool) -> Result<(), HarnessError> {
    let ok_len = if prefix_only { dst.len() <= src.len() } else { src.len() == dst.len() };
    if !ok_len {
        return Err(bad(format!("checkpoint has {} parameters, model has {}", src.len(), dst.len())));
    }
    for ((_, s), id) in src.iter().zip(dst.ids().collect::<Vec<_>>()) {
        let d = dst.get_mut(id);
        if d.name != s.name || d.tensor.shape() != s.tensor.shape() {
            return Err(bad(format!(
                "parameter {} {:?} does not match model {} {:?}",
                s.name,
                s.tensor.shape(),
                d.name,
                d.tensor.shape()
            )));
        }
        d.tensor = s.tensor.clone();
        d.trainable = s.trainable;
    }
    Ok(())
}
