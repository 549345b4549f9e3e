//! Binary model checkpoints.
//!
//! A checkpoint is fully self-contained: architecture config, vocabulary
//! and every parameter tensor, so prediction needs nothing but the
//! checkpoint file. Layout (all integers and doubles little-endian):
//!
//! ```text
//! magic            8  bytes  "ARVSUCP1"
//! version          u32       currently 1
//! total_len        u64       file length in bytes, trailer included
//! config block     u8 variant tag, then 8 u32 dims
//! config digest    u64       FNV-1a of the config block bytes
//! epoch            u32       best epoch the parameters come from
//! val_accuracy     f64       bitwise
//! seed             u64       training seed
//! max_tokens       u32       utterance token cap used in training, 0 = none
//! vocab block      u32 count, then per token u32 len + UTF-8 bytes
//! tensor table     u32 count, then per tensor:
//!                  name (u32 len + bytes), u32 rank, u32 dims, f64 data
//! checksum         u64       FNV-1a of every preceding byte
//! ```
//!
//! Decoding verifies, in order: magic, version, declared length (a cut
//! file fails here as truncated), the whole-file checksum (any flipped
//! byte fails here), and finally the config digest (so a config edit is
//! called out specifically even when the trailing checksum was patched).
//! Tensor data round-trips bitwise.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::rng::fnv1a64;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 8] = b"ARVSUCP1";
pub const VERSION: u32 = 1;

/// A trained model ready to be persisted or reloaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub config: ModelConfig,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub seed: u64,
    /// Token cap applied to utterances during training; evaluation and
    /// prediction must truncate the same way.
    pub max_tokens: Option<usize>,
    pub vocab: Vocabulary,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(
        params: &ModelParams,
        vocab: &Vocabulary,
        epoch: usize,
        val_accuracy: f64,
        seed: u64,
        max_tokens: Option<usize>,
    ) -> Self {
        Checkpoint {
            variant: params.variant(),
            config: params.config().clone(),
            epoch,
            val_accuracy,
            seed,
            max_tokens,
            vocab: vocab.clone(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    /// Rebuild the model, consuming exactly the stored tensors.
    pub fn to_model(&self) -> Result<ModelParams> {
        if self.variant.uses_text() && self.vocab.len() != self.config.vocab_size {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint vocabulary has {} entries but config says {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        let mut pool: std::collections::BTreeMap<&str, &Tensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        if pool.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch(
                "checkpoint contains duplicate tensor names".into(),
            ));
        }
        let params = ModelParams::from_tensors(self.variant, &self.config, |name| {
            pool.remove(name).cloned().ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint is missing tensor {name}"))
            })
        })?;
        if let Some((name, _)) = pool.into_iter().next() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint contains unexpected tensor {name}"
            )));
        }
        Ok(params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut config_block = Vec::new();
        config_block.push(variant_tag(self.variant));
        let c = &self.config;
        for dim in [
            c.saliency_dim,
            c.speaker_dim,
            c.head_loc_dim,
            c.stream_dim,
            c.embed_dim,
            c.lstm_hidden,
            c.num_classes,
            c.vocab_size,
        ] {
            config_block.extend_from_slice(&(dim as u32).to_le_bytes());
        }

        let mut body = Vec::new();
        body.extend_from_slice(&config_block);
        body.extend_from_slice(&fnv1a64(&config_block).to_le_bytes());
        body.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        body.extend_from_slice(&self.val_accuracy.to_le_bytes());
        body.extend_from_slice(&self.seed.to_le_bytes());
        body.extend_from_slice(&(self.max_tokens.map_or(0, |n| n as u32)).to_le_bytes());

        let push_str = |body: &mut Vec<u8>, s: &str| {
            body.extend_from_slice(&(s.len() as u32).to_le_bytes());
            body.extend_from_slice(s.as_bytes());
        };
        body.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for token in self.vocab.tokens() {
            push_str(&mut body, token);
        }
        body.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            push_str(&mut body, name);
            body.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }

        let total = 8 + 4 + 8 + body.len() + 8;
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(total as u64).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&fnv1a64(&out).to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 8 {
            return Err(Error::Truncated("file shorter than the magic".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(Error::Truncated("file header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let total = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if bytes.len() as u64 != total {
            return Err(Error::Truncated(format!(
                "header declares {total} bytes, file has {}",
                bytes.len()
            )));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        if fnv1a64(payload) != stored {
            return Err(Error::ChecksumMismatch);
        }

        let mut r = Reader {
            bytes: &payload[20..],
            off: 0,
        };
        let config_block = r.take(1 + 8 * 4, "config block")?.to_vec();
        let digest = r.u64("config digest")?;
        if fnv1a64(&config_block) != digest {
            return Err(Error::ConfigDigestMismatch);
        }
        let variant = variant_from_tag(config_block[0])?;
        let dims: Vec<usize> = config_block[1..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let config = ModelConfig {
            saliency_dim: dims[0],
            speaker_dim: dims[1],
            head_loc_dim: dims[2],
            stream_dim: dims[3],
            embed_dim: dims[4],
            lstm_hidden: dims[5],
            num_classes: dims[6],
            vocab_size: dims[7],
        };

        let epoch = r.u32("epoch")? as usize;
        let val_accuracy = f64::from_le_bytes(r.take(8, "val_accuracy")?.try_into().unwrap());
        let seed = r.u64("seed")?;
        let max_tokens = match r.u32("max_tokens")? {
            0 => None,
            n => Some(n as usize),
        };

        let vocab_count = r.u32("vocab count")? as usize;
        let mut tokens = Vec::with_capacity(vocab_count);
        for _ in 0..vocab_count {
            tokens.push(r.string("vocab token")?);
        }
        let vocab = Vocabulary::from_ordered(tokens)?;

        let tensor_count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dim")? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8, "tensor data")?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.off != r.bytes.len() {
            return Err(Error::Truncated(format!(
                "{} unexpected trailing bytes",
                r.bytes.len() - r.off
            )));
        }
        Ok(Checkpoint {
            variant,
            config,
            epoch,
            val_accuracy,
            seed,
            max_tokens,
            vocab,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn variant_tag(v: Variant) -> u8 {
    match v {
        Variant::VisualOnly => 0,
        Variant::TextOnly => 1,
        Variant::Multimodal => 2,
    }
}

fn variant_from_tag(tag: u8) -> Result<Variant> {
    match tag {
        0 => Ok(Variant::VisualOnly),
        1 => Ok(Variant::TextOnly),
        2 => Ok(Variant::Multimodal),
        other => Err(Error::InvalidConfig(format!(
            "unknown variant tag {other} in checkpoint"
        ))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .off
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("unexpected end of file in {what}")))?;
        let out = &self.bytes[self.off..end];
        self.off = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Truncated(format!("invalid UTF-8 in {what}")))
    }
}
