//! The `RSANCKPT` model checkpoint format.
//!
//! Layout (little-endian):
//!
//! | field              | type                                            |
//! |--------------------|-------------------------------------------------|
//! | magic              | `b"RSANCKPT"`                                   |
//! | version            | u32 (= 1)                                       |
//! | seed, config hash  | u64, u64                                        |
//! | epoch              | u32                                             |
//! | mapping kind       | u8 (0 region `P`, 1 pooled `V`)                 |
//! | score rule         | u8 (0 cosine, 1 dot)                            |
//! | kernel layout      | u8 (0 none, 1 full, 2 shared-spatial)           |
//! | group count        | u32                                             |
//! | groups             | name (u16 len + utf8), ndim u32, dims u32…, f64 payload |
//! | config echo        | u32 len + utf8 `key=value` lines                |
//! | rng state          | 32-byte seed, u64 stream, u128 word position    |
//!
//! Groups appear in order: mapping, `W_init`, `kernel.0…`, then `velocity.0…`
//! (optimizer momentum, one per trainable group).

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::attribute_constraint::{AttributeKernelBank, KernelLayout};
use crate::cosine_classifier::ScoreRule;
use crate::dataset::Reader;
use crate::echo::ConfigEcho;
use crate::error::{Result, RsanError};
use crate::region_mapping::ProjectionMatrix;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::model::{Mapping, RsanModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: RsanModel<T>,
    pub epoch: u32,
    pub seed: u64,
    pub config_hash: u64,
    pub echo: ConfigEcho,
    pub rng: RngState,
    pub velocity: Vec<Tensor<T>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| RsanError::Data(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_group<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    for x in t.data() {
        out.extend_from_slice(&x.to_acc().to_le_bytes());
    }
    Ok(())
}

fn get_group<T: Scalar>(r: &mut Reader, expected_name: &str) -> Result<Tensor<T>> {
    let at = r.pos;
    let len = r.u16("group name length")? as usize;
    let name = r.take(len, "group name")?;
    if name != expected_name.as_bytes() {
        return Err(r.err_at(at, format!("parameter group \"{expected_name}\"")));
    }
    let ndim = r.u32("group rank")? as usize;
    if ndim > 8 {
        return Err(r.err_at(r.pos - 4, "group rank ≤ 8".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32("group extent")? as usize);
    }
    let n: usize = shape.iter().product();
    let payload_at = r.pos;
    let bytes = r.take(n.saturating_mul(8), "f64 payload")?;
    let data: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::from_acc(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::from_vec(&shape, data).map_err(|_| r.err_at(payload_at, "payload matching shape".into()))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let m = &self.model;
        out.push(match m.mapping {
            Mapping::Region(_) => 0,
            Mapping::Pooled(_) => 1,
        });
        out.push(match m.score_rule {
            ScoreRule::Cosine => 0,
            ScoreRule::Dot => 1,
        });
        out.push(match &m.kernels {
            None => 0,
            Some(b) if b.layout == KernelLayout::Full => 1,
            Some(_) => 2,
        });
        let kernel_groups = m.kernels.as_ref().map_or(0, |b| 1 + b.kernels.len());
        put_u32(&mut out, 1 + kernel_groups + self.velocity.len())?;
        put_group(&mut out, m.mapping.group_name(), m.mapping.tensor())?;
        if let Some(bank) = &m.kernels {
            put_group(&mut out, "W_init", &bank.w_init)?;
            for (k, t) in bank.kernels.iter().enumerate() {
                put_group(&mut out, &format!("kernel.{k}"), t)?;
            }
        }
        for (i, t) in self.velocity.iter().enumerate() {
            put_group(&mut out, &format!("velocity.{i}"), t)?;
        }
        let text = self.echo.to_text();
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.pos;
        let version = r.u32("format version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err_at(at, format!("format version {CHECKPOINT_VERSION}")));
        }
        let seed = r.u64("seed")?;
        let config_hash = r.u64("config hash")?;
        let epoch = r.u32("epoch")?;
        let at = r.pos;
        let mapping_kind = r.u8("mapping kind")?;
        if mapping_kind > 1 {
            return Err(r.err_at(at, "mapping kind 0 or 1".into()));
        }
        let at = r.pos;
        let score_rule = match r.u8("score rule")? {
            0 => ScoreRule::Cosine,
            1 => ScoreRule::Dot,
            _ => return Err(r.err_at(at, "score rule 0 or 1".into())),
        };
        let at = r.pos;
        let layout = match r.u8("kernel layout")? {
            0 => None,
            1 => Some(KernelLayout::Full),
            2 => Some(KernelLayout::SharedSpatial),
            _ => return Err(r.err_at(at, "kernel layout 0, 1 or 2".into())),
        };
        let at = r.pos;
        let groups = r.u32("group count")? as usize;

        let mapping = if mapping_kind == 0 {
            let p = get_group(&mut r, "P")?;
            Mapping::Region(ProjectionMatrix::new(p)?)
        } else {
            Mapping::Pooled(get_group(&mut r, "V")?)
        };
        let attributes = mapping.tensor().shape().get(1).copied().unwrap_or(0);
        let mut used = 1;
        let kernels = match layout {
            None => None,
            Some(layout) => {
                let w_init = get_group(&mut r, "W_init")?;
                let mut ks = Vec::with_capacity(attributes);
                for k in 0..attributes {
                    ks.push(get_group(&mut r, &format!("kernel.{k}"))?);
                }
                used += 1 + attributes;
                Some(AttributeKernelBank::from_kernels(ks, w_init, layout)?)
            }
        };
        if groups < used {
            return Err(r.err_at(at, format!("group count ≥ {used}")));
        }
        let mut velocity = Vec::with_capacity(groups - used);
        for i in 0..groups - used {
            velocity.push(get_group(&mut r, &format!("velocity.{i}"))?);
        }
        let len = r.u32("config echo length")? as usize;
        let at = r.pos;
        let text = r.take(len, "config echo")?.to_vec();
        let text = String::from_utf8(text).map_err(|_| r.err_at(at, "utf-8 config echo".into()))?;
        let echo = ConfigEcho::parse(&text)?;
        let rng_seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
        let stream = r.u64("rng stream")?;
        let word_pos = r.u128("rng word position")?;
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, "end of file".into()));
        }
        Ok(Self {
            model: RsanModel {
                mapping,
                kernels,
                score_rule,
            },
            epoch,
            seed,
            config_hash,
            echo,
            rng: RngState {
                seed: rng_seed,
                stream,
                word_pos,
            },
            velocity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
