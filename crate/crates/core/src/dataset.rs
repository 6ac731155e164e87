//! In-memory feature-map datasets and the `RSANFEAT` binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! | field            | type                          |
//! |------------------|-------------------------------|
//! | magic            | `b"RSANFEAT"`                 |
//! | version          | u32 (= 1)                     |
//! | classes, samples | u32, u32                      |
//! | C, H, W, K       | u32 ×4                        |
//! | flags            | u32, bit 0 = plant block      |
//! | seed             | u64                           |
//! | config hash      | u64                           |
//! | feature maps     | f32 × samples·C·H·W           |
//! | labels           | u32 × samples                 |
//! | splits           | u8 × samples (0 train, 1 val, 2 test) |
//! | attribute table  | f64 × K·classes, attribute-major |
//! | seen mask        | u8 × classes                  |
//! | plant block      | (u16 row, u16 col) × samples·K, `0xFFFF` pair = inactive |

use std::io::Write;
use std::path::Path;

use crate::cosine_classifier::{ClassId, SemanticTable};
use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"RSANFEAT";
pub const DATASET_VERSION: u32 = 1;
const NO_PLANT: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Ground-truth region per attribute; `None` where the attribute is inactive.
pub type PlantLocations = Vec<Option<(usize, usize)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    /// C×H×W encoder output.
    pub features: Tensor<T>,
    pub label: ClassId,
    pub split: Split,
    pub plants: Option<PlantLocations>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub table: SemanticTable<T>,
    /// `(C, H, W)`.
    pub dims: (usize, usize, usize),
    pub seed: u64,
    pub config_hash: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn num_attributes(&self) -> usize {
        self.table.num_attributes()
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// Test samples of unseen classes.
    pub fn zsl_test_indices(&self) -> Vec<usize> {
        self.indices_in(Split::Test)
            .into_iter()
            .filter(|&i| !self.table.is_seen(self.samples[i].label))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Result<Dataset<U>> {
        Ok(Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    features: s.features.cast(),
                    label: s.label,
                    split: s.split,
                    plants: s.plants.clone(),
                })
                .collect(),
            table: SemanticTable::new(self.table.attributes().cast(), self.table.seen_mask().to_vec())?,
            dims: self.dims,
            seed: self.seed,
            config_hash: self.config_hash,
        })
    }

    /// Serializes into the `RSANFEAT` layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (c, h, w) = self.dims;
        let k = self.num_attributes();
        let classes = self.table.num_classes();
        let has_plants = self.samples.iter().any(|s| s.plants.is_some());
        let mut out = Vec::with_capacity(64 + self.samples.len() * (c * h * w * 4 + 5));
        out.extend_from_slice(DATASET_MAGIC);
        for v in [DATASET_VERSION, classes as u32, self.samples.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [c, h, w, k] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(has_plants as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        for s in &self.samples {
            if s.features.shape() != [c, h, w] {
                return Err(RsanError::dim(
                    "dataset",
                    format!("sample shape {:?} vs dims {:?}", s.features.shape(), self.dims),
                ));
            }
            for x in s.features.data() {
                out.extend_from_slice(&(x.to_acc() as f32).to_le_bytes());
            }
        }
        for s in &self.samples {
            out.extend_from_slice(&(s.label.0 as u32).to_le_bytes());
        }
        out.extend(self.samples.iter().map(|s| s.split.code()));
        let attrs = self.table.attributes();
        for ki in 0..k {
            for y in 0..classes {
                out.extend_from_slice(&attrs.get(&[y, ki]).to_acc().to_le_bytes());
            }
        }
        out.extend(self.table.seen_mask().iter().map(|&b| b as u8));
        if has_plants {
            for s in &self.samples {
                let empty = vec![None; k];
                let plants = s.plants.as_ref().unwrap_or(&empty);
                if plants.len() != k {
                    return Err(RsanError::dim(
                        "dataset",
                        format!("{} plant entries for K = {k}", plants.len()),
                    ));
                }
                for p in plants {
                    let (i, j) = p.map_or((NO_PLANT, NO_PLANT), |(i, j)| (i as u16, j as u16));
                    out.extend_from_slice(&i.to_le_bytes());
                    out.extend_from_slice(&j.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(DATASET_MAGIC)?;
        let version = r.u32("format version")?;
        if version != DATASET_VERSION {
            return Err(r.err_at(r.pos - 4, format!("format version {DATASET_VERSION}")));
        }
        let classes = r.u32("class count")? as usize;
        let n = r.u32("sample count")? as usize;
        let c = r.u32("channel count")? as usize;
        let h = r.u32("height")? as usize;
        let w = r.u32("width")? as usize;
        let k = r.u32("attribute count")? as usize;
        if classes == 0 || c == 0 || h == 0 || w == 0 || k == 0 {
            return Err(r.err_at(12, "nonzero classes, C, H, W and K".to_string()));
        }
        let flags = r.u32("flags")?;
        let seed = r.u64("seed")?;
        let config_hash = r.u64("config hash")?;
        let numel = c * h * w;
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let x = r.f32("feature value")?;
                if !x.is_finite() {
                    return Err(r.err_at(r.pos - 4, "finite feature value".into()));
                }
                data.push(T::from_acc(x as f64));
            }
            features.push(Tensor::from_vec(&[c, h, w], data)?);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = r.u32("label")? as usize;
            if y >= classes {
                return Err(r.err_at(r.pos - 4, format!("label below {classes}")));
            }
            labels.push(ClassId(y));
        }
        let mut splits = Vec::with_capacity(n);
        for _ in 0..n {
            let code = r.u8("split")?;
            splits.push(
                Split::from_code(code).ok_or_else(|| r.err_at(r.pos - 1, "split code 0, 1 or 2".into()))?,
            );
        }
        let mut table = vec![0.0f64; classes * k];
        for ki in 0..k {
            for y in 0..classes {
                table[y * k + ki] = r.f64("attribute value")?;
            }
        }
        let mut seen = Vec::with_capacity(classes);
        for _ in 0..classes {
            match r.u8("seen flag")? {
                0 => seen.push(false),
                1 => seen.push(true),
                _ => return Err(r.err_at(r.pos - 1, "seen flag 0 or 1".into())),
            }
        }
        let table_offset = r.pos;
        let table = SemanticTable::new(Tensor::from_f64(&[classes, k], &table)?, seen).map_err(|e| {
            RsanError::Format {
                offset: table_offset as u64,
                expected: format!("valid semantic table ({e})"),
            }
        })?;
        let mut plants: Vec<Option<PlantLocations>> = vec![None; n];
        if flags & 1 == 1 {
            for slot in plants.iter_mut() {
                let mut locs = Vec::with_capacity(k);
                for _ in 0..k {
                    let i = r.u16("plant row")?;
                    let j = r.u16("plant column")?;
                    if i == NO_PLANT && j == NO_PLANT {
                        locs.push(None);
                    } else if (i as usize) < h && (j as usize) < w {
                        locs.push(Some((i as usize, j as usize)));
                    } else {
                        return Err(r.err_at(r.pos - 4, format!("plant location inside {h}x{w}")));
                    }
                }
                *slot = Some(locs);
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, "end of file".into()));
        }
        let samples = features
            .into_iter()
            .zip(labels)
            .zip(splits)
            .zip(plants)
            .map(|(((features, label), split), plants)| Sample {
                features,
                label,
                split,
                plants,
            })
            .collect();
        Ok(Dataset {
            samples,
            table,
            dims: (c, h, w),
            seed,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl Reader<'_> {
    pub fn err_at(&self, offset: usize, expected: String) -> RsanError {
        RsanError::Format {
            offset: offset as u64,
            expected,
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err_at(self.pos, format!("{what} ({n} bytes), found end of file")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let expected = format!("magic \"{}\"", String::from_utf8_lossy(magic));
        let got = self.take(8, &expected)?;
        if got != magic {
            return Err(self.err_at(0, expected));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
