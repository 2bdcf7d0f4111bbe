//! UQET embedding-tensor files and JSON positives files.
//!
//! A UQET file is a fixed 32-byte header followed by an `f32` payload:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UQET"
//! 4       2     version (u16 LE) = 1
//! 6       1     dtype (u8) = 1 (f32)
//! 7       1     ndim (u8) = 3
//! 8       24    dims L, N, D (3 x u64 LE)
//! 32      4LND  values (f32 LE), row-major with D fastest
//! ```
//!
//! Values are stored as `f32` and widened to `f64` on every read accessor.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"UQET";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 32;

/// An `L x N x D` stack of Monte-Carlo sampled embeddings: one `N x D` slice
/// per drawn model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    models: usize,
    samples: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingTensor {
    pub fn new(models: usize, samples: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if models == 0 || samples == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "all dims must be >= 1, got ({models}, {samples}, {dim})"
            )));
        }
        let expected = models
            .checked_mul(samples)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| Error::Shape("dims overflow".into()))?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "({models}, {samples}, {dim}) needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(EmbeddingTensor {
            models,
            samples,
            dim,
            values,
        })
    }

    /// Build from `f64` values, rounding to the `f32` storage precision.
    pub fn from_f64(models: usize, samples: usize, dim: usize, values: &[f64]) -> Result<Self> {
        Self::new(
            models,
            samples,
            dim,
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Stack equally-shaped `N x D` slices into a tensor.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Shape("no slices".into()))?;
        let (n, d) = (first.rows(), first.cols());
        let mut values = Vec::with_capacity(slices.len() * n * d);
        for s in slices {
            if s.rows() != n || s.cols() != d {
                return Err(Error::Shape("slices differ in shape".into()));
            }
            values.extend(s.as_slice().iter().map(|&v| v as f32));
        }
        Self::new(slices.len(), n, d, values)
    }

    #[inline]
    pub fn models(&self) -> usize {
        self.models
    }

    #[inline]
    pub fn samples(&self) -> usize {
        self.samples
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.models, self.samples, self.dim)
    }

    pub fn raw(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn value(&self, l: usize, n: usize, d: usize) -> f64 {
        self.values[(l * self.samples + n) * self.dim + d] as f64
    }

    /// Embedding of sample `n` under model `l`, widened to `f64`.
    pub fn vector(&self, l: usize, n: usize) -> Vec<f64> {
        let start = (l * self.samples + n) * self.dim;
        self.values[start..start + self.dim]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    /// Model slice `l` as an `N x D` matrix.
    pub fn slice(&self, l: usize) -> Matrix {
        let stride = self.samples * self.dim;
        let data = self.values[l * stride..(l + 1) * stride]
            .iter()
            .map(|&v| v as f64)
            .collect();
        Matrix::from_vec(self.samples, self.dim, data).expect("slice shape")
    }

    /// The first `count` model slices.
    pub fn take_models(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.models {
            return Err(Error::InvalidArgument(format!(
                "cannot take {count} of {} models",
                self.models
            )));
        }
        Ok(EmbeddingTensor {
            models: count,
            samples: self.samples,
            dim: self.dim,
            values: self.values[..count * self.samples * self.dim].to_vec(),
        })
    }

    /// Model slice `l` as a single-model tensor.
    pub fn select_model(&self, l: usize) -> Result<Self> {
        if l >= self.models {
            return Err(Error::InvalidArgument(format!(
                "model {l} out of range ({})",
                self.models
            )));
        }
        let stride = self.samples * self.dim;
        Ok(EmbeddingTensor {
            models: 1,
            samples: self.samples,
            dim: self.dim,
            values: self.values[l * stride..(l + 1) * stride].to_vec(),
        })
    }

    /// Keep only the samples named by `idx`, in that order, across all models.
    pub fn select_samples(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(self.models * idx.len() * self.dim);
        for l in 0..self.models {
            for &n in idx {
                if n >= self.samples {
                    return Err(Error::InvalidArgument(format!(
                        "sample {n} out of range ({})",
                        self.samples
                    )));
                }
                let start = (l * self.samples + n) * self.dim;
                values.extend_from_slice(&self.values[start..start + self.dim]);
            }
        }
        Self::new(self.models, idx.len(), self.dim, values)
    }
}

/// Serialize a tensor into UQET bytes.
pub fn encode_tensor(tensor: &EmbeddingTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * tensor.values.len());
    buf.extend_from_slice(&MAGIC);
    // Writes into a Vec cannot fail.
    buf.write_u16::<LittleEndian>(VERSION).unwrap();
    buf.write_u8(DTYPE_F32).unwrap();
    buf.write_u8(3).unwrap();
    for d in [tensor.models, tensor.samples, tensor.dim] {
        buf.write_u64::<LittleEndian>(d as u64).unwrap();
    }
    for &v in &tensor.values {
        buf.write_f32::<LittleEndian>(v).unwrap();
    }
    buf
}

/// Parse UQET bytes. Any input either yields a fully validated tensor or an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<EmbeddingTensor> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::SizeMismatch {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = cur.read_u16::<LittleEndian>().unwrap();
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let dtype = cur.read_u8().unwrap();
    if dtype != DTYPE_F32 {
        return Err(Error::BadDtype(dtype));
    }
    let ndim = cur.read_u8().unwrap();
    if ndim != 3 {
        return Err(Error::BadRank(ndim));
    }
    let mut dims = [0u64; 3];
    for d in dims.iter_mut() {
        *d = cur.read_u64::<LittleEndian>().unwrap();
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero dimension in {dims:?}")));
    }
    let payload = (bytes.len() - HEADER_LEN) as u64;
    let expected = dims[0]
        .checked_mul(dims[1])
        .and_then(|x| x.checked_mul(dims[2]))
        .and_then(|x| x.checked_mul(4));
    match expected {
        Some(e) if e == payload => {}
        Some(e) => {
            return Err(Error::SizeMismatch {
                expected: e + HEADER_LEN as u64,
                found: bytes.len() as u64,
            })
        }
        None => return Err(Error::Shape(format!("dims overflow: {dims:?}"))),
    }
    let count = (payload / 4) as usize;
    let mut values = vec![0f32; count];
    cur.read_f32_into::<LittleEndian>(&mut values).unwrap();
    EmbeddingTensor::new(
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        values,
    )
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &EmbeddingTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<EmbeddingTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Ground-truth positive targets for each query of one retrieval direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivesMap {
    pub direction: String,
    pub num_targets: usize,
    pub positives: Vec<Vec<usize>>,
}

impl PositivesMap {
    pub fn new(
        direction: impl Into<String>,
        num_targets: usize,
        positives: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let map = PositivesMap {
            direction: direction.into(),
            num_targets,
            positives,
        };
        map.validate()?;
        Ok(map)
    }

    /// Query `i` is paired with target `i`.
    pub fn identity(direction: impl Into<String>, n: usize) -> Self {
        PositivesMap {
            direction: direction.into(),
            num_targets: n,
            positives: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (q, list) in self.positives.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::EmptyPositives(q));
            }
            let mut seen = list.clone();
            seen.sort_unstable();
            for w in seen.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::DuplicatePositive {
                        query: q,
                        index: w[0],
                    });
                }
            }
            if let Some(&index) = list.iter().find(|&&i| i >= self.num_targets) {
                return Err(Error::IndexOutOfRange {
                    query: q,
                    index,
                    num_targets: self.num_targets,
                });
            }
        }
        Ok(())
    }

    pub fn num_queries(&self) -> usize {
        self.positives.len()
    }

    pub fn is_positive(&self, query: usize, target: usize) -> bool {
        self.positives[query].contains(&target)
    }

    /// The map for the opposite direction: target `t` gets every query listing `t`.
    ///
    /// Fails when some target is nobody's positive.
    pub fn reversed(&self, direction: impl Into<String>) -> Result<Self> {
        let mut rev = vec![Vec::new(); self.num_targets];
        for (q, list) in self.positives.iter().enumerate() {
            for &t in list {
                rev[t].push(q);
            }
        }
        PositivesMap::new(direction, self.positives.len(), rev)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("positives serialize")
    }
}

pub fn parse_positives(text: &str, context: &str) -> Result<PositivesMap> {
    let map: PositivesMap = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: e.to_string(),
    })?;
    map.validate()?;
    Ok(map)
}

pub fn read_positives(path: impl AsRef<Path>) -> Result<PositivesMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_positives(&text, &path.display().to_string())
}

pub fn write_positives(path: impl AsRef<Path>, map: &PositivesMap) -> Result<()> {
    let path = path.as_ref();
    map.validate()?;
    let mut text = map.to_json();
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
