//! Parameter checkpoint file.
//!
//! ```text
//! magic      4 bytes   "HECK"
//! hdr_len    u32 LE    length of the JSON header in bytes
//! header     hdr_len   UTF-8 JSON (CheckpointHeader)
//! tensors    ...       f32 little-endian, row-major, in header.tensors order
//! ```
//!
//! Values are computed in `f64` and narrowed to `f32` on write.

use std::io::{Read, Write};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{AddParams, EmbVariant, EmbeddingMatrix, EmbeddingParams, PoolParams, ProjParams};
use crate::error::{Error, Result};
use crate::hashing::HashScheme;

const MAGIC: &[u8; 4] = b"HECK";
pub const FORMAT_NAME: &str = "hashemb-checkpoint";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    pub variant: EmbVariant,
    pub scheme: HashScheme,
    pub d: usize,
    #[serde(default)]
    pub n_buckets: Option<u64>,
    #[serde(default)]
    pub n_bits: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub vocab_hash: Option<String>,
    /// Free-form model description (encoder shape, training config).
    #[serde(default)]
    pub model: Option<serde_json::Value>,
    pub tensors: Vec<TensorInfo>,
}

impl CheckpointHeader {
    pub fn new(params: &EmbeddingParams, scheme: HashScheme, seed: u64) -> Self {
        let (n_buckets, n_bits, k, gamma) = match params {
            EmbeddingParams::Emb(m) => (Some(m.n_rows() as u64), None, None, None),
            EmbeddingParams::Pool(p) => (None, Some(p.n_bits()), Some(p.k()), None),
            EmbeddingParams::Add(p) => (None, Some(p.n_bits()), None, Some(p.gamma())),
            EmbeddingParams::Proj(p) => (None, Some(p.n_bits()), None, None),
        };
        Self {
            format: FORMAT_NAME.into(),
            version: 1,
            endianness: "little".into(),
            dtype: "f32".into(),
            variant: params.variant(),
            scheme,
            d: params.dim(),
            n_buckets,
            n_bits,
            k,
            gamma,
            seed,
            vocab_hash: None,
            model: None,
            tensors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    data: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(mut header: CheckpointHeader) -> Self {
        header.tensors.clear();
        Self {
            header,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) -> Result<()> {
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
        };
        if info.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} has shape {:?} but {} values",
                info.name,
                info.shape,
                values.len()
            )));
        }
        self.header.tensors.push(info);
        self.data.push(values.iter().map(|&v| v as f32).collect());
        Ok(())
    }

    /// Embedding tensors plus the reserved row, if any.
    pub fn from_embedding(
        params: &EmbeddingParams,
        reserved: Option<&[f64]>,
        scheme: HashScheme,
        seed: u64,
    ) -> Result<Self> {
        let mut ck = Self::new(CheckpointHeader::new(params, scheme, seed));
        ck.push_embedding(params, reserved)?;
        Ok(ck)
    }

    pub fn push_embedding(&mut self, params: &EmbeddingParams, reserved: Option<&[f64]>) -> Result<()> {
        for (info, values) in params.tensor_infos().into_iter().zip(params.tensors()) {
            self.push(info.name, &info.shape, values)?;
        }
        if let Some(row) = reserved {
            self.push("embedding.reserved", &[row.len()], row)?;
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<(&TensorInfo, Vec<f64>)> {
        self.header
            .tensors
            .iter()
            .zip(&self.data)
            .find(|(info, _)| info.name == name)
            .map(|(info, data)| (info, data.iter().map(|&v| v as f64).collect()))
    }

    fn require(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let (info, data) = self
            .tensor(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))?;
        if info.shape != shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                info.shape
            )));
        }
        Ok(data)
    }

    /// Rebuilds the embedding parameters described by the header.
    pub fn embedding(&self) -> Result<EmbeddingParams> {
        let h = &self.header;
        let d = h.d;
        let missing = |f: &str| Error::Format(format!("checkpoint header missing {f}"));
        let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
        Ok(match h.variant {
            EmbVariant::Emb => {
                let n = h.n_buckets.ok_or_else(|| missing("n_buckets"))? as usize;
                let rows = self.require("embedding.matrix", &[n, d])?;
                EmbeddingParams::Emb(EmbeddingMatrix::new(
                    Array2::from_shape_vec((n, d), rows).map_err(shape_err)?,
                )?)
            }
            EmbVariant::Pool => {
                let t = h.n_bits.ok_or_else(|| missing("n_bits"))?;
                let k = h.k.ok_or_else(|| missing("k"))?;
                if k == 0 || k >= 31 {
                    return Err(Error::Format(format!("bad k={k}")));
                }
                let m = super::n_codewords(t, k);
                let b = self.require("embedding.codebook", &[1 << k, d])?;
                let w = self.require("embedding.weights", &[m, d])?;
                EmbeddingParams::Pool(PoolParams::new(
                    Array2::from_shape_vec((1 << k, d), b).map_err(shape_err)?,
                    Array2::from_shape_vec((m, d), w).map_err(shape_err)?,
                    k,
                    t,
                )?)
            }
            EmbVariant::Add => {
                let t = h.n_bits.ok_or_else(|| missing("n_bits"))?;
                let gamma = h.gamma.unwrap_or((t as f64).sqrt());
                let cb = self.require("embedding.codebooks", &[t, 2, d])?;
                EmbeddingParams::Add(AddParams::new(
                    Array3::from_shape_vec((t, 2, d), cb).map_err(shape_err)?,
                    gamma,
                )?)
            }
            EmbVariant::Proj => {
                let t = h.n_bits.ok_or_else(|| missing("n_bits"))?;
                let axes = self.require("embedding.axes", &[d, t])?;
                EmbeddingParams::Proj(ProjParams::new(
                    Array2::from_shape_vec((d, t), axes).map_err(shape_err)?,
                )?)
            }
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for tensor in &self.data {
            for v in tensor {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        if header.format != FORMAT_NAME || header.endianness != "little" || header.dtype != "f32" {
            return Err(Error::Format("unsupported checkpoint encoding".into()));
        }
        let mut data = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let mut bytes = vec![0u8; info.len() * 4];
            input.read_exact(&mut bytes)?;
            data.push(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after tensors", rest.len())));
        }
        Ok(Self { header, data })
    }
}
