//! Token embeddings from hash outputs.
//!
//! * [`EmbeddingMatrix`]: plain row lookup by bucket index.
//! * [`PoolParams`]: softmax-weighted pooling over a shared codebook indexed
//!   by `k`-bit chunks of the hash bits.
//! * [`AddParams`]: one two-row codebook per bit, summed and scaled by `gamma`.
//! * [`ProjParams`]: Pearson correlation of the bit vector with `d` learnable
//!   axes.
//!
//! Backward passes accumulate into gradient buffers of the same shape as the
//! parameters so a batch can be reduced without reallocating.

mod add;
mod audit;
mod checkpoint;
mod pool;
mod proj;

use ndarray::{Array1, Array2, ArrayView1, Dimension};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::BitVector;

pub use add::AddParams;
pub use audit::{
    count_params, format_count, published_emb_param_rows, AuditInputs, ParamAudit, PublishedRow,
    Variant,
};
pub use checkpoint::{Checkpoint, CheckpointHeader, TensorInfo};
pub use pool::{PoolGrads, PoolParams};
pub use proj::ProjParams;

/// Standard deviation of the normal initializer for codebooks and axes.
pub const INIT_STD: f64 = 0.02;

/// Fills an array with `N(0, std^2)` samples.
pub fn normal_init<Sh: ndarray::ShapeBuilder<Dim = D>, D: Dimension, R: Rng + ?Sized>(
    shape: Sh,
    std: f64,
    rng: &mut R,
) -> ndarray::Array<f64, D> {
    let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
    ndarray::Array::from_shape_simple_fn(shape, || normal.sample(rng))
}

/// `N x d` lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        let (n, d) = rows.dim();
        if n == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!("embedding matrix {n}x{d}")));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding matrix has non-finite entries".into()));
        }
        Ok(Self { rows })
    }

    pub fn init<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        Self::new(normal_init((n, d), INIT_STD, rng))
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Array2<f64> {
        &mut self.rows
    }

    /// Borrowed view of row `index`. Tokens sharing a bucket share the row,
    /// so writes through [`Self::rows_mut`] affect all of them.
    pub fn lookup(&self, index: usize) -> Result<ArrayView1<'_, f64>> {
        if index >= self.n_rows() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.n_rows(),
            });
        }
        Ok(self.rows.row(index))
    }

    /// Adds `upstream` to row `index` of `grad`.
    pub fn accumulate_backward(
        &self,
        index: usize,
        upstream: ArrayView1<'_, f64>,
        grad: &mut Array2<f64>,
    ) -> Result<()> {
        if grad.dim() != self.rows.dim() || upstream.len() != self.dim() {
            return Err(Error::ShapeMismatch("embedding gradient".into()));
        }
        if index >= self.n_rows() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.n_rows(),
            });
        }
        let mut row = grad.row_mut(index);
        row += &upstream;
        Ok(())
    }
}

/// Free function form of [`EmbeddingMatrix::lookup`], returning a copy.
pub fn emb_lookup(index: usize, matrix: &EmbeddingMatrix) -> Result<Array1<f64>> {
    matrix.lookup(index).map(|r| r.to_owned())
}

/// Number of codewords `ceil(T / k)`.
pub fn n_codewords(n_bits: usize, k: usize) -> usize {
    n_bits.div_ceil(k)
}

/// Splits `tau` into non-overlapping `k`-bit chunks read MSB first. The last
/// chunk may be shorter and is read as-is.
pub fn split_bits(tau: &BitVector, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > tau.len() {
        return Err(Error::InvalidArgument(format!(
            "chunk width {k} must be in 1..={}",
            tau.len()
        )));
    }
    if k >= usize::BITS as usize {
        return Err(Error::InvalidArgument(format!("chunk width {k} too large")));
    }
    Ok(tau
        .bits()
        .chunks(k)
        .map(|chunk| chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
        .collect())
}

/// Which embedding parameterization a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbVariant {
    Emb,
    Pool,
    Add,
    Proj,
}

impl EmbVariant {
    pub fn name(self) -> &'static str {
        match self {
            EmbVariant::Emb => "emb",
            EmbVariant::Pool => "pool",
            EmbVariant::Add => "add",
            EmbVariant::Proj => "proj",
        }
    }

    /// Whether the variant consumes bit vectors rather than bucket indices.
    pub fn uses_bits(self) -> bool {
        !matches!(self, EmbVariant::Emb)
    }
}

impl std::str::FromStr for EmbVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emb" => Ok(EmbVariant::Emb),
            "pool" => Ok(EmbVariant::Pool),
            "add" => Ok(EmbVariant::Add),
            "proj" => Ok(EmbVariant::Proj),
            _ => Err(Error::InvalidArgument(format!("unknown embedding variant {s:?}"))),
        }
    }
}

/// What a hasher hands to an embedding: a bucket index or a bit vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HashCode {
    Index(usize),
    Bits(BitVector),
}

/// Parameters of any of the four embedding variants.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingParams {
    Emb(EmbeddingMatrix),
    Pool(PoolParams),
    Add(AddParams),
    Proj(ProjParams),
}

impl EmbeddingParams {
    pub fn variant(&self) -> EmbVariant {
        match self {
            EmbeddingParams::Emb(_) => EmbVariant::Emb,
            EmbeddingParams::Pool(_) => EmbVariant::Pool,
            EmbeddingParams::Add(_) => EmbVariant::Add,
            EmbeddingParams::Proj(_) => EmbVariant::Proj,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingParams::Emb(m) => m.dim(),
            EmbeddingParams::Pool(p) => p.dim(),
            EmbeddingParams::Add(p) => p.dim(),
            EmbeddingParams::Proj(p) => p.dim(),
        }
    }

    /// Learnable scalar count (the closed-form count, without reserved rows).
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, code: &HashCode) -> Result<Array1<f64>> {
        match (self, code) {
            (EmbeddingParams::Emb(m), HashCode::Index(i)) => emb_lookup(*i, m),
            (EmbeddingParams::Pool(p), HashCode::Bits(b)) => p.forward(&split_bits(b, p.k())?),
            (EmbeddingParams::Add(p), HashCode::Bits(b)) => p.forward(b),
            (EmbeddingParams::Proj(p), HashCode::Bits(b)) => p.forward(b),
            _ => Err(Error::InvalidArgument(format!(
                "{} embedding cannot consume this hash code",
                self.variant().name()
            ))),
        }
    }

    /// Accumulates `d loss / d params` into `grads`, which must have been
    /// created by [`Self::zeros_like`].
    pub fn accumulate_backward(
        &self,
        code: &HashCode,
        upstream: ArrayView1<'_, f64>,
        grads: &mut EmbeddingParams,
    ) -> Result<()> {
        match (self, code, grads) {
            (EmbeddingParams::Emb(m), HashCode::Index(i), EmbeddingParams::Emb(g)) => {
                m.accumulate_backward(*i, upstream, g.rows_mut())
            }
            (EmbeddingParams::Pool(p), HashCode::Bits(b), EmbeddingParams::Pool(g)) => {
                let codes = split_bits(b, p.k())?;
                p.accumulate_backward(&codes, upstream, g.grads_mut())
            }
            (EmbeddingParams::Add(p), HashCode::Bits(b), EmbeddingParams::Add(g)) => {
                p.accumulate_backward(b, upstream, g.codebooks_mut())
            }
            (EmbeddingParams::Proj(p), HashCode::Bits(b), EmbeddingParams::Proj(g)) => {
                p.accumulate_backward(b, upstream, g.axes_mut())
            }
            _ => Err(Error::ShapeMismatch("gradient buffer or hash code does not match variant".into())),
        }
    }

    /// Same shape, all zeros. Non-learnable settings (`k`, `gamma`) are copied.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Learnable tensors as flat slices, in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            EmbeddingParams::Emb(m) => vec![m.rows().as_slice().unwrap()],
            EmbeddingParams::Pool(p) => vec![
                p.codebook().as_slice().unwrap(),
                p.weights().as_slice().unwrap(),
            ],
            EmbeddingParams::Add(p) => vec![p.codebooks().as_slice().unwrap()],
            EmbeddingParams::Proj(p) => vec![p.axes().as_slice().unwrap()],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            EmbeddingParams::Emb(m) => vec![m.rows_mut().as_slice_mut().unwrap()],
            EmbeddingParams::Pool(p) => {
                let (b, w) = p.tensors_mut();
                vec![b.as_slice_mut().unwrap(), w.as_slice_mut().unwrap()]
            }
            EmbeddingParams::Add(p) => vec![p.codebooks_mut().as_slice_mut().unwrap()],
            EmbeddingParams::Proj(p) => vec![p.axes_mut().as_slice_mut().unwrap()],
        }
    }

    /// Names and shapes matching [`Self::tensors`].
    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let info = |name: &str, shape: &[usize]| TensorInfo {
            name: format!("embedding.{name}"),
            shape: shape.to_vec(),
        };
        match self {
            EmbeddingParams::Emb(m) => vec![info("matrix", m.rows().shape())],
            EmbeddingParams::Pool(p) => vec![
                info("codebook", p.codebook().shape()),
                info("weights", p.weights().shape()),
            ],
            EmbeddingParams::Add(p) => vec![info("codebooks", p.codebooks().shape())],
            EmbeddingParams::Proj(p) => vec![info("axes", p.axes().shape())],
        }
    }
}
