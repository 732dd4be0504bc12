//! Random-hyperplane LSH without a stored projection matrix.
//!
//! Only one standard-normal vector `eta` of length `d_x` is kept. Hyperplane
//! `j` is `eta` rotated left by `(j + 1) mod d_x` positions, so every
//! hyperplane has exactly the norm of `eta` and a dot product with a sparse
//! vector costs one lookup per non-zero entry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::BitVector;
use crate::corpus::MorphVector;
use crate::error::{Error, Result};

/// The stored random vector and the rotation rule that derives hyperplanes.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplanes {
    eta: Vec<f64>,
    seed: u64,
}

impl Hyperplanes {
    /// Draws `eta` from the standard normal distribution.
    pub fn new(d_x: usize, seed: u64) -> Result<Self> {
        if d_x == 0 {
            return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = (0..d_x).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self { eta, seed })
    }

    /// Uses a caller-supplied `eta`.
    pub fn from_eta(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() {
            return Err(Error::InvalidArgument("eta must be non-empty".into()));
        }
        Ok(Self { eta, seed: 0 })
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn d_x(&self) -> usize {
        self.eta.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn offset(&self, j: usize) -> usize {
        (j + 1) % self.eta.len()
    }

    /// Materializes hyperplane `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.eta.len();
        let off = self.offset(j);
        (0..d).map(|i| self.eta[(i + off) % d]).collect()
    }

    /// `x · column(j)` without materializing the column.
    pub fn dot(&self, x: &MorphVector, j: usize) -> f64 {
        let d = self.eta.len();
        let off = self.offset(j);
        x.entries()
            .iter()
            .map(|&(i, w)| w * self.eta[(i as usize + off) % d])
            .sum()
    }

    fn check_dim(&self, x: &MorphVector) -> Result<()> {
        if x.dim() != self.d_x() {
            return Err(Error::ShapeMismatch(format!(
                "feature vector has dim {}, hasher expects {}",
                x.dim(),
                self.d_x()
            )));
        }
        Ok(())
    }
}

/// Hashes a morphological vector to the index of its nearest hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct LshArgmaxHasher {
    planes: Hyperplanes,
    n_planes: usize,
}

impl LshArgmaxHasher {
    pub fn new(d_x: usize, n_planes: usize, seed: u64) -> Result<Self> {
        Self::with_hyperplanes(Hyperplanes::new(d_x, seed)?, n_planes)
    }

    pub fn with_hyperplanes(planes: Hyperplanes, n_planes: usize) -> Result<Self> {
        if n_planes == 0 {
            return Err(Error::ZeroBuckets);
        }
        Ok(Self { planes, n_planes })
    }

    pub fn hyperplanes(&self) -> &Hyperplanes {
        &self.planes
    }

    pub fn n_planes(&self) -> usize {
        self.n_planes
    }

    pub fn d_x(&self) -> usize {
        self.planes.d_x()
    }

    pub fn hyperplane_column(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.n_planes {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.n_planes,
            });
        }
        Ok(self.planes.column(j))
    }

    /// `argmax_j x·r^j`, smallest `j` on ties. An empty vector maps to 0.
    pub fn argmax(&self, x: &MorphVector) -> Result<usize> {
        self.planes.check_dim(x)?;
        if x.is_empty() {
            return Ok(0);
        }
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..self.n_planes {
            let v = self.planes.dot(x, j);
            if v > best_val {
                best = j;
                best_val = v;
            }
        }
        Ok(best)
    }

    /// Bucket index `argmax mod n_buckets`.
    pub fn index(&self, x: &MorphVector, n_buckets: u64) -> Result<u64> {
        if n_buckets == 0 {
            return Err(Error::ZeroBuckets);
        }
        Ok(self.argmax(x)? as u64 % n_buckets)
    }
}

/// Hashes a morphological vector to `T` sign bits, one per hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct LshSignHasher {
    planes: Hyperplanes,
    n_bits: usize,
}

impl LshSignHasher {
    pub fn new(d_x: usize, n_bits: usize, seed: u64) -> Result<Self> {
        Self::with_hyperplanes(Hyperplanes::new(d_x, seed)?, n_bits)
    }

    pub fn with_hyperplanes(planes: Hyperplanes, n_bits: usize) -> Result<Self> {
        if n_bits == 0 {
            return Err(Error::InvalidArgument("bit count must be >= 1".into()));
        }
        Ok(Self { planes, n_bits })
    }

    pub fn hyperplanes(&self) -> &Hyperplanes {
        &self.planes
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn d_x(&self) -> usize {
        self.planes.d_x()
    }

    /// Bit `j` is `sgn(sgn(x·r^j) + 1)`: 1 when the dot product is `>= 0`.
    pub fn sign_bits(&self, x: &MorphVector) -> Result<BitVector> {
        self.planes.check_dim(x)?;
        Ok(BitVector::new(
            (0..self.n_bits).map(|j| self.planes.dot(x, j) >= 0.0).collect(),
        ))
    }
}
