use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::{n_codewords, normal_init, INIT_STD};
use crate::error::{Error, Result};

/// Shared `2^k x d` codebook and `ceil(T/k) x d` pooling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    codebook: Array2<f64>,
    weights: Array2<f64>,
    k: usize,
    n_bits: usize,
}

/// Gradient buffers for [`PoolParams`]. Same layout as the parameters.
pub type PoolGrads = PoolParams;

impl PoolParams {
    pub fn new(codebook: Array2<f64>, weights: Array2<f64>, k: usize, n_bits: usize) -> Result<Self> {
        if k == 0 || k > n_bits || k >= 31 {
            return Err(Error::InvalidArgument(format!("k={k} must be in 1..=min(T, 30)")));
        }
        let d = codebook.ncols();
        if d == 0 || codebook.nrows() != 1 << k {
            return Err(Error::ShapeMismatch(format!(
                "codebook must be {}x{d}, got {:?}",
                1usize << k,
                codebook.dim()
            )));
        }
        if weights.dim() != (n_codewords(n_bits, k), d) {
            return Err(Error::ShapeMismatch(format!(
                "pool weights must be {}x{d}, got {:?}",
                n_codewords(n_bits, k),
                weights.dim()
            )));
        }
        Ok(Self {
            codebook,
            weights,
            k,
            n_bits,
        })
    }

    /// Codebook from `N(0, 0.02^2)`; pooling weights start at zero (uniform
    /// softmax).
    pub fn init<R: Rng + ?Sized>(n_bits: usize, k: usize, d: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k >= 31 {
            return Err(Error::InvalidArgument(format!("k={k} out of range")));
        }
        let codebook = normal_init((1 << k, d), INIT_STD, rng);
        let weights = Array2::zeros((n_codewords(n_bits, k), d));
        Self::new(codebook, weights, k, n_bits)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn dim(&self) -> usize {
        self.codebook.ncols()
    }

    pub fn codebook(&self) -> &Array2<f64> {
        &self.codebook
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn tensors_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.codebook, &mut self.weights)
    }

    pub(super) fn grads_mut(&mut self) -> &mut Self {
        self
    }

    /// Column-wise softmax of the pooling weights, max-subtracted.
    pub fn softmax_weights(&self) -> Array2<f64> {
        let mut s = self.weights.clone();
        for mut col in s.axis_iter_mut(Axis(1)) {
            let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            col.mapv_inplace(|v| (v - max).exp());
            let sum = col.sum();
            col /= sum;
        }
        s
    }

    fn check_codes(&self, codes: &[usize]) -> Result<()> {
        if codes.len() != self.weights.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} codewords, got {}",
                self.weights.nrows(),
                codes.len()
            )));
        }
        if let Some(&c) = codes.iter().find(|&&c| c >= self.codebook.nrows()) {
            return Err(Error::InvalidArgument(format!(
                "codeword {c} >= 2^{}",
                self.k
            )));
        }
        Ok(())
    }

    /// `e_m = sum_j B[c_j, m] * softmax(W)[j, m]`.
    pub fn forward(&self, codes: &[usize]) -> Result<Array1<f64>> {
        self.check_codes(codes)?;
        let s = self.softmax_weights();
        let mut e = Array1::zeros(self.dim());
        for (j, &c) in codes.iter().enumerate() {
            e += &(&self.codebook.row(c) * &s.row(j));
        }
        Ok(e)
    }

    /// Accumulates gradients for both the codebook and the pooling weights.
    ///
    /// With `S = softmax(W)`: `dB[c_j] += g * S_j` and
    /// `dW_j = g * S_j * (B[c_j] - e)`.
    pub fn accumulate_backward(
        &self,
        codes: &[usize],
        upstream: ArrayView1<'_, f64>,
        grads: &mut PoolGrads,
    ) -> Result<()> {
        self.check_codes(codes)?;
        if upstream.len() != self.dim()
            || grads.codebook.dim() != self.codebook.dim()
            || grads.weights.dim() != self.weights.dim()
        {
            return Err(Error::ShapeMismatch("pool gradient".into()));
        }
        let s = self.softmax_weights();
        let mut e = Array1::zeros(self.dim());
        for (j, &c) in codes.iter().enumerate() {
            e += &(&self.codebook.row(c) * &s.row(j));
        }
        for (j, &c) in codes.iter().enumerate() {
            let s_j = s.row(j);
            let b_c = self.codebook.row(c);
            let mut db = grads.codebook.row_mut(c);
            db += &(&upstream * &s_j);
            let mut dw = grads.weights.row_mut(j);
            dw += &(&upstream * &s_j * &(&b_c - &e));
        }
        Ok(())
    }

    pub fn backward(&self, codes: &[usize], upstream: ArrayView1<'_, f64>) -> Result<PoolGrads> {
        let mut g = self.zeros();
        self.accumulate_backward(codes, upstream, &mut g)?;
        Ok(g)
    }

    fn zeros(&self) -> Self {
        Self {
            codebook: Array2::zeros(self.codebook.dim()),
            weights: Array2::zeros(self.weights.dim()),
            k: self.k,
            n_bits: self.n_bits,
        }
    }
}
