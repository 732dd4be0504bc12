use ndarray::{Array1, Array3, ArrayView1};
use rand::Rng;

use super::{normal_init, INIT_STD};
use crate::error::{Error, Result};
use crate::hashing::BitVector;

/// `T` codebooks of two rows each, stored as a `T x 2 x d` tensor, and the
/// scale `gamma` (default `sqrt(T)`).
#[derive(Debug, Clone, PartialEq)]
pub struct AddParams {
    codebooks: Array3<f64>,
    gamma: f64,
}

impl AddParams {
    pub fn new(codebooks: Array3<f64>, gamma: f64) -> Result<Self> {
        let (t, two, d) = codebooks.dim();
        if t == 0 || two != 2 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "codebooks must be Tx2xd, got {:?}",
                codebooks.dim()
            )));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} must be > 0")));
        }
        Ok(Self { codebooks, gamma })
    }

    /// `gamma = sqrt(T)`.
    pub fn with_default_gamma(codebooks: Array3<f64>) -> Result<Self> {
        let t = codebooks.dim().0 as f64;
        Self::new(codebooks, t.sqrt())
    }

    pub fn init<R: Rng + ?Sized>(n_bits: usize, d: usize, rng: &mut R) -> Result<Self> {
        Self::with_default_gamma(normal_init((n_bits, 2, d), INIT_STD, rng))
    }

    pub fn n_bits(&self) -> usize {
        self.codebooks.dim().0
    }

    pub fn dim(&self) -> usize {
        self.codebooks.dim().2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn codebooks(&self) -> &Array3<f64> {
        &self.codebooks
    }

    pub fn codebooks_mut(&mut self) -> &mut Array3<f64> {
        &mut self.codebooks
    }

    fn check_len(&self, tau: &BitVector) -> Result<()> {
        if tau.len() != self.n_bits() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bits, got {}",
                self.n_bits(),
                tau.len()
            )));
        }
        Ok(())
    }

    /// `e = sum_j B^j[tau_j] / gamma`.
    pub fn forward(&self, tau: &BitVector) -> Result<Array1<f64>> {
        self.check_len(tau)?;
        let mut e = Array1::zeros(self.dim());
        for (j, &bit) in tau.bits().iter().enumerate() {
            e += &self.codebooks.slice(ndarray::s![j, bit as usize, ..]);
        }
        e /= self.gamma;
        Ok(e)
    }

    /// `dB^j[tau_j] += g / gamma`; the unselected row of each codebook gets
    /// nothing.
    pub fn accumulate_backward(
        &self,
        tau: &BitVector,
        upstream: ArrayView1<'_, f64>,
        grads: &mut Array3<f64>,
    ) -> Result<()> {
        self.check_len(tau)?;
        if upstream.len() != self.dim() || grads.dim() != self.codebooks.dim() {
            return Err(Error::ShapeMismatch("add gradient".into()));
        }
        let scaled = &upstream / self.gamma;
        for (j, &bit) in tau.bits().iter().enumerate() {
            let mut row = grads.slice_mut(ndarray::s![j, bit as usize, ..]);
            row += &scaled;
        }
        Ok(())
    }

    pub fn backward(&self, tau: &BitVector, upstream: ArrayView1<'_, f64>) -> Result<Array3<f64>> {
        let mut g = Array3::zeros(self.codebooks.dim());
        self.accumulate_backward(tau, upstream, &mut g)?;
        Ok(g)
    }
}
