use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::{normal_init, INIT_STD};
use crate::error::{Error, Result};
use crate::hashing::BitVector;

/// `d` learnable pseudo-axes of length `T`, stored as a `d x T` matrix.
///
/// Output coordinate `j` is the Pearson correlation between the bit vector
/// and axis `j`, so every coordinate lies in `[-1, 1]`. When either
/// centered vector has zero norm the coordinate (and its gradient) is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjParams {
    axes: Array2<f64>,
}

/// Centered copy and its Euclidean norm.
fn center(v: ArrayView1<'_, f64>) -> (Array1<f64>, f64) {
    let mean = v.mean().unwrap_or(0.0);
    let c = v.mapv(|x| x - mean);
    let norm = c.dot(&c).sqrt();
    (c, norm)
}

impl ProjParams {
    pub fn new(axes: Array2<f64>) -> Result<Self> {
        if axes.nrows() == 0 || axes.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!("axes {:?}", axes.dim())));
        }
        Ok(Self { axes })
    }

    pub fn init<R: Rng + ?Sized>(n_bits: usize, d: usize, rng: &mut R) -> Result<Self> {
        Self::new(normal_init((d, n_bits), INIT_STD, rng))
    }

    pub fn n_bits(&self) -> usize {
        self.axes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.axes.nrows()
    }

    pub fn axes(&self) -> &Array2<f64> {
        &self.axes
    }

    pub fn axes_mut(&mut self) -> &mut Array2<f64> {
        &mut self.axes
    }

    fn centered_tau(&self, tau: &BitVector) -> Result<(Array1<f64>, f64)> {
        if tau.len() != self.n_bits() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bits, got {}",
                self.n_bits(),
                tau.len()
            )));
        }
        Ok(center(Array1::from(tau.to_f64()).view()))
    }

    pub fn forward(&self, tau: &BitVector) -> Result<Array1<f64>> {
        let (a, a_norm) = self.centered_tau(tau)?;
        Ok(self.forward_centered(&a, a_norm))
    }

    fn forward_centered(&self, a: &Array1<f64>, a_norm: f64) -> Array1<f64> {
        Array1::from_iter(self.axes.rows().into_iter().map(|w| {
            let (u, u_norm) = center(w);
            if a_norm == 0.0 || u_norm == 0.0 {
                0.0
            } else {
                (a.dot(&u) / (a_norm * u_norm)).clamp(-1.0, 1.0)
            }
        }))
    }

    /// `d e_j / d w^j = a / (|a| |u|) - e_j u / |u|^2` with `a`, `u` the
    /// centered bit vector and axis. Both are already centered, so the
    /// centering Jacobian leaves this unchanged.
    pub fn accumulate_backward(
        &self,
        tau: &BitVector,
        upstream: ArrayView1<'_, f64>,
        grads: &mut Array2<f64>,
    ) -> Result<()> {
        let (a, a_norm) = self.centered_tau(tau)?;
        if upstream.len() != self.dim() || grads.dim() != self.axes.dim() {
            return Err(Error::ShapeMismatch("proj gradient".into()));
        }
        if a_norm == 0.0 {
            return Ok(());
        }
        for ((w, mut dw), &g) in self
            .axes
            .rows()
            .into_iter()
            .zip(grads.rows_mut())
            .zip(upstream.iter())
        {
            if g == 0.0 {
                continue;
            }
            let (u, u_norm) = center(w);
            if u_norm == 0.0 {
                continue;
            }
            let e = a.dot(&u) / (a_norm * u_norm);
            let scale_a = g / (a_norm * u_norm);
            let scale_u = g * e / (u_norm * u_norm);
            dw.zip_mut_with(&a, |d, &ai| *d += scale_a * ai);
            dw.zip_mut_with(&u, |d, &ui| *d -= scale_u * ui);
        }
        Ok(())
    }

    pub fn backward(&self, tau: &BitVector, upstream: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        let mut g = Array2::zeros(self.axes.dim());
        self.accumulate_backward(tau, upstream, &mut g)?;
        Ok(g)
    }
}
