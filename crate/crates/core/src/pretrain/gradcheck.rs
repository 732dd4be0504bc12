//! Central finite-difference checks of the embedding backward passes.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedkit::{
    AddParams, EmbVariant, EmbeddingMatrix, EmbeddingParams, HashCode, PoolParams, ProjParams,
};
use crate::error::{Error, Result};
use crate::hashing::BitVector;

/// Relative errors are measured against `max(|a|, |n|, ERROR_FLOOR)` so
/// coordinates with (near-)zero gradient do not divide by zero.
pub const ERROR_FLOOR: f64 = 1e-6;

/// Seed used by [`finite_diff_check`].
pub const DEFAULT_SEED: u64 = 0x6772_6164;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, perturbing one coordinate at a time. `params` is restored.
pub fn check_gradient(
    params: &mut [f64],
    analytic: &[f64],
    epsilon: f64,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::ShapeMismatch("gradient length".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + epsilon;
        let plus = loss(params)?;
        params[i] = orig - epsilon;
        let minus = loss(params)?;
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Max relative error of `d/dparams sum_m upstream_m e_m` for one code.
pub fn embedding_gradient_error(
    params: &EmbeddingParams,
    code: &HashCode,
    upstream: &Array1<f64>,
    epsilon: f64,
) -> Result<f64> {
    let mut grads = params.zeros_like();
    params.accumulate_backward(code, upstream.view(), &mut grads)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for (ti, a) in analytic.iter().enumerate() {
        let mut flat = work.tensors()[ti].to_vec();
        let err = check_gradient(&mut flat, a, epsilon, |values| {
            let mut probe = work.clone();
            probe.tensors_mut()[ti].copy_from_slice(values);
            Ok(probe.forward(code)?.dot(upstream))
        })?;
        work.tensors_mut()[ti].copy_from_slice(&flat);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn randn<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn random_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BitVector {
    BitVector::new((0..n).map(|_| rng.random::<bool>()).collect())
}

/// A random small instance of `variant` with unit-variance parameters, a
/// matching hash code, and a random upstream gradient.
pub fn random_instance<R: Rng + ?Sized>(
    variant: EmbVariant,
    rng: &mut R,
) -> Result<(EmbeddingParams, HashCode, Array1<f64>)> {
    let d = rng.random_range(1..=4);
    let (params, code) = match variant {
        EmbVariant::Emb => {
            let n = rng.random_range(1..=6);
            let m = Array2::from_shape_simple_fn((n, d), || randn(rng));
            let index = rng.random_range(0..n);
            (EmbeddingParams::Emb(EmbeddingMatrix::new(m)?), HashCode::Index(index))
        }
        EmbVariant::Pool => {
            let t = rng.random_range(2..=12);
            let k = rng.random_range(1..=t.min(4));
            let m = crate::embedkit::n_codewords(t, k);
            let b = Array2::from_shape_simple_fn((1 << k, d), || randn(rng));
            let w = Array2::from_shape_simple_fn((m, d), || randn(rng));
            (
                EmbeddingParams::Pool(PoolParams::new(b, w, k, t)?),
                HashCode::Bits(random_bits(t, rng)),
            )
        }
        EmbVariant::Add => {
            let t = rng.random_range(1..=10);
            let cb = Array3::from_shape_simple_fn((t, 2, d), || randn(rng));
            (
                EmbeddingParams::Add(AddParams::with_default_gamma(cb)?),
                HashCode::Bits(random_bits(t, rng)),
            )
        }
        EmbVariant::Proj => {
            let t = rng.random_range(2..=10);
            let axes = Array2::from_shape_simple_fn((d, t), || randn(rng));
            (
                EmbeddingParams::Proj(ProjParams::new(axes)?),
                HashCode::Bits(random_bits(t, rng)),
            )
        }
    };
    let upstream = Array1::from_shape_simple_fn(d, || randn(rng));
    Ok((params, code, upstream))
}

/// Maximum relative error between analytic and central-difference gradients
/// over `trials` random small instances.
pub fn finite_diff_check(variant: EmbVariant, trials: usize, epsilon: f64) -> Result<f64> {
    finite_diff_check_seeded(variant, trials, epsilon, DEFAULT_SEED)
}

pub fn finite_diff_check_seeded(variant: EmbVariant, trials: usize, epsilon: f64, seed: u64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (params, code, upstream) = random_instance(variant, &mut rng)?;
        worst = worst.max(embedding_gradient_error(&params, &code, &upstream, epsilon)?);
    }
    Ok(worst)
}
