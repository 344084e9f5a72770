//! Random test problems shared by the integration tests.
#![allow(dead_code)]

use contraction_core::norms::spectral_abscissa;
use contraction_core::{Matrix, NormSpec, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// `BBᵀ + ½I` with B uniform in [−1, 1].
pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let b = uniform_matrix(rng, n, n, -1.0, 1.0);
    &b * b.transpose() + Matrix::identity(n, n) * 0.5
}

pub fn positive_weights(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    uniform_vector(rng, n, 0.5, 2.0)
}

/// The five norm specs of the closed-form log-norm table, weights random.
pub fn five_specs(rng: &mut ChaCha8Rng, n: usize) -> Vec<NormSpec> {
    vec![
        NormSpec::L1,
        NormSpec::L2,
        NormSpec::Linf,
        NormSpec::weighted_l2(spd(rng, n)).unwrap(),
        NormSpec::weighted_linf(positive_weights(rng, n)).unwrap(),
    ]
}

/// A random matrix shifted so that its spectral abscissa is in [−2, −0.5].
pub fn hurwitz(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = uniform_matrix(rng, n, n, -2.0, 2.0);
    let alpha = spectral_abscissa(&a).unwrap();
    let target = rng.random_range(0.5..2.0);
    a - Matrix::identity(n, n) * (alpha + target)
}

/// Nonnegative off-diagonal entries, shifted to abscissa in [−1, −0.2].
pub fn hurwitz_metzler(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut a = uniform_matrix(rng, n, n, 0.0, 1.0);
    for i in 0..n {
        a[(i, i)] = rng.random_range(-2.0..0.0);
    }
    let alpha = spectral_abscissa(&a).unwrap();
    let target = rng.random_range(0.2..1.0);
    a - Matrix::identity(n, n) * (alpha + target)
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize, radius: f64) -> Vec<(Vector, Vector)> {
    (0..count).map(|_| (uniform_vector(rng, n, -radius, radius), uniform_vector(rng, n, -radius, radius))).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}
