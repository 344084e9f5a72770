//! Vector norms, induced matrix norms, matrix log norms and spectral bounds.
//!
//! Every supported norm has a closed form for the induced matrix norm and
//! log norm:
//!
//! ```text
//! ℓ1:        ‖A‖ = max_j Σ_i |a_ij|          μ(A) = max_j (a_jj + Σ_{i≠j} |a_ij|)
//! ℓ∞:        ‖A‖ = max_i Σ_j |a_ij|          μ(A) = max_i (a_ii + Σ_{j≠i} |a_ij|)
//! ℓ2:        ‖A‖ = σ_max(A)                  μ(A) = λ_max((A + Aᵀ)/2)
//! ℓ2,P:      ‖A‖ = ‖ΘAΘ⁻¹‖₂                  μ(A) = μ₂(ΘAΘ⁻¹),  P = ΘᵀΘ
//! ℓ∞,η:      ‖A‖ = max_i Σ_j |a_ij| η_j/η_i  μ(A) = max_i (a_ii + Σ_{j≠i} |a_ij| η_j/η_i)
//! ```
//!
//! with `‖x‖_{2,P} = (xᵀPx)^{1/2}` and `‖x‖_{∞,η} = max_i |x_i|/η_i`.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_rows;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative slack used for symmetric positive semidefiniteness tests.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Relative asymmetry accepted in a weighted-ℓ2 weight before rejecting it.
const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Step sequence used by [`log_norm_limit_oracle`] when none is supplied.
pub const DEFAULT_ORACLE_STEPS: [f64; 3] = [1e-4, 1e-6, 1e-8];

/// Which norm on ℝⁿ governs a computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormRepr", into = "NormRepr")]
pub enum NormSpec {
    L1,
    L2,
    Linf,
    Lp(f64),
    WeightedL2(L2Weight),
    WeightedLinf(LinfWeight),
}

/// A symmetric positive definite weight `P` together with its symmetric
/// square root `Θ` (so that `P = ΘᵀΘ = Θ²`) and `Θ⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct L2Weight {
    p: Matrix,
    theta: Matrix,
    theta_inv: Matrix,
}

/// An entrywise positive weight vector `η`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinfWeight {
    eta: Vector,
}

impl L2Weight {
    pub fn new(p: Matrix) -> Result<Self> {
        check_square(&p)?;
        let scale = 1.0 + p.amax();
        for i in 0..p.nrows() {
            for j in 0..i {
                if (p[(i, j)] - p[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::InvalidArgument(format!("weight matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let p = (&p + p.transpose()) * 0.5;
        let is_diagonal = (0..p.nrows()).all(|i| (0..p.ncols()).all(|j| i == j || p[(i, j)] == 0.0));
        if is_diagonal {
            // Exact factor; keeps P = I bit-identical to the plain ℓ2 path.
            if let Some(&d) = p.diagonal().iter().find(|d| !(**d > 0.0)) {
                return Err(Error::NotPositiveDefinite { min_eigenvalue: d });
            }
            let theta = Matrix::from_diagonal(&p.diagonal().map(f64::sqrt));
            let theta_inv = Matrix::from_diagonal(&p.diagonal().map(|d| 1.0 / d.sqrt()));
            return Ok(Self { p, theta, theta_inv });
        }
        let eig = SymmetricEigen::new(p.clone());
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let v = &eig.eigenvectors;
        let theta = v * Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
        let theta_inv = v * Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * v.transpose();
        Ok(Self { p, theta, theta_inv })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    /// Symmetric square root `Θ` with `ΘᵀΘ = P`.
    pub fn sqrt(&self) -> &Matrix {
        &self.theta
    }

    pub fn sqrt_inv(&self) -> &Matrix {
        &self.theta_inv
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `ΘAΘ⁻¹`, the matrix whose plain ℓ2 quantities give the weighted ones.
    pub fn transform(&self, a: &Matrix) -> Matrix {
        &self.theta * a * &self.theta_inv
    }
}

impl LinfWeight {
    pub fn new(eta: Vector) -> Result<Self> {
        if let Some((index, &value)) = eta.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveWeight { index, value });
        }
        Ok(Self { eta })
    }

    pub fn vector(&self) -> &Vector {
        &self.eta
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }
}

impl NormSpec {
    pub fn weighted_l2(p: Matrix) -> Result<Self> {
        L2Weight::new(p).map(NormSpec::WeightedL2)
    }

    pub fn weighted_linf(eta: Vector) -> Result<Self> {
        LinfWeight::new(eta).map(NormSpec::WeightedLinf)
    }

    pub fn lp(p: f64) -> Result<Self> {
        if p > 1.0 && p.is_finite() {
            Ok(NormSpec::Lp(p))
        } else {
            Err(Error::InvalidExponent(p))
        }
    }

    /// Short name as used on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            NormSpec::L1 => "l1",
            NormSpec::L2 => "l2",
            NormSpec::Linf => "linf",
            NormSpec::Lp(_) => "lp",
            NormSpec::WeightedL2(_) => "wl2",
            NormSpec::WeightedLinf(_) => "winf",
        }
    }

    /// Dimension fixed by the weight, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            NormSpec::WeightedL2(w) => Some(w.dim()),
            NormSpec::WeightedLinf(w) => Some(w.dim()),
            _ => None,
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self.dim() {
            Some(expected) if expected != n => Err(Error::DimensionMismatch { expected, found: n }),
            _ => Ok(()),
        }
    }

    /// Half-width along each axis of the unit ball, i.e. `max{|x_i| : ‖x‖ ≤ 1}`.
    pub fn unit_ball_extent(&self, n: usize) -> Vector {
        match self {
            NormSpec::WeightedLinf(w) => w.eta.clone(),
            NormSpec::WeightedL2(w) => {
                let inv = w.theta_inv.transpose() * &w.theta_inv;
                inv.diagonal().map(|d| d.max(0.0).sqrt())
            }
            _ => Vector::from_element(n, 1.0),
        }
    }

    fn unsupported(&self, operation: &'static str) -> Error {
        Error::UnsupportedNorm { operation, norm: self.name().to_string() }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NormRepr {
    L1,
    L2,
    Linf,
    Lp { p: f64 },
    WeightedL2 { p: Vec<Vec<f64>> },
    WeightedLinf { eta: Vec<f64> },
}

impl TryFrom<NormRepr> for NormSpec {
    type Error = Error;

    fn try_from(r: NormRepr) -> Result<Self> {
        match r {
            NormRepr::L1 => Ok(NormSpec::L1),
            NormRepr::L2 => Ok(NormSpec::L2),
            NormRepr::Linf => Ok(NormSpec::Linf),
            NormRepr::Lp { p } => NormSpec::lp(p),
            NormRepr::WeightedL2 { p } => {
                let m = serde_rows::matrix_from_rows(&p).map_err(Error::InvalidArgument)?;
                NormSpec::weighted_l2(m)
            }
            NormRepr::WeightedLinf { eta } => NormSpec::weighted_linf(Vector::from_vec(eta)),
        }
    }
}

impl From<NormSpec> for NormRepr {
    fn from(n: NormSpec) -> Self {
        match n {
            NormSpec::L1 => NormRepr::L1,
            NormSpec::L2 => NormRepr::L2,
            NormSpec::Linf => NormRepr::Linf,
            NormSpec::Lp(p) => NormRepr::Lp { p },
            NormSpec::WeightedL2(w) => NormRepr::WeightedL2 { p: serde_rows::matrix_to_rows(&w.p) },
            NormSpec::WeightedLinf(w) => NormRepr::WeightedLinf { eta: w.eta.as_slice().to_vec() },
        }
    }
}

impl std::fmt::Display for L2Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", serde_rows::matrix_to_rows(&self.p))
    }
}

/// Spectral radius and spectral abscissa of a square matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub rho: f64,
    pub alpha: f64,
}

pub(crate) fn check_square(a: &Matrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() })
    }
}

pub fn vector_norm(v: &Vector, spec: &NormSpec) -> Result<f64> {
    spec.check_dim(v.len())?;
    Ok(match spec {
        NormSpec::L1 => v.iter().map(|x| x.abs()).sum(),
        NormSpec::L2 => v.norm(),
        NormSpec::Linf => v.amax(),
        NormSpec::Lp(p) => {
            // Scale by the largest entry so large and tiny vectors stay finite.
            let m = v.amax();
            if m == 0.0 {
                0.0
            } else {
                m * v.iter().map(|x| (x.abs() / m).powf(*p)).sum::<f64>().powf(1.0 / p)
            }
        }
        NormSpec::WeightedL2(w) => v.dot(&(&w.p * v)).max(0.0).sqrt(),
        NormSpec::WeightedLinf(w) => v.iter().zip(w.eta.iter()).map(|(x, e)| x.abs() / e).fold(0.0, f64::max),
    })
}

/// Row sums `Σ_j |a_ij| η_j/η_i`, optionally with the diagonal entry kept signed.
fn weighted_row_measure(a: &Matrix, eta: Option<&Vector>, signed_diagonal: bool) -> f64 {
    let n = a.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let ratio = eta.map_or(1.0, |e| e[j] / e[i]);
                    if i == j && signed_diagonal {
                        a[(i, i)]
                    } else {
                        a[(i, j)].abs() * ratio
                    }
                })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Largest eigenvalue of the symmetric part `(A + Aᵀ)/2`.
pub fn sym_max_eigenvalue(a: &Matrix) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.max()
}

/// Eigenvalues of a symmetric matrix (symmetrized first).
pub fn sym_eigenvalues(a: &Matrix) -> Vector {
    SymmetricEigen::new((a + a.transpose()) * 0.5).eigenvalues
}

/// Induced matrix norm of a square matrix.
pub fn matrix_norm(a: &Matrix, spec: &NormSpec) -> Result<f64> {
    check_square(a)?;
    spec.check_dim(a.nrows())?;
    Ok(match spec {
        NormSpec::L1 => weighted_row_measure(&a.transpose(), None, false),
        NormSpec::Linf => weighted_row_measure(a, None, false),
        NormSpec::L2 => spectral_norm(a),
        NormSpec::WeightedL2(w) => spectral_norm(&w.transform(a)),
        NormSpec::WeightedLinf(w) => weighted_row_measure(a, Some(&w.eta), false),
        NormSpec::Lp(_) => return Err(spec.unsupported("matrix_norm")),
    })
}

/// Matrix log norm `μ(A) = lim_{h→0⁺} (‖I + hA‖ − 1)/h`, via closed forms.
pub fn log_norm(a: &Matrix, spec: &NormSpec) -> Result<f64> {
    check_square(a)?;
    spec.check_dim(a.nrows())?;
    Ok(match spec {
        NormSpec::L1 => weighted_row_measure(&a.transpose(), None, true),
        NormSpec::Linf => weighted_row_measure(a, None, true),
        NormSpec::L2 => sym_max_eigenvalue(a),
        NormSpec::WeightedL2(w) => sym_max_eigenvalue(&w.transform(a)),
        NormSpec::WeightedLinf(w) => weighted_row_measure(a, Some(&w.eta), true),
        NormSpec::Lp(_) => return Err(spec.unsupported("log_norm")),
    })
}

/// Evaluates the limit definition of the log norm on a decreasing step
/// sequence and extrapolates the difference quotients linearly to `h = 0`.
pub fn log_norm_limit_oracle(a: &Matrix, spec: &NormSpec, steps: &[f64]) -> Result<f64> {
    check_square(a)?;
    if steps.is_empty() {
        return Err(Error::InvalidArgument("step sequence is empty".into()));
    }
    if steps.iter().any(|h| !(*h > 0.0)) || steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("steps must be positive and strictly decreasing".into()));
    }
    let n = a.nrows();
    let quotients = steps
        .iter()
        .map(|&h| {
            let m = Matrix::identity(n, n) + a * h;
            matrix_norm(&m, spec).map(|norm| (norm - 1.0) / h)
        })
        .collect::<Result<Vec<_>>>()?;
    if quotients.len() == 1 {
        return Ok(quotients[0]);
    }
    // Least-squares line q(h) = q0 + k h; q0 is the extrapolated limit.
    let count = steps.len() as f64;
    let mean_h = steps.iter().sum::<f64>() / count;
    let mean_q = quotients.iter().sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (h, q) in steps.iter().zip(&quotients) {
        sxy += (h - mean_h) * (q - mean_q);
        sxx += (h - mean_h) * (h - mean_h);
    }
    let slope = sxy / sxx;
    Ok(mean_q - slope * mean_h)
}

/// Eigenvalues of a general real square matrix via Hessenberg reduction and
/// shifted QR iteration.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex<f64>>> {
    check_square(a)?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenNonConvergence);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000).ok_or(Error::EigenNonConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_summary(a: &Matrix) -> Result<SpectralSummary> {
    let eig = eigenvalues(a)?;
    let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let alpha = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralSummary { rho, alpha })
}

/// Spectral abscissa `α(A)`.
pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    spectral_summary(a).map(|s| s.alpha)
}

/// True when the symmetric matrix `s` is negative semidefinite within the
/// scale-relative tolerance `λ_max ≤ 10⁻⁹·(1 + |λ_min|)`.
pub fn is_negative_semidefinite(s: &Matrix) -> bool {
    let eig = sym_eigenvalues(s);
    let max = eig.max();
    let min = eig.min();
    max <= PSD_TOLERANCE * (1.0 + min.abs())
}

/// True when the symmetric matrix `s` is positive semidefinite within tolerance.
pub fn is_positive_semidefinite(s: &Matrix) -> bool {
    is_negative_semidefinite(&-s)
}

/// Operator norm `sup_{‖x‖_in ≤ 1} ‖Mx‖_out` for a possibly rectangular `m`
/// between two (possibly different) norms.
///
/// Exact whenever the input ball is a polytope with few vertices or both
/// sides are ℓ2-type (after a change of variables); general ℓp combinations
/// fall back to a seeded sampling of the input unit sphere with local
/// refinement, which yields a lower bound.
pub fn operator_norm_between(m: &Matrix, input: &NormSpec, output: &NormSpec) -> Result<f64> {
    let (rows, cols) = m.shape();
    input.check_dim(cols)?;
    output.check_dim(rows)?;
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    const MAX_ENUMERATION_DIM: usize = 16;
    let out_norm = |x: &Vector| vector_norm(x, output);
    match input {
        NormSpec::L1 => {
            let mut best: f64 = 0.0;
            for j in 0..cols {
                best = best.max(out_norm(&m.column(j).into_owned())?);
            }
            Ok(best)
        }
        NormSpec::Linf | NormSpec::WeightedLinf(_) if cols <= MAX_ENUMERATION_DIM => {
            let extent = input.unit_ball_extent(cols);
            let mut best: f64 = 0.0;
            for mask in 0..(1u32 << cols) {
                let x = Vector::from_fn(cols, |j, _| if mask & (1 << j) != 0 { extent[j] } else { -extent[j] });
                best = best.max(out_norm(&(m * x))?);
            }
            Ok(best)
        }
        NormSpec::L2 | NormSpec::WeightedL2(_) => {
            let n = match input {
                NormSpec::WeightedL2(w) => m * &w.theta_inv,
                _ => m.clone(),
            };
            match output {
                NormSpec::L2 => Ok(spectral_norm_rect(&n)),
                NormSpec::WeightedL2(w) => Ok(spectral_norm_rect(&(&w.theta * n))),
                NormSpec::Linf | NormSpec::WeightedLinf(_) => {
                    let extent = output.unit_ball_extent(rows);
                    Ok((0..rows).map(|i| n.row(i).norm() / extent[i]).fold(0.0, f64::max))
                }
                NormSpec::L1 if rows <= MAX_ENUMERATION_DIM => {
                    let mut best: f64 = 0.0;
                    for mask in 0..(1u32 << rows) {
                        let s = Vector::from_fn(rows, |i, _| if mask & (1 << i) != 0 { 1.0 } else { -1.0 });
                        best = best.max((n.transpose() * s).norm());
                    }
                    Ok(best)
                }
                _ => sampled_operator_norm(m, input, output),
            }
        }
        _ => sampled_operator_norm(m, input, output),
    }
}

fn spectral_norm_rect(a: &Matrix) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.clone().svd(false, false).singular_values.max()
    }
}

fn sampled_operator_norm(m: &Matrix, input: &NormSpec, output: &NormSpec) -> Result<f64> {
    let cols = m.ncols();
    let ratio = |x: &Vector| -> Result<f64> {
        let d = vector_norm(x, input)?;
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok(vector_norm(&(m * x), output)? / d)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = Vector::zeros(cols);
    let mut best_val = f64::NEG_INFINITY;
    for _ in 0..4000 {
        let x = Vector::from_fn(cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = ratio(&x)?;
        if r > best_val {
            best_val = r;
            best = x;
        }
    }
    let (_, refined) = pattern_search(best, best_val, |x| ratio(x).unwrap_or(f64::NEG_INFINITY));
    Ok(refined)
}

/// Compass search maximizing `f` from `x0`; step halves after every
/// unsuccessful sweep until it reaches `1e-9` relative to `|x0|`.
pub(crate) fn pattern_search(x0: Vector, f0: f64, f: impl Fn(&Vector) -> f64) -> (Vector, f64) {
    let mut x = x0;
    let mut fx = f0;
    let scale = x.amax().max(1e-300);
    let mut step = 0.25 * scale;
    while step > 1e-9 * scale {
        let mut improved = false;
        for k in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] += sign * step;
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}
