//! Vector fields, discrete maps and sampled contractivity estimates.
//!
//! Lipschitz and one-sided Lipschitz constants are sups over the state
//! space; here they are estimated by evaluating Jacobians at sample points of
//! a user-supplied box. Every such estimate is a lower bound of the true sup
//! and is labelled [`SAMPLED_LABEL`]. Certified statements come only from the
//! [`certificates`](crate::certificates) module.
//!
//! The pointwise (differential) and pairwise (integral) conditions of the
//! ℓ1 / ℓ2,P / ℓ∞ contractivity table are available both at single points
//! and as sampled sups.

use std::sync::Arc;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::norms::{self, log_norm, matrix_norm, vector_norm, Matrix, NormSpec, Vector};
use crate::serde_rows;

/// Label attached to every sampled estimate.
pub const SAMPLED_LABEL: &str = "lower bound (sampling)";

/// Relative tolerance for membership in the tie set `I∞(v)`.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub type FieldFn = Arc<dyn Fn(&Vector, Option<&Vector>) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector, Option<&Vector>) -> Matrix + Send + Sync>;

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoxDomain {
    lo: Vector,
    hi: Vector,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxRepr> for BoxDomain {
    type Error = Error;
    fn try_from(r: BoxRepr) -> Result<Self> {
        BoxDomain::new(Vector::from_vec(r.lo), Vector::from_vec(r.hi))
    }
}

impl From<BoxDomain> for BoxRepr {
    fn from(b: BoxDomain) -> Self {
        BoxRepr { lo: b.lo.as_slice().to_vec(), hi: b.hi.as_slice().to_vec() }
    }
}

impl BoxDomain {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.is_empty() {
            return Err(Error::InvalidArgument("domain has dimension zero".into()));
        }
        if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] < hi[i])) {
            return Err(Error::InvalidArgument(format!("domain bound {i} is empty: lo = {}, hi = {}", lo[i], hi[i])));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-r, r]ⁿ`.
    pub fn symmetric(n: usize, radius: f64) -> Result<Self> {
        Self::new(Vector::from_element(n, -radius), Vector::from_element(n, radius))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Vector {
        &self.lo
    }

    pub fn hi(&self) -> &Vector {
        &self.hi
    }

    pub fn center(&self) -> Vector {
        (&self.lo + &self.hi) * 0.5
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        (&self.hi - &self.lo).norm()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim() && (0..x.len()).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }

    /// Per-axis distance from `x` to the nearest face.
    pub fn clearance(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.dim(), |i, _| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
    }

    pub fn clamp(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.dim(), |i, _| x[i].clamp(self.lo[i], self.hi[i]))
    }

    /// Point at fractional coordinates `t ∈ [0, 1]ⁿ`.
    pub fn at_fraction(&self, t: &[f64]) -> Vector {
        Vector::from_fn(self.dim(), |i, _| self.lo[i] + t[i] * (self.hi[i] - self.lo[i]))
    }
}

/// How the Jacobian of a field or map is obtained.
#[derive(Clone)]
pub enum JacobianProvider {
    Analytic(JacobianFn),
    /// Central differences with step `1e-5·(1 + ‖x‖∞)`.
    FiniteDifference,
}

/// Shared representation of a smooth map `ℝⁿ → ℝⁿ`, optionally with a
/// parameter `θ ∈ ℝᵐ`.
#[derive(Clone)]
struct SmoothMap {
    dim: usize,
    evaluator: FieldFn,
    jacobian: JacobianProvider,
    param_jacobian: Option<JacobianFn>,
    domain: BoxDomain,
    parameter_domain: Option<BoxDomain>,
    nominal_param: Option<Vector>,
}

/// A continuous-time system `ẋ = F(x)` or `ẋ = F(x, θ)`.
#[derive(Clone)]
pub struct VectorFieldSpec {
    map: SmoothMap,
}

/// A discrete-time system `x_{k+1} = F(x_k)`.
#[derive(Clone)]
pub struct DiscreteMapSpec {
    map: SmoothMap,
}

/// Common surface of vector fields and discrete maps.
pub trait Differentiable: Send + Sync {
    fn dim(&self) -> usize;
    fn domain(&self) -> &BoxDomain;
    fn eval(&self, x: &Vector) -> Result<Vector>;
    fn jacobian_at(&self, x: &Vector) -> Result<Matrix>;
}

pub(crate) fn finite_difference_step(x: &Vector) -> f64 {
    1e-5 * (1.0 + x.amax())
}

fn check_finite_vec(x: &Vector, at: &Vector) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::EvaluationFailed(at.as_slice().to_vec()))
    }
}

impl SmoothMap {
    fn eval(&self, x: &Vector, theta: Option<&Vector>) -> Result<Vector> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let theta = theta.or(self.nominal_param.as_ref());
        let y = (self.evaluator)(x, theta);
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: y.len() });
        }
        check_finite_vec(&y, x)?;
        Ok(y)
    }

    fn jacobian(&self, x: &Vector, theta: Option<&Vector>) -> Result<Matrix> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        if !self.domain.contains(x) {
            log::warn!("jacobian requested outside the domain box at {:?}", x.as_slice());
        }
        let theta = theta.or(self.nominal_param.as_ref());
        match &self.jacobian {
            JacobianProvider::Analytic(jac) => {
                let j = jac(x, theta);
                if j.shape() != (self.dim, self.dim) {
                    return Err(Error::DimensionMismatch { expected: self.dim, found: j.nrows() });
                }
                if j.iter().any(|v| !v.is_finite()) {
                    return Err(Error::EvaluationFailed(x.as_slice().to_vec()));
                }
                Ok(j)
            }
            JacobianProvider::FiniteDifference => {
                let h = finite_difference_step(x);
                let mut j = Matrix::zeros(self.dim, self.dim);
                for k in 0..self.dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let col = (self.eval(&xp, theta)? - self.eval(&xm, theta)?) / (2.0 * h);
                    j.set_column(k, &col);
                }
                Ok(j)
            }
        }
    }

    fn param_jacobian(&self, x: &Vector, theta: &Vector) -> Result<Matrix> {
        if let Some(jac) = &self.param_jacobian {
            return Ok(jac(x, Some(theta)));
        }
        let h = finite_difference_step(theta);
        let mut j = Matrix::zeros(self.dim, theta.len());
        for k in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let col = (self.eval(x, Some(&tp))? - self.eval(x, Some(&tm))?) / (2.0 * h);
            j.set_column(k, &col);
        }
        Ok(j)
    }
}

impl VectorFieldSpec {
    /// Field with a finite-difference Jacobian.
    pub fn new<F>(dim: usize, f: F, domain: BoxDomain) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::parametric(dim, move |x, _| f(x), domain, None)
    }

    /// Field `F(x, θ)`. `parameter_domain` describes where θ ranges.
    pub fn parametric<F>(dim: usize, f: F, domain: BoxDomain, parameter_domain: Option<BoxDomain>) -> Result<Self>
    where
        F: Fn(&Vector, Option<&Vector>) -> Vector + Send + Sync + 'static,
    {
        if domain.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: domain.dim() });
        }
        let nominal_param = parameter_domain.as_ref().map(BoxDomain::center);
        Ok(Self {
            map: SmoothMap {
                dim,
                evaluator: Arc::new(f),
                jacobian: JacobianProvider::FiniteDifference,
                param_jacobian: None,
                domain,
                parameter_domain,
                nominal_param,
            },
        })
    }

    /// `F(x) = Ax + a` with its exact Jacobian.
    pub fn affine(a: Matrix, offset: Vector, domain: BoxDomain) -> Result<Self> {
        norms::check_square(&a)?;
        if offset.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), found: offset.len() });
        }
        let jac = a.clone();
        Ok(Self::new(a.nrows(), move |x| &a * x + &offset, domain)?.with_jacobian(move |_| jac.clone()))
    }

    pub fn with_jacobian<J>(self, jac: J) -> Self
    where
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.with_parametric_jacobian(move |x, _| jac(x))
    }

    pub fn with_parametric_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, Option<&Vector>) -> Matrix + Send + Sync + 'static,
    {
        self.map.jacobian = JacobianProvider::Analytic(Arc::new(jac));
        self
    }

    /// Analytic `∂F/∂θ`; finite differences are used otherwise.
    pub fn with_param_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.map.param_jacobian = Some(Arc::new(move |x, t| jac(x, t.expect("parameter"))));
        self
    }

    pub fn with_nominal_param(mut self, theta: Vector) -> Self {
        self.map.nominal_param = Some(theta);
        self
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Result<Self> {
        if domain.dim() != self.map.dim {
            return Err(Error::DimensionMismatch { expected: self.map.dim, found: domain.dim() });
        }
        self.map.domain = domain;
        Ok(self)
    }

    /// Drops any analytic Jacobian in favour of central differences.
    pub fn with_finite_differences(mut self) -> Self {
        self.map.jacobian = JacobianProvider::FiniteDifference;
        self
    }

    pub fn parameter_domain(&self) -> Option<&BoxDomain> {
        self.map.parameter_domain.as_ref()
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        matches!(self.map.jacobian, JacobianProvider::Analytic(_))
    }

    pub fn eval_with(&self, x: &Vector, theta: Option<&Vector>) -> Result<Vector> {
        self.map.eval(x, theta)
    }

    pub fn jacobian_with(&self, x: &Vector, theta: Option<&Vector>) -> Result<Matrix> {
        self.map.jacobian(x, theta)
    }

    /// `∂F/∂θ` at `(x, θ)`.
    pub fn param_jacobian_at(&self, x: &Vector, theta: &Vector) -> Result<Matrix> {
        self.map.param_jacobian(x, theta)
    }

    /// The autonomous field `x ↦ F(x, θ)` for fixed `θ`.
    pub fn frozen(&self, theta: Vector) -> Self {
        let mut map = self.map.clone();
        map.nominal_param = Some(theta);
        Self { map }
    }

    pub(crate) fn into_discrete(self) -> DiscreteMapSpec {
        DiscreteMapSpec { map: self.map }
    }
}

impl DiscreteMapSpec {
    pub fn new<F>(dim: usize, f: F, domain: BoxDomain) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        VectorFieldSpec::new(dim, f, domain).map(VectorFieldSpec::into_discrete)
    }

    pub fn affine(a: Matrix, offset: Vector, domain: BoxDomain) -> Result<Self> {
        VectorFieldSpec::affine(a, offset, domain).map(VectorFieldSpec::into_discrete)
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.map.jacobian = JacobianProvider::Analytic(Arc::new(move |x, _| jac(x)));
        self
    }

    pub fn with_finite_differences(mut self) -> Self {
        self.map.jacobian = JacobianProvider::FiniteDifference;
        self
    }
}

macro_rules! impl_differentiable {
    ($t:ty) => {
        impl Differentiable for $t {
            fn dim(&self) -> usize {
                self.map.dim
            }
            fn domain(&self) -> &BoxDomain {
                &self.map.domain
            }
            fn eval(&self, x: &Vector) -> Result<Vector> {
                self.map.eval(x, None)
            }
            fn jacobian_at(&self, x: &Vector) -> Result<Matrix> {
                self.map.jacobian(x, None)
            }
        }
    };
}

impl_differentiable!(VectorFieldSpec);
impl_differentiable!(DiscreteMapSpec);

/// Where to evaluate Jacobians inside the domain box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Sampler {
    UniformGrid { points_per_axis: usize },
    LatinHypercube { count: usize, seed: u64 },
    RandomUniform { count: usize, seed: u64 },
}

impl Sampler {
    /// 11 points per axis up to three dimensions, 2000 Latin hypercube
    /// samples above that.
    pub fn default_for(dim: usize) -> Self {
        if dim <= 3 {
            Sampler::UniformGrid { points_per_axis: 11 }
        } else {
            Sampler::LatinHypercube { count: 2000, seed: 0 }
        }
    }

    /// A grid with twice the resolution that contains every node of `self`.
    pub fn refined(&self) -> Self {
        match *self {
            // a single node sits at the centre, which is node 1 of a 3-grid
            Sampler::UniformGrid { points_per_axis: k } => {
                Sampler::UniformGrid { points_per_axis: if k <= 1 { 3 } else { 2 * k - 1 } }
            }
            Sampler::LatinHypercube { count, seed } => Sampler::LatinHypercube { count: 2 * count, seed },
            Sampler::RandomUniform { count, seed } => Sampler::RandomUniform { count: 2 * count, seed },
        }
    }

    pub fn count(&self, dim: usize) -> usize {
        match *self {
            Sampler::UniformGrid { points_per_axis } => points_per_axis.saturating_pow(dim as u32),
            Sampler::LatinHypercube { count, .. } | Sampler::RandomUniform { count, .. } => count,
        }
    }

    pub fn points(&self, domain: &BoxDomain) -> Result<Vec<Vector>> {
        let n = domain.dim();
        if self.count(n) == 0 {
            return Err(Error::EmptySample);
        }
        Ok(match *self {
            Sampler::UniformGrid { points_per_axis: k } => {
                let frac = |i: usize| if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
                let total = self.count(n);
                (0..total)
                    .map(|mut idx| {
                        let t: Vec<f64> = (0..n)
                            .map(|_| {
                                let i = idx % k;
                                idx /= k;
                                frac(i)
                            })
                            .collect();
                        domain.at_fraction(&t)
                    })
                    .collect()
            }
            Sampler::LatinHypercube { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let strata: Vec<Vec<usize>> = (0..n)
                    .map(|_| {
                        let mut p: Vec<usize> = (0..count).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect();
                (0..count)
                    .map(|s| {
                        let t: Vec<f64> =
                            (0..n).map(|d| (strata[d][s] as f64 + rng.random::<f64>()) / count as f64).collect();
                        domain.at_fraction(&t)
                    })
                    .collect()
            }
            Sampler::RandomUniform { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count)
                    .map(|_| {
                        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                        domain.at_fraction(&t)
                    })
                    .collect()
            }
        })
    }
}

/// A sampled sup; never a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledEstimate {
    pub value: f64,
    #[serde(with = "serde_rows::vector")]
    pub argmax: Vector,
    pub samples: usize,
    pub label: String,
}

impl SampledEstimate {
    fn new(value: f64, argmax: Vector, samples: usize) -> Self {
        Self { value, argmax, samples, label: SAMPLED_LABEL.to_string() }
    }

    pub fn is_certified(&self) -> bool {
        false
    }
}

/// Max of `g` over the points, with the maximizing point.
pub(crate) fn sampled_max<G>(points: &[Vector], g: G) -> Result<(f64, Vector)>
where
    G: Fn(&Vector) -> Result<f64> + Sync + Send,
{
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    let values = exec::try_map(points, |x| g(x))?;
    let (idx, &value) =
        values.iter().enumerate().fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
    Ok((value, points[idx].clone()))
}

/// Sampled `sup_x ‖DF(x)‖`.
pub fn estimate_lip<F: Differentiable>(f: &F, spec: &NormSpec, sampler: &Sampler) -> Result<SampledEstimate> {
    let points = sampler.points(f.domain())?;
    let (value, argmax) = sampled_max(&points, |x| matrix_norm(&f.jacobian_at(x)?, spec))?;
    Ok(SampledEstimate::new(value, argmax, points.len()))
}

/// Sampled `osL(F) = sup_x μ(DF(x))`.
pub fn estimate_osl<F: Differentiable>(f: &F, spec: &NormSpec, sampler: &Sampler) -> Result<SampledEstimate> {
    let points = sampler.points(f.domain())?;
    let (value, argmax) = sampled_max(&points, |x| log_norm(&f.jacobian_at(x)?, spec))?;
    Ok(SampledEstimate::new(value, argmax, points.len()))
}

/// Indices `i` with `|v_i| = ‖v‖∞` up to `rel_tol·‖v‖∞`.
pub fn tie_set(v: &Vector, rel_tol: f64) -> Vec<usize> {
    let m = v.amax();
    (0..v.len()).filter(|&i| v[i].abs() >= m - rel_tol * m).collect()
}

fn entrywise_sign(v: &Vector) -> Vector {
    v.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// The quotient `b` attained by the integral (one-sided Lipschitz) condition
/// at the pair `(x, y)`:
///
/// * ℓ2,P: `(x−y)ᵀP(F(x)−F(y)) / ‖x−y‖²_{2,P}`
/// * ℓ1:   `sign(x−y)ᵀ(F(x)−F(y)) / ‖x−y‖₁`
/// * ℓ∞:   `max_{i∈I∞(x−y)} (x_i−y_i)(F_i(x)−F_i(y)) / ‖x−y‖²∞`
pub fn one_sided_pair_quotient<F: Differentiable>(f: &F, spec: &NormSpec, x: &Vector, y: &Vector) -> Result<f64> {
    let d = x - y;
    if d.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("pair quotient needs x != y".into()));
    }
    let df = f.eval(x)? - f.eval(y)?;
    table_quotient(spec, &d, &df, "one_sided_pair_quotient")
}

/// The quotient of the differential (Demidovich-type) condition at `x`
/// along `v`, i.e. [`one_sided_pair_quotient`] with `F(x)−F(y)` replaced by
/// `DF(x)v`.
pub fn differential_condition_residual<F: Differentiable>(
    f: &F,
    spec: &NormSpec,
    x: &Vector,
    v: &Vector,
) -> Result<f64> {
    let j = f.jacobian_at(x)?;
    differential_quotient(&j, spec, v)
}

fn differential_quotient(j: &Matrix, spec: &NormSpec, v: &Vector) -> Result<f64> {
    if v.iter().all(|t| *t == 0.0) {
        return Err(Error::InvalidArgument("direction v must be nonzero".into()));
    }
    table_quotient(spec, v, &(j * v), "differential_condition_residual")
}

fn table_quotient(spec: &NormSpec, d: &Vector, w: &Vector, op: &'static str) -> Result<f64> {
    spec.check_dim(d.len())?;
    match spec {
        NormSpec::L1 => Ok(entrywise_sign(d).dot(w) / vector_norm(d, spec)?),
        NormSpec::L2 => Ok(d.dot(w) / d.norm_squared()),
        NormSpec::WeightedL2(weight) => {
            let p = weight.matrix();
            Ok(d.dot(&(p * w)) / d.dot(&(p * d)))
        }
        NormSpec::Linf => {
            let m = d.amax();
            let best = tie_set(d, TIE_TOLERANCE).into_iter().map(|i| d[i] * w[i]).fold(f64::NEG_INFINITY, f64::max);
            Ok(best / (m * m))
        }
        _ => Err(Error::UnsupportedNorm { operation: op, norm: spec.name().to_string() }),
    }
}

/// Probe directions for the table sups: Gaussian directions, all sign
/// vectors (the vertices of the ℓ∞ ball, where the ℓ∞ quotient peaks) and
/// unit vectors nudged into every orthant (the ℓ1 quotient peaks in the
/// limit toward a vertex of the ℓ1 ball from inside an orthant).
pub fn probe_directions(n: usize, random: usize, seed: u64) -> Vec<Vector> {
    const MAX_ENUMERATED_DIM: usize = 10;
    const NUDGE: f64 = 1e-7;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vector> =
        (0..random).map(|_| Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
    let patterns: Vec<Vector> = if n <= MAX_ENUMERATED_DIM {
        (0..(1u32 << n)).map(|mask| Vector::from_fn(n, |i, _| if mask & (1 << i) != 0 { 1.0 } else { -1.0 })).collect()
    } else {
        (0..1024).map(|_| Vector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })).collect()
    };
    for s in &patterns {
        dirs.push(s.clone());
        for j in 0..n {
            if s[j] < 0.0 {
                continue;
            }
            let mut v = s * NUDGE;
            v[j] = 1.0;
            dirs.push(v);
        }
    }
    dirs
}

/// Points whose best probe direction is refined by compass search.
const REFINE_CANDIDATES: usize = 8;

/// Configuration for sampled sups of the table conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSampling {
    /// Random Gaussian directions per base point (differential condition).
    pub random_directions: usize,
    /// Independent uniform pairs in the box.
    pub far_pairs: usize,
    /// Pairs at distance ≈ `near_fraction · diameter`.
    pub near_pairs: usize,
    pub near_fraction: f64,
    /// Locally refine the best direction by compass search.
    pub refine: bool,
    pub seed: u64,
}

impl Default for ConditionSampling {
    fn default() -> Self {
        Self { random_directions: 64, far_pairs: 500, near_pairs: 500, near_fraction: 1e-3, refine: true, seed: 0 }
    }
}

/// Sampled sup over `(x, v)` of [`differential_condition_residual`]:
/// `x` from `sampler`, `v` from [`probe_directions`], followed by a compass
/// search over `v` at the best few points.
pub fn differential_condition_sup<F: Differentiable>(
    f: &F,
    spec: &NormSpec,
    sampler: &Sampler,
    config: &ConditionSampling,
) -> Result<SampledEstimate> {
    let n = f.dim();
    let points = sampler.points(f.domain())?;
    let dirs = probe_directions(n, config.random_directions, config.seed);
    let per_point = exec::try_map(&points, |x| -> Result<(f64, Vector, Matrix)> {
        let j = f.jacobian_at(x)?;
        let mut best = (f64::NEG_INFINITY, dirs[0].clone());
        for v in &dirs {
            let q = differential_quotient(&j, spec, v)?;
            if q > best.0 {
                best = (q, v.clone());
            }
        }
        Ok((best.0, best.1, j))
    })?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| per_point[b].0.total_cmp(&per_point[a].0));
    let mut values: Vec<f64> = per_point.iter().map(|p| p.0).collect();
    if config.refine {
        let top = &order[..order.len().min(REFINE_CANDIDATES)];
        let refined = exec::map(top, |&i| {
            let (q, v, j) = &per_point[i];
            norms::pattern_search(v.clone(), *q, |v| differential_quotient(j, spec, v).unwrap_or(f64::NEG_INFINITY)).1
        });
        for (&i, q) in top.iter().zip(refined) {
            values[i] = q;
        }
    }
    let (idx, value) =
        values
            .iter()
            .enumerate()
            .map(|(i, q)| (i, *q))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Ok(SampledEstimate::new(value, points[idx].clone(), points.len() * dirs.len()))
}

/// Result of a sampled sweep of the integral condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub value: f64,
    #[serde(with = "serde_rows::vector")]
    pub x: Vector,
    #[serde(with = "serde_rows::vector")]
    pub y: Vector,
    pub pairs: usize,
    pub label: String,
}

/// Sampled sup of [`one_sided_pair_quotient`] over far pairs, short pairs
/// (probing the differential limit) and short pairs along
/// [`probe_directions`] at the box centre, with an optional compass search
/// over the direction of the best short pair.
pub fn pair_condition_sup<F: Differentiable>(
    f: &F,
    spec: &NormSpec,
    config: &ConditionSampling,
) -> Result<PairEstimate> {
    let domain = f.domain();
    let n = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa5a5_5a5a);
    let uniform = |rng: &mut ChaCha8Rng| {
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        domain.at_fraction(&t)
    };
    let radius = config.near_fraction * domain.diameter();
    let short_pair = |x: &Vector, dir: &Vector| -> (Vector, Vector) {
        let step = dir * (radius / dir.norm());
        let y = x + &step;
        if domain.contains(&y) {
            (x.clone(), y)
        } else {
            (x.clone(), domain.clamp(&(x - step)))
        }
    };
    let mut pairs: Vec<(Vector, Vector)> = Vec::with_capacity(config.far_pairs + config.near_pairs);
    for _ in 0..config.far_pairs {
        let x = uniform(&mut rng);
        let y = uniform(&mut rng);
        pairs.push((x, y));
    }
    for _ in 0..config.near_pairs {
        let x = uniform(&mut rng);
        let dir = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        pairs.push(short_pair(&x, &dir));
    }
    let center = domain.center();
    for dir in probe_directions(n, 0, config.seed) {
        pairs.push(short_pair(&center, &dir));
    }
    pairs.retain(|(x, y)| x != y);
    if pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    let values = exec::try_map(&pairs, |(x, y)| one_sided_pair_quotient(f, spec, x, y))?;
    let mut best_idx = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best_idx] {
            best_idx = i;
        }
    }
    let (mut bx, mut by) = pairs[best_idx].clone();
    let mut best = values[best_idx];
    if config.refine {
        let sep = (&by - &bx).norm().min(radius.max(1e-12));
        let base = bx.clone();
        let dir0 = &by - &bx;
        let (dir, q) = norms::pattern_search(dir0.clone(), f64::NEG_INFINITY, |d| {
            if d.norm() == 0.0 {
                return f64::NEG_INFINITY;
            }
            let y = &base + d * (sep / d.norm());
            one_sided_pair_quotient(f, spec, &y, &base).unwrap_or(f64::NEG_INFINITY)
        });
        if q > best && dir.norm() > 0.0 {
            best = q;
            bx = &base + &dir * (sep / dir.norm());
            by = base;
        }
    }
    Ok(PairEstimate { value: best, x: bx, y: by, pairs: pairs.len(), label: SAMPLED_LABEL.to_string() })
}
