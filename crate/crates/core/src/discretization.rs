//! Forward Euler maps, contracting step search and Banach iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::norms::{matrix_norm, vector_norm, Matrix, NormSpec, Vector};
use crate::serde_rows;
use crate::system::{estimate_osl, Differentiable, DiscreteMapSpec, Sampler, VectorFieldSpec, SAMPLED_LABEL};

/// `x ↦ x + αF(x)` with Jacobian `I + α·DF(x)`.
pub fn euler_map(f: &VectorFieldSpec, alpha: f64) -> Result<DiscreteMapSpec> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {alpha}")));
    }
    let n = f.dim();
    let (g, h) = (f.clone(), f.clone());
    let nan = Vector::from_element(n, f64::NAN);
    Ok(DiscreteMapSpec::new(
        n,
        move |x| g.eval(x).map(|fx| x + fx * alpha).unwrap_or_else(|_| nan.clone()),
        f.domain().clone(),
    )?
    .with_jacobian(move |x| match h.jacobian_at(x) {
        Ok(j) => Matrix::identity(n, n) + j * alpha,
        Err(_) => Matrix::from_element(n, n, f64::NAN),
    }))
}

/// Sampled Euler step search result. Factors are sampled Lipschitz
/// constants of the Euler map (lower bounds of the true sup).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSearch {
    /// Smallest grid step with factor < 1.
    pub first_alpha: f64,
    pub first_factor: f64,
    /// Step minimising the sampled factor.
    pub alpha: f64,
    pub factor: f64,
    pub samples: usize,
    pub label: String,
}

const STEP_GRID: usize = 64;
const STEP_GRID_DECADES: f64 = 6.0;
const GOLDEN_ITERATIONS: usize = 80;

/// Log grid over `(0, alpha_max]` followed by golden-section refinement of
/// the sampled Euler factor `max_x ‖I + α·DF(x)‖`. Returns `None` when the
/// sampled `osL` is nonnegative or no grid step contracts.
pub fn find_contracting_step(
    f: &VectorFieldSpec,
    spec: &NormSpec,
    alpha_max: f64,
    sampler: &Sampler,
) -> Result<Option<StepSearch>> {
    if !(alpha_max > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha_max must be positive, got {alpha_max}")));
    }
    if estimate_osl(f, spec, sampler)?.value >= 0.0 {
        return Ok(None);
    }
    let points = sampler.points(f.domain())?;
    let jacobians = exec::try_map(&points, |x| f.jacobian_at(x))?;
    let n = f.dim();
    let id = Matrix::identity(n, n);
    let factor = |alpha: f64| -> f64 {
        exec::map(&jacobians, |j| matrix_norm(&(&id + j * alpha), spec).unwrap_or(f64::INFINITY))
            .into_iter()
            .fold(0.0, f64::max)
    };
    let grid: Vec<f64> = (0..STEP_GRID)
        .map(|k| alpha_max * 10f64.powf(-STEP_GRID_DECADES * (1.0 - k as f64 / (STEP_GRID - 1) as f64)))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&a| factor(a)).collect();
    let Some(first) = values.iter().position(|&q| q < 1.0) else { return Ok(None) };
    let best = (0..STEP_GRID).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(first);
    let lo0 = if best == 0 { 0.0 } else { grid[best - 1] };
    let hi0 = if best + 1 == STEP_GRID { alpha_max } else { grid[best + 1] };
    let (mut lo, mut hi) = (lo0, hi0);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (factor(c), factor(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = factor(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = factor(d);
        }
    }
    let (mut alpha, mut fac) = (grid[best], values[best]);
    for (a, q) in [(c, fc), (d, fd)] {
        if q < fac && a > 0.0 {
            alpha = a;
            fac = q;
        }
    }
    Ok(Some(StepSearch {
        first_alpha: grid[first],
        first_factor: values[first],
        alpha,
        factor: fac,
        samples: points.len(),
        label: SAMPLED_LABEL.to_string(),
    }))
}

/// Step ratios entering the factor estimate.
pub const RATIO_WINDOW: usize = 10;
pub const RATIO_FLOOR: f64 = 1e-6;
pub const RATIO_CEILING: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    #[serde(with = "serde_rows::vector")]
    pub x_star: Vector,
    pub iterations: usize,
    /// Max of the last step ratios, clamped for bound arithmetic.
    pub factor_measured: f64,
    /// `ρ̂ᵏ‖x₁ − x₀‖/(1 − ρ̂)`.
    pub apriori_bound: f64,
    /// `ρ̂‖x_{k+1} − x_k‖/(1 − ρ̂)`, bounding `‖x_star − x*‖`.
    pub aposteriori_bound: f64,
    /// `‖x_{k+1} − x_k‖` for every iteration.
    pub steps: Vec<f64>,
    /// `‖x_k − x_{k+1}‖/(1 − ρ̂)`, bounding `‖x_k − x*‖`, with the final ρ̂.
    pub error_bounds: Vec<f64>,
}

fn clamp_ratio(r: f64) -> f64 {
    r.clamp(RATIO_FLOOR, RATIO_CEILING)
}

/// Banach iteration `x_{k+1} = F(x_k)` until `‖x_{k+1} − x_k‖ ≤ tol(1 − ρ̂)/ρ̂`,
/// which guarantees `‖x_{k+1} − x*‖ ≤ tol` when the step ratios are bounded
/// by ρ̂.
pub fn banach_iterate<M: Differentiable + ?Sized>(
    map: &M,
    x0: &Vector,
    spec: &NormSpec,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let mut x = x0.clone();
    let mut steps: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let window_max =
        |ratios: &[f64]| ratios[ratios.len().saturating_sub(RATIO_WINDOW)..].iter().copied().fold(0.0, f64::max);
    for k in 0..max_iter {
        let next = map.eval(&x)?;
        let d = vector_norm(&(&next - &x), spec)?;
        if !d.is_finite() {
            return Err(Error::Divergence { ratio: f64::INFINITY, iterations: k });
        }
        // steps at the round-off floor carry no information about ρ
        let floor = 8.0 * f64::EPSILON * (1.0 + next.amax());
        if d <= floor {
            steps.push(d);
            let rho = clamp_ratio(if ratios.is_empty() { 0.0 } else { window_max(&ratios) });
            return Ok(finish(next, steps, rho));
        }
        if let Some(&prev) = steps.last() {
            ratios.push(if prev > 0.0 { d / prev } else { 0.0 });
        }
        steps.push(d);
        x = next;
        if ratios.len() >= RATIO_WINDOW {
            let tail = &ratios[ratios.len() - RATIO_WINDOW..];
            if tail.iter().all(|&r| r >= 1.0) {
                log::warn!("Banach iteration diverging: step ratios {tail:?}");
                return Err(Error::Divergence { ratio: window_max(&ratios), iterations: k + 1 });
            }
        }
        // ρ̂ is trusted only once the warm-up window is full
        let rho = (ratios.len() >= RATIO_WINDOW).then(|| clamp_ratio(window_max(&ratios)));
        let converged = rho.is_some_and(|r| d <= tol * (1.0 - r) / r);
        if converged {
            let rho = rho.unwrap_or_else(|| clamp_ratio(window_max(&ratios)));
            return Ok(finish(x, steps, rho));
        }
    }
    let rho = clamp_ratio(if ratios.is_empty() { 1.0 } else { window_max(&ratios) });
    let bound = steps.last().map_or(f64::INFINITY, |d| rho * d / (1.0 - rho));
    Err(Error::MaxIterations { iterations: max_iter, bound, last: x.as_slice().to_vec() })
}

fn finish(x: Vector, steps: Vec<f64>, rho: f64) -> FixedPointResult {
    let k = steps.len();
    let d_last = *steps.last().unwrap_or(&0.0);
    let error_bounds = steps.iter().map(|d| d / (1.0 - rho)).collect();
    FixedPointResult {
        x_star: x,
        iterations: k,
        factor_measured: rho,
        apriori_bound: rho.powi(k as i32) * steps[0] / (1.0 - rho),
        aposteriori_bound: rho * d_last / (1.0 - rho),
        steps,
        error_bounds,
    }
}

/// Iterates `F` and returns `x_0, …, x_steps`.
pub fn orbit<M: Differentiable + ?Sized>(map: &M, x0: &Vector, steps: usize) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for _ in 0..steps {
        let next = map.eval(out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Max of `‖F(x) − F(y)‖/‖x − y‖` over the given pairs.
pub fn empirical_factor<M: Differentiable + ?Sized>(
    map: &M,
    spec: &NormSpec,
    pairs: &[(Vector, Vector)],
) -> Result<f64> {
    let ratios = exec::try_map(pairs, |(x, y)| -> Result<f64> {
        let den = vector_norm(&(x - y), spec)?;
        if den == 0.0 {
            return Ok(0.0);
        }
        Ok(vector_norm(&(map.eval(x)? - map.eval(y)?), spec)? / den)
    })?;
    if ratios.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::BoxDomain;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        serde_rows::matrix_from_rows(&rows).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn affine_field(a: Matrix) -> VectorFieldSpec {
        let n = a.nrows();
        VectorFieldSpec::affine(a, Vector::zeros(n), BoxDomain::symmetric(n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn euler_map_examples() {
        let f = affine_field(-Matrix::identity(2, 2));
        let g = euler_map(&f, 0.5).unwrap();
        assert_eq!(g.eval(&v(&[1.0, -2.0])).unwrap(), v(&[0.5, -1.0]));
        for spec in [NormSpec::L1, NormSpec::L2, NormSpec::Linf] {
            assert_eq!(matrix_norm(&g.jacobian_at(&v(&[0.0, 0.0])).unwrap(), &spec).unwrap(), 0.5);
        }
        let a = m(&[&[-2.0, 1.0], &[0.0, -3.0]]);
        let g = euler_map(&affine_field(a.clone()), 0.1).unwrap();
        assert_eq!(g.jacobian_at(&v(&[0.2, 0.3])).unwrap(), Matrix::identity(2, 2) + &a * 0.1);
        assert!(euler_map(&affine_field(a), 0.0).is_err());
    }

    #[test]
    fn euler_jacobian_matches_finite_differences_of_the_map() {
        let f = VectorFieldSpec::new(
            2,
            |x| v(&[-x[0] + x[1].sin(), -2.0 * x[1] + (x[0] * x[1]).tanh()]),
            BoxDomain::symmetric(2, 1.0).unwrap(),
        )
        .unwrap()
        .with_jacobian(|x| {
            let s = 1.0 - (x[0] * x[1]).tanh().powi(2);
            m(&[&[-1.0, x[1].cos()], &[s * x[1], -2.0 + s * x[0]]])
        });
        let g = euler_map(&f, 0.3).unwrap();
        let fd = g.clone().with_finite_differences();
        let pts = Sampler::RandomUniform { count: 20, seed: 5 }.points(f.domain()).unwrap();
        for x in pts {
            assert!((g.jacobian_at(&x).unwrap() - fd.jacobian_at(&x).unwrap()).amax() < 1e-6);
        }
    }

    #[test]
    fn step_search_examples() {
        let s = Sampler::UniformGrid { points_per_axis: 3 };
        let r =
            find_contracting_step(&affine_field(-Matrix::identity(2, 2)), &NormSpec::Linf, 2.0, &s).unwrap().unwrap();
        assert_abs_diff_eq!(r.alpha, 1.0, epsilon = 1e-6);
        assert!(r.factor < 1e-5);
        assert!(r.first_factor < 1.0 && r.first_alpha <= r.alpha);

        let a = m(&[&[-2.0, 1.0], &[0.0, -3.0]]);
        let r = find_contracting_step(&affine_field(a.clone()), &NormSpec::Linf, 1.0, &s).unwrap().unwrap();
        // 1-D sweep oracle
        let sweep = (1..=10_000)
            .map(|k| {
                let al = k as f64 / 10_000.0;
                matrix_norm(&(Matrix::identity(2, 2) + &a * al), &NormSpec::Linf).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.factor <= 2.0 / 3.0 + 1e-3);
        assert!(r.factor <= sweep + 1e-6);

        assert!(find_contracting_step(&affine_field(Matrix::identity(1, 1)), &NormSpec::Linf, 1.0, &s)
            .unwrap()
            .is_none());
    }

    #[test]
    fn banach_examples() {
        let dom = BoxDomain::symmetric(1, 10.0).unwrap();
        let g = DiscreteMapSpec::new(1, |x| x * 0.5 + Vector::from_element(1, 1.0), dom.clone()).unwrap();
        let r = banach_iterate(&g, &v(&[0.0]), &NormSpec::L2, 1e-12, 200).unwrap();
        assert!((r.x_star[0] - 2.0).abs() <= 1e-12);
        assert_abs_diff_eq!(r.factor_measured, 0.5, epsilon = 1e-12);
        assert!(r.aposteriori_bound <= 1e-12);

        let h = DiscreteMapSpec::new(1, |x| x * 2.0, dom.clone()).unwrap();
        assert!(matches!(banach_iterate(&h, &v(&[1.0]), &NormSpec::L2, 1e-9, 1000), Err(Error::Divergence { .. })));

        let slow = DiscreteMapSpec::new(1, |x| x * 0.999, dom).unwrap();
        assert!(matches!(
            banach_iterate(&slow, &v(&[1.0]), &NormSpec::L2, 1e-12, 5),
            Err(Error::MaxIterations { iterations: 5, .. })
        ));
    }

    #[test]
    fn banach_error_bounds_are_sound_on_scaled_rotations() {
        let (c, s) = (0.7f64.cos() * 0.8, 0.7f64.sin() * 0.8);
        let a = m(&[&[c, -s], &[s, c]]);
        let b = v(&[0.3, -1.0]);
        let x_star = (Matrix::identity(2, 2) - &a).try_inverse().unwrap() * &b;
        let g = DiscreteMapSpec::affine(a, b, BoxDomain::symmetric(2, 10.0).unwrap()).unwrap();
        let x0 = v(&[4.0, 3.0]);
        let r = banach_iterate(&g, &x0, &NormSpec::L2, 1e-10, 1000).unwrap();
        assert!((&r.x_star - &x_star).norm() <= 1e-10);
        let xs = orbit(&g, &x0, r.iterations).unwrap();
        for (k, bound) in r.error_bounds.iter().enumerate() {
            assert!((&xs[k] - &x_star).norm() <= bound * (1.0 + 1e-10));
        }
        let ys = orbit(&g, &v(&[-2.0, 1.0]), 40).unwrap();
        let xs = orbit(&g, &x0, 40).unwrap();
        let d0 = (&xs[0] - &ys[0]).norm();
        for k in 0..=40 {
            assert!((&xs[k] - &ys[k]).norm() <= r.factor_measured.powi(k as i32) * d0 * (1.0 + 1e-10));
        }
    }

    #[test]
    fn fixed_point_result_json_round_trip() {
        let g = DiscreteMapSpec::new(1, |x| x * 0.5, BoxDomain::symmetric(1, 1.0).unwrap()).unwrap();
        let r = banach_iterate(&g, &v(&[1.0]), &NormSpec::Linf, 1e-8, 100).unwrap();
        let back: FixedPointResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
