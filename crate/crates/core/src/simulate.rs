//! Fixed-step RK4 integration and empirical checks of the guaranteed
//! bounds: incremental stability, incremental ISS, equilibrium tracking,
//! the gradient controller and the competitive sparse-coding network.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretization::{banach_iterate, euler_map, find_contracting_step};
use crate::error::{Error, Result};
use crate::exec;
use crate::norms::{matrix_norm, sym_max_eigenvalue, vector_norm, Matrix, NormSpec, Vector};
use crate::serde_rows;
use crate::system::{estimate_lip, Differentiable, DiscreteMapSpec, Sampler, VectorFieldSpec};

/// Distances below this are treated as numerically zero.
pub const DISTANCE_FLOOR: f64 = 1e-10;

/// `min(10⁻³, 0.1/|rate|)`.
pub fn default_dt(rate: f64) -> f64 {
    if rate == 0.0 {
        1e-3
    } else {
        (0.1 / rate.abs()).min(1e-3)
    }
}

pub type SignalFn = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

/// Programmatic signal with an optional analytic derivative.
#[derive(Clone)]
pub struct CustomSignal {
    pub value: SignalFn,
    pub derivative: Option<SignalFn>,
    /// Reported `sup‖θ̇‖`, if known.
    pub derivative_bound: Option<f64>,
}

/// Exogenous input `θ(t)`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant {
        #[serde(with = "serde_rows::vector")]
        value: Vector,
    },
    /// `offset + amplitude·sin(frequency·t + phase)`, frequency in rad per
    /// unit time.
    Sinusoid {
        #[serde(with = "serde_rows::vector")]
        amplitude: Vector,
        frequency: f64,
        phase: f64,
        #[serde(with = "serde_rows::vector")]
        offset: Vector,
    },
    /// Linear interpolation between knots, constant outside.
    PiecewiseLinear {
        times: Vec<f64>,
        #[serde(with = "serde_rows::vectors")]
        values: Vec<Vector>,
    },
    #[serde(skip)]
    Custom(CustomSignal),
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Constant { value } => f.debug_struct("Constant").field("value", value).finish(),
            Signal::Sinusoid { amplitude, frequency, phase, offset } => f
                .debug_struct("Sinusoid")
                .field("amplitude", amplitude)
                .field("frequency", frequency)
                .field("phase", phase)
                .field("offset", offset)
                .finish(),
            Signal::PiecewiseLinear { times, values } => {
                f.debug_struct("PiecewiseLinear").field("times", times).field("values", values).finish()
            }
            Signal::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Signal {
    pub fn constant(value: Vector) -> Self {
        Signal::Constant { value }
    }

    pub fn sinusoid(amplitude: Vector, frequency: f64, phase: f64, offset: Vector) -> Result<Self> {
        if amplitude.len() != offset.len() {
            return Err(Error::DimensionMismatch { expected: offset.len(), found: amplitude.len() });
        }
        Ok(Signal::Sinusoid { amplitude, frequency, phase, offset })
    }

    pub fn piecewise_linear(times: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        let s = Signal::PiecewiseLinear { times, values };
        s.validate()?;
        Ok(s)
    }

    pub fn custom(value: impl Fn(f64) -> Vector + Send + Sync + 'static) -> Self {
        Signal::Custom(CustomSignal { value: Arc::new(value), derivative: None, derivative_bound: None })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Signal::Sinusoid { amplitude, offset, frequency, phase } => {
                if amplitude.len() != offset.len() {
                    return Err(Error::DimensionMismatch { expected: offset.len(), found: amplitude.len() });
                }
                if !frequency.is_finite() || !phase.is_finite() {
                    return Err(Error::InvalidArgument("sinusoid frequency and phase must be finite".into()));
                }
            }
            Signal::PiecewiseLinear { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidArgument("piecewise-linear signal needs one value per knot".into()));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidArgument("knot times must be strictly increasing".into()));
                }
                let d = values[0].len();
                if let Some(v) = values.iter().find(|v| v.len() != d) {
                    return Err(Error::DimensionMismatch { expected: d, found: v.len() });
                }
            }
            Signal::Constant { .. } | Signal::Custom(_) => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Signal::Constant { value } => value.len(),
            Signal::Sinusoid { offset, .. } => offset.len(),
            Signal::PiecewiseLinear { values, .. } => values[0].len(),
            Signal::Custom(c) => (c.value)(0.0).len(),
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            Signal::Constant { value } => value.clone(),
            Signal::Sinusoid { amplitude, frequency, phase, offset } => {
                offset + amplitude * (frequency * t + phase).sin()
            }
            Signal::PiecewiseLinear { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0].clone()
                } else if k == times.len() {
                    values[k - 1].clone()
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    &values[k - 1] * (1.0 - w) + &values[k] * w
                }
            }
            Signal::Custom(c) => (c.value)(t),
        }
    }

    /// `θ̇(t)`; right derivative at knots, central differences for custom
    /// signals without an analytic derivative.
    pub fn derivative(&self, t: f64) -> Vector {
        match self {
            Signal::Constant { value } => Vector::zeros(value.len()),
            Signal::Sinusoid { amplitude, frequency, phase, .. } => {
                amplitude * (frequency * (frequency * t + phase).cos())
            }
            Signal::PiecewiseLinear { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 || k == times.len() {
                    Vector::zeros(values[0].len())
                } else {
                    (&values[k] - &values[k - 1]) / (times[k] - times[k - 1])
                }
            }
            Signal::Custom(c) => match &c.derivative {
                Some(d) => d(t),
                None => {
                    let h = 1e-6 * (1.0 + t.abs());
                    ((c.value)(t + h) - (c.value)(t - h)) / (2.0 * h)
                }
            },
        }
    }

    /// `sup_t ‖θ̇(t)‖` for the differentiable kinds.
    pub fn derivative_bound(&self, spec: &NormSpec) -> Result<Option<f64>> {
        Ok(match self {
            Signal::Constant { .. } => Some(0.0),
            Signal::Sinusoid { amplitude, frequency, .. } => Some(vector_norm(amplitude, spec)? * frequency.abs()),
            Signal::PiecewiseLinear { times, values } => {
                let mut best: f64 = 0.0;
                for k in 1..times.len() {
                    let slope = (&values[k] - &values[k - 1]) / (times[k] - times[k - 1]);
                    best = best.max(vector_norm(&slope, spec)?);
                }
                Some(best)
            }
            Signal::Custom(c) => c.derivative_bound,
        })
    }
}

/// Time grid, states and (when driven) input samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(with = "serde_rows::vectors")]
    pub states: Vec<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "option_vectors")]
    pub inputs: Option<Vec<Vector>>,
}

mod option_vectors {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vector>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|xs| xs.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vector>>, D::Error> {
        let raw: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        Ok(raw.map(|xs| xs.into_iter().map(Vector::from_vec).collect()))
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV with columns `t, x_1..x_n[, theta_1..theta_m]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, Vector::len);
        let m = self.inputs.as_ref().and_then(|u| u.first()).map_or(0, Vector::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("theta_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            if let Some(inputs) = &self.inputs {
                row.extend(inputs[k].iter().map(f64::to_string));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_span(t_span: (f64, f64), dt: f64) -> Result<usize> {
    let span = t_span.1 - t_span.0;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument(format!("empty time span {t_span:?}")));
    }
    if !(dt > 0.0) || dt > span / 10.0 + 1e-15 * span {
        return Err(Error::InvalidArgument(format!("dt must satisfy 0 < dt <= span/10, got {dt}")));
    }
    Ok(((span / dt).round() as usize).max(10))
}

/// Fixed-step RK4 over `t_span` with `round(span/dt)` equal steps. With an
/// input, `F(x, θ(t))` is evaluated at the stage times.
pub fn integrate(
    f: &VectorFieldSpec,
    x0: &Vector,
    t_span: (f64, f64),
    dt: f64,
    input: Option<&Signal>,
) -> Result<Trajectory> {
    if x0.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: x0.len() });
    }
    let steps = check_span(t_span, dt)?;
    let h = (t_span.1 - t_span.0) / steps as f64;
    let rhs = |x: &Vector, t: f64| -> Result<Vector> {
        let theta = input.map(|s| s.eval(t));
        f.eval_with(x, theta.as_ref()).map_err(|e| match e {
            Error::EvaluationFailed(_) => Error::BlowUp { time: t },
            other => other,
        })
    };
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = input.map(|_| Vec::with_capacity(steps + 1));
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = t_span.0 + k as f64 * h;
        times.push(t);
        if let (Some(u), Some(s)) = (inputs.as_mut(), input) {
            u.push(s.eval(t));
        }
        if k == steps {
            states.push(x);
            break;
        }
        let k1 = rhs(&x, t)?;
        let k2 = rhs(&(&x + &k1 * (h / 2.0)), t + h / 2.0)?;
        let k3 = rhs(&(&x + &k2 * (h / 2.0)), t + h / 2.0)?;
        let k4 = rhs(&(&x + &k3 * h), t + h)?;
        let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t + h });
        }
        states.push(std::mem::replace(&mut x, next));
    }
    Ok(Trajectory { times, states, inputs })
}

/// Integrates from every initial state, in parallel.
pub fn integrate_many(
    f: &VectorFieldSpec,
    x0s: &[Vector],
    t_span: (f64, f64),
    dt: f64,
    input: Option<&Signal>,
) -> Result<Vec<Trajectory>> {
    exec::try_map(x0s, |x0| integrate(f, x0, t_span, dt, input))
}

/// `‖x(t) − y(t)‖` along two trajectories on the same grid.
pub fn distances(x: &Trajectory, y: &Trajectory, spec: &NormSpec) -> Result<Vec<f64>> {
    if x.times != y.times {
        return Err(Error::InvalidArgument("trajectories must share a time grid".into()));
    }
    x.states.iter().zip(&y.states).map(|(a, b)| vector_norm(&(a - b), spec)).collect()
}

/// Max over the grid of `d(t) − [e^{−c(t−t₀)} d(t₀) + extra(k)]`, with its time.
fn bound_violation(times: &[f64], dist: &[f64], c: f64, extra: impl Fn(usize) -> f64) -> (f64, f64) {
    let (t0, d0) = (times[0], dist[0]);
    let mut worst = (f64::NEG_INFINITY, t0);
    for k in 0..times.len() {
        let v = dist[k] - ((-c * (times[k] - t0)).exp() * d0 + extra(k));
        if v > worst.0 {
            worst = (v, times[k]);
        }
    }
    worst
}

/// `max_t ‖x(t) − y(t)‖ − e^{−ct}‖x₀ − y₀‖`.
pub fn incremental_stability_violation(x: &Trajectory, y: &Trajectory, spec: &NormSpec, c: f64) -> Result<f64> {
    let d = distances(x, y, spec)?;
    Ok(bound_violation(&x.times, &d, c, |_| 0.0).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvershootCheck {
    pub rate: f64,
    pub tolerance: f64,
    /// `max_t ‖x−y‖ / (e^{−ct}‖x₀−y₀‖)` over all pairs.
    pub max_ratio: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Smallest per-pair rate.
    pub rate: f64,
    pub pair_rates: Vec<f64>,
    pub overshoot: Option<OvershootCheck>,
    #[serde(skip)]
    pub trajectories: Vec<(Trajectory, Trajectory)>,
}

fn log_slope(times: &[f64], dist: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        times.iter().zip(dist).filter(|(_, d)| **d > DISTANCE_FLOOR).map(|(t, d)| (*t, d.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Least-squares decay rate of `log‖x(t) − y(t)‖` for each pair, with the
/// no-overshoot check `‖x−y‖ ≤ e^{−ct}‖x₀−y₀‖(1 + tol)` when a rate `c` is
/// supplied.
pub fn empirical_contraction_rate(
    f: &VectorFieldSpec,
    spec: &NormSpec,
    pairs: &[(Vector, Vector)],
    t_span: (f64, f64),
    dt: f64,
    certified: Option<(f64, f64)>,
) -> Result<RateEstimate> {
    if pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(i) = pairs.iter().position(|(x, y)| x == y) {
        return Err(Error::InvalidArgument(format!("pair {i} has identical initial states")));
    }
    let trajectories = exec::try_map(pairs, |(x0, y0)| -> Result<(Trajectory, Trajectory)> {
        Ok((integrate(f, x0, t_span, dt, None)?, integrate(f, y0, t_span, dt, None)?))
    })?;
    let mut pair_rates = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for (x, y) in &trajectories {
        let d = distances(x, y, spec)?;
        if let Some(s) = log_slope(&x.times, &d) {
            pair_rates.push(-s);
        }
        if let Some((c, _)) = certified {
            for (k, t) in x.times.iter().enumerate() {
                let envelope = (-c * (t - x.times[0])).exp() * d[0];
                if envelope > 0.0 {
                    max_ratio = max_ratio.max(d[k] / envelope);
                }
            }
        }
    }
    if pair_rates.is_empty() {
        return Err(Error::DistanceUnderflow);
    }
    let rate = pair_rates.iter().copied().fold(f64::INFINITY, f64::min);
    let overshoot =
        certified.map(|(c, tol)| OvershootCheck { rate: c, tolerance: tol, max_ratio, passes: max_ratio <= 1.0 + tol });
    Ok(RateEstimate { rate, pair_rates, overshoot, trajectories })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub max_violation: f64,
    pub time_of_max: f64,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

/// Norms for the state and the input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundNorms<'a> {
    pub state: &'a NormSpec,
    pub input: &'a NormSpec,
}

/// Max violation of the incremental ISS bound
/// `‖x−y‖ ≤ e^{−ct}‖x₀−y₀‖ + (ℓ/c)(1 − e^{−ct}) sup_{τ≤t}‖θx(τ)−θy(τ)‖`,
/// with the sup taken on the integration grid.
#[allow(clippy::too_many_arguments)]
pub fn verify_iiss_bound(
    f: &VectorFieldSpec,
    norms: BoundNorms<'_>,
    c: f64,
    ell: f64,
    x0: &Vector,
    y0: &Vector,
    theta_x: &Signal,
    theta_y: &Signal,
    t_span: (f64, f64),
    dt: f64,
) -> Result<BoundCheck> {
    if !(c > 0.0) || !(ell >= 0.0) {
        return Err(Error::InvalidArgument(format!("need c > 0 and ell >= 0, got c = {c}, ell = {ell}")));
    }
    let (tx, ty) = (integrate(f, x0, t_span, dt, Some(theta_x))?, integrate(f, y0, t_span, dt, Some(theta_y))?);
    let d = distances(&tx, &ty, norms.state)?;
    let (ux, uy) = (tx.inputs.as_ref().expect("driven"), ty.inputs.as_ref().expect("driven"));
    let mut running = Vec::with_capacity(d.len());
    let mut sup: f64 = 0.0;
    for (a, b) in ux.iter().zip(uy) {
        sup = sup.max(vector_norm(&(a - b), norms.input)?);
        running.push(sup);
    }
    let t0 = tx.times[0];
    let times = tx.times.clone();
    let (max_violation, time_of_max) =
        bound_violation(&times, &d, c, |k| (ell / c) * (1.0 - (-c * (times[k] - t0)).exp()) * running[k]);
    Ok(BoundCheck { max_violation, time_of_max, trajectories: vec![tx, ty] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingCheck {
    pub max_violation: f64,
    pub time_of_max: f64,
    /// `max ‖x(t) − x*(θ(t))‖` over the second half of the horizon.
    pub tail_error: f64,
    /// `(ℓ/c²) sup‖θ̇‖`.
    pub asymptotic_bound: f64,
    pub euler_step: f64,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub equilibria: Vec<Vector>,
}

/// Solves `F(x, θ) = 0` by Banach iteration of the Euler map of the frozen
/// field with step `alpha`.
pub fn frozen_equilibrium(
    f: &VectorFieldSpec,
    theta: &Vector,
    alpha: f64,
    x0: &Vector,
    spec: &NormSpec,
) -> Result<Vector> {
    let map = euler_map(&f.frozen(theta.clone()), alpha)?;
    let tol = 1e-12 * (1.0 + x0.amax());
    Ok(banach_iterate(&map, x0, spec, tol, 200_000)?.x_star)
}

/// A contracting Euler step for the field frozen at `theta`.
pub fn contracting_euler_step(f: &VectorFieldSpec, theta: &Vector, spec: &NormSpec) -> Result<f64> {
    let frozen = f.frozen(theta.clone());
    let sampler = Sampler::default_for(f.dim());
    let lip = estimate_lip(&frozen, spec, &sampler)?.value.max(1e-12);
    find_contracting_step(&frozen, spec, 2.0 / lip, &sampler)?
        .map(|s| s.alpha)
        .ok_or(Error::NotContracting { bound: lip })
}

/// Equilibrium tracking under a time-varying parameter.
///
/// `x*(θ(t))` is solved every [`TRACKING_STRIDE`] steps, warm-started from
/// `x(t)`, and interpolated linearly in between.
#[allow(clippy::too_many_arguments)]
pub fn verify_equilibrium_tracking(
    f: &VectorFieldSpec,
    norms: BoundNorms<'_>,
    c: f64,
    ell: f64,
    theta: &Signal,
    x0: &Vector,
    t_span: (f64, f64),
    dt: f64,
) -> Result<TrackingCheck> {
    if !(c > 0.0) || !(ell >= 0.0) {
        return Err(Error::InvalidArgument(format!("need c > 0 and ell >= 0, got c = {c}, ell = {ell}")));
    }
    let spec = norms.state;
    let traj = integrate(f, x0, t_span, dt, Some(theta))?;
    let alpha = contracting_euler_step(f, &theta.eval(t_span.0), spec)?;
    let last = traj.len() - 1;
    let mut knots: Vec<usize> = (0..=last).step_by(TRACKING_STRIDE).collect();
    if *knots.last().expect("nonempty") != last {
        knots.push(last);
    }
    let solved =
        exec::try_map(&knots, |&k| frozen_equilibrium(f, &theta.eval(traj.times[k]), alpha, &traj.states[k], spec))?;
    let mut equilibria = Vec::with_capacity(traj.len());
    for w in 0..knots.len() - 1 {
        let (a, b) = (knots[w], knots[w + 1]);
        for k in a..b {
            let s = (k - a) as f64 / (b - a) as f64;
            equilibria.push(&solved[w] * (1.0 - s) + &solved[w + 1] * s);
        }
    }
    equilibria.push(solved[knots.len() - 1].clone());
    let dist: Vec<f64> =
        traj.states.iter().zip(&equilibria).map(|(x, e)| vector_norm(&(x - e), spec)).collect::<Result<_>>()?;
    let mut running = Vec::with_capacity(dist.len());
    let mut sup: f64 = 0.0;
    for t in &traj.times {
        sup = sup.max(vector_norm(&theta.derivative(*t), norms.input)?);
        running.push(sup);
    }
    let t0 = traj.times[0];
    let times = traj.times.clone();
    let (max_violation, time_of_max) =
        bound_violation(&times, &dist, c, |k| (ell / (c * c)) * (1.0 - (-c * (times[k] - t0)).exp()) * running[k]);
    let mid = 0.5 * (t_span.0 + t_span.1);
    let tail_error = times.iter().zip(&dist).filter(|(t, _)| **t >= mid).map(|(_, d)| *d).fold(0.0, f64::max);
    let derivative_sup = theta.derivative_bound(norms.input)?.unwrap_or(sup);
    Ok(TrackingCheck {
        max_violation,
        time_of_max,
        tail_error,
        asymptotic_bound: ell / (c * c) * derivative_sup,
        euler_step: alpha,
        trajectory: Some(traj),
        equilibria,
    })
}

/// Equilibria are solved every this many integration steps.
pub const TRACKING_STRIDE: usize = 10;

pub type GradFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// `u̇ = −∇φ(u) − Yuᵀ∇ψ(Yu·u + Yw·w)`, with `φ` ν-strongly convex.
#[derive(Clone)]
pub struct GradientControllerSpec {
    pub phi_grad: GradFn,
    /// Strong convexity of φ.
    pub nu: f64,
    /// Lipschitz constant of ∇φ.
    pub phi_grad_lip: f64,
    pub psi_grad: GradFn,
    /// Lipschitz constant of ∇ψ.
    pub psi_grad_lip: f64,
    pub yu: Matrix,
    pub yw: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientControllerReport {
    pub limsup_error: f64,
    pub bound: f64,
    pub ell_w: f64,
    pub nu: f64,
    pub passes: bool,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

impl GradientControllerSpec {
    fn check(&self, w: &Signal, u0: &Vector) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::NotContracting { bound: -self.nu });
        }
        let (p, k) = self.yu.shape();
        if u0.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: u0.len() });
        }
        if self.yw.nrows() != p {
            return Err(Error::DimensionMismatch { expected: p, found: self.yw.nrows() });
        }
        if w.dim() != self.yw.ncols() {
            return Err(Error::DimensionMismatch { expected: self.yw.ncols(), found: w.dim() });
        }
        Ok(())
    }

    /// The controller as a field driven by `θ = w`.
    pub fn field(&self, u0: &Vector) -> Result<VectorFieldSpec> {
        let k = self.yu.ncols();
        let s = self.clone();
        let radius = 10.0 * (1.0 + u0.amax());
        crate::system::VectorFieldSpec::parametric(
            k,
            move |u, w| {
                let w = w.expect("controller needs w");
                -(s.phi_grad)(u) - s.yu.transpose() * (s.psi_grad)(&(&s.yu * u + &s.yw * w))
            },
            crate::system::BoxDomain::symmetric(k, radius)?,
            None,
        )
    }

    /// `ℓ_w = ‖Yuᵀ‖₂·Lip(∇ψ)·‖Yw‖₂`.
    pub fn ell_w(&self) -> Result<f64> {
        Ok(matrix_or_svd_norm(&self.yu.transpose())? * self.psi_grad_lip * matrix_or_svd_norm(&self.yw)?)
    }

    /// `u*(w)` by Banach iteration of Euler step `2/(ν + L)` on the gradient.
    pub fn optimum(&self, w: &Vector, warm: &Vector) -> Result<Vector> {
        let yu_norm = matrix_or_svd_norm(&self.yu)?;
        let lip = self.phi_grad_lip + yu_norm * yu_norm * self.psi_grad_lip;
        let step = 2.0 / (self.nu + lip);
        let s = self.clone();
        let w = w.clone();
        let k = self.yu.ncols();
        let map = DiscreteMapSpec::new(
            k,
            move |u| {
                let g = (s.phi_grad)(u) + s.yu.transpose() * (s.psi_grad)(&(&s.yu * u + &s.yw * &w));
                u - g * step
            },
            crate::system::BoxDomain::symmetric(k, 10.0 * (1.0 + warm.amax()))?,
        )?;
        Ok(banach_iterate(&map, warm, &NormSpec::L2, 1e-12 * (1.0 + warm.amax()), 1_000_000)?.x_star)
    }
}

fn matrix_or_svd_norm(m: &Matrix) -> Result<f64> {
    if m.is_square() {
        matrix_norm(m, &NormSpec::L2)
    } else {
        Ok(m.clone().svd(false, false).singular_values.max())
    }
}

/// Integrates the gradient controller and compares the tail tracking error
/// against `(ℓ_w/ν²)·sup‖ẇ‖` (times `1 + 10⁻²`, plus `10⁻⁹` absolute).
pub fn gradient_controller_demo(
    spec: &GradientControllerSpec,
    w: &Signal,
    u0: &Vector,
    t_span: (f64, f64),
    dt: f64,
) -> Result<GradientControllerReport> {
    spec.check(w, u0)?;
    let field = spec.field(u0)?;
    let traj = integrate(&field, u0, t_span, dt, Some(w))?;
    let ell_w = spec.ell_w()?;
    let sup_wdot = match w.derivative_bound(&NormSpec::L2)? {
        Some(b) => b,
        None => traj.times.iter().map(|t| w.derivative(*t).norm()).fold(0.0, f64::max),
    };
    let bound = ell_w / (spec.nu * spec.nu) * sup_wdot;
    let mid = 0.5 * (t_span.0 + t_span.1);
    let tail: Vec<usize> = (0..traj.len()).filter(|&k| traj.times[k] >= mid).step_by(TRACKING_STRIDE).collect();
    let errors = exec::try_map(&tail, |&k| -> Result<f64> {
        let opt = spec.optimum(&w.eval(traj.times[k]), &traj.states[k])?;
        Ok((&traj.states[k] - opt).norm())
    })?;
    let limsup_error = errors.into_iter().fold(0.0, f64::max);
    Ok(GradientControllerReport {
        limsup_error,
        bound,
        ell_w,
        nu: spec.nu,
        passes: limsup_error <= bound * (1.0 + 1e-2) + 1e-9,
        trajectory: Some(traj),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseReconstructionReport {
    #[serde(with = "serde_rows::vector")]
    pub equilibrium: Vector,
    pub objective: f64,
    pub oracle_objective: f64,
    pub objective_gap: f64,
    pub gap_ok: bool,
    pub min_state: f64,
    pub nonneg_ok: bool,
    /// `‖F(x_end)‖₂`.
    pub residual: f64,
    /// Decay rate of `‖x(t) − x_end‖`; empirical, not a certificate.
    pub empirical_rate: Option<f64>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

/// `½‖u − Φx‖² + λ‖x‖₁`.
pub fn sparse_objective(phi: &Matrix, u: &Vector, lambda: f64, x: &Vector) -> f64 {
    0.5 * (u - phi * x).norm_squared() + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

fn check_dictionary(phi: &Matrix, u: &Vector, lambda: f64) -> Result<()> {
    if u.len() != phi.nrows() {
        return Err(Error::DimensionMismatch { expected: phi.nrows(), found: u.len() });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if phi.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("dictionary entries must be nonnegative".into()));
    }
    if let Some(j) = (0..phi.ncols()).find(|&j| (phi.column(j).norm() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidArgument(format!("dictionary column {j} is not unit norm")));
    }
    Ok(())
}

/// The positive competitive network
/// `ẋᵢ = −xᵢ + relu(−Σ_{j≠i} ΦᵢᵀΦⱼ xⱼ + Φᵢᵀu − λ)`.
pub fn competitive_network(phi: &Matrix, u: &Vector, lambda: f64) -> Result<VectorFieldSpec> {
    check_dictionary(phi, u, lambda)?;
    let n = phi.ncols();
    let mut cross = phi.transpose() * phi;
    cross.fill_diagonal(0.0);
    let drive = phi.transpose() * u - Vector::from_element(n, lambda);
    let (cross2, drive2) = (cross.clone(), drive.clone());
    let radius = 2.0 * (1.0 + drive.amax());
    Ok(VectorFieldSpec::new(
        n,
        move |x| -x + (-(&cross * x) + &drive).map(|z| z.max(0.0)),
        crate::system::BoxDomain::new(Vector::from_element(n, -1e-3), Vector::from_element(n, radius))?,
    )?
    .with_jacobian(move |x| {
        let z = -(&cross2 * x) + &drive2;
        -Matrix::identity(n, n) - Matrix::from_diagonal(&z.map(|v| if v > 0.0 { 1.0 } else { 0.0 })) * &cross2
    }))
}

/// Projected FISTA on `min_{x≥0} ½‖u − Φx‖² + λ𝟙ᵀx`.
pub fn sparse_oracle(phi: &Matrix, u: &Vector, lambda: f64) -> Result<Vector> {
    const MAX_ITER: usize = 2_000_000;
    let n = phi.ncols();
    let g = phi.transpose() * phi;
    let b = phi.transpose() * u;
    let step = 1.0 / sym_max_eigenvalue(&g).max(1e-12);
    let prox = |y: &Vector| -> Vector {
        let grad = &g * y - &b + Vector::from_element(n, lambda);
        (y - grad * step).map(|v| v.max(0.0))
    };
    let mut x = Vector::zeros(n);
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    for _ in 0..MAX_ITER {
        let next = prox(&y);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = (&next - &x).amax();
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        // restart when momentum stops reducing the objective
        if sparse_objective(phi, u, lambda, &next) > sparse_objective(phi, u, lambda, &x) {
            y = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        x = next;
        if moved <= 1e-15 * (1.0 + x.amax()) {
            let fixed = prox(&x);
            if (&fixed - &x).amax() <= 1e-13 * (1.0 + x.amax()) {
                return Ok(x);
            }
        }
    }
    Err(Error::MaxIterations { iterations: MAX_ITER, bound: f64::NAN, last: x.as_slice().to_vec() })
}

/// Simulates the competitive network and compares its equilibrium with the
/// oracle minimiser of the sparse reconstruction objective.
pub fn sparse_reconstruction_demo(
    phi: &Matrix,
    u: &Vector,
    lambda: f64,
    x0: &Vector,
    t_span: (f64, f64),
    dt: f64,
) -> Result<SparseReconstructionReport> {
    if x0.len() != phi.ncols() {
        return Err(Error::DimensionMismatch { expected: phi.ncols(), found: x0.len() });
    }
    if let Some(i) = x0.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!("initial state must be nonnegative; x0[{i}] = {}", x0[i])));
    }
    let f = competitive_network(phi, u, lambda)?;
    let traj = integrate(&f, x0, t_span, dt, None)?;
    let x_end = traj.last().clone();
    let min_state = traj.states.iter().flat_map(|x| x.iter().copied()).fold(f64::INFINITY, f64::min);
    let oracle = sparse_oracle(phi, u, lambda)?;
    let objective = sparse_objective(phi, u, lambda, &x_end);
    let oracle_objective = sparse_objective(phi, u, lambda, &oracle);
    let objective_gap = objective - oracle_objective;
    let dist: Vec<f64> = traj.states.iter().map(|x| (x - &x_end).norm()).collect();
    let cutoff = dist.iter().position(|d| *d <= 1e-8).unwrap_or(dist.len());
    let empirical_rate = log_slope(&traj.times[..cutoff], &dist[..cutoff]).map(|s| -s);
    Ok(SparseReconstructionReport {
        residual: f.eval(&x_end)?.norm(),
        equilibrium: x_end,
        objective,
        oracle_objective,
        objective_gap,
        gap_ok: objective_gap.abs() <= 1e-6 * (1.0 + objective.abs()),
        min_state,
        nonneg_ok: min_state >= -DISTANCE_FLOOR,
        empirical_rate,
        trajectory: Some(traj),
    })
}
