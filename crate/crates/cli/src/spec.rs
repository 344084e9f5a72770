//! System spec files.
//!
//! ```json
//! {
//!   "system": { "firing_rate": { "C": [[1, 0], [0, 1]], "A": [[0.25, 0.25], [0.25, 0.25]] } },
//!   "norm": { "kind": "linf" },
//!   "domain": { "radius": 2.0 },
//!   "simulation": { "t_span": [0, 20], "dt": 0.001, "seeds": [0, 1, 2] }
//! }
//! ```
//!
//! `system` holds exactly one kind. Matrices are arrays of rows.

use contraction_core::certificates::{Activation, FiringRateSpec, ImplicitNNSpec, LureSpec};
use contraction_core::interconnect::{GainMatrix, GainMode};
use contraction_core::simulate::{competitive_network, Signal};
use contraction_core::system::{BoxDomain, Differentiable, VectorFieldSpec};
use contraction_core::{Matrix, NormSpec, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::input::rows_to_matrix;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpecFile {
    pub system: SystemKind,
    #[serde(default)]
    pub norm: Option<NormSpec>,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Linear(LinearSystem),
    GradientFlow(GradientFlow),
    FiringRate(FiringRateSystem),
    Lure(LureSystem),
    ImplicitNn(ImplicitNnSystem),
    Competitive(CompetitiveSystem),
    Network(NetworkSystem),
}

/// `ẋ = Ax + a`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSystem {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(default, rename = "a")]
    pub offset: Option<Vec<f64>>,
}

/// `ẋ = −∇f(x)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientFlow {
    /// `f = ½xᵀQx − bᵀx`.
    Quadratic {
        #[serde(rename = "Q")]
        q: Rows,
        #[serde(default)]
        b: Option<Vec<f64>>,
    },
    /// Mean logistic loss of `(data_i, labels_i)`, labels ±1, plus `½·reg·‖w‖²`.
    Logistic { data: Rows, labels: Vec<f64>, reg: f64 },
    /// `f = Σ (x_i² − 1)²/4`, so `F_i = x_i − x_i³`.
    DoubleWell { dim: usize },
}

/// `ẋ = −Cx + Φ(Ax + u)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiringRateSystem {
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(default = "default_tanh")]
    pub activation: Activation,
    #[serde(default)]
    pub u: Option<Vec<f64>>,
}

fn default_tanh() -> Activation {
    Activation::Tanh
}

/// `ẋ = Ax + Bφ(Cx)` with `φ` ρ-cocoercive; simulated with `φ = relu`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LureSystem {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Rate the LMI search tries to certify.
    #[serde(default = "default_lure_rate")]
    pub eta: f64,
}

fn default_rho() -> f64 {
    1.0
}

fn default_lure_rate() -> f64 {
    1e-3
}

/// `x = Φ(Ax + Bu + b)`; simulated as `ẋ = −x + Φ(Ax + Bu + b)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplicitNnSystem {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
    #[serde(default)]
    pub activation: Option<Activation>,
    /// Input used for simulation; zero by default.
    #[serde(default)]
    pub u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetitiveSystem {
    #[serde(rename = "Phi")]
    pub phi: Rows,
    pub lambda: f64,
    pub u: Vec<f64>,
}

/// Gain matrix `Γ` of a network of contracting blocks; simulated as the
/// comparison system `ẋ = Γx`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSystem {
    pub gains: Rows,
    #[serde(default)]
    pub blocks: Option<Vec<usize>>,
    #[serde(default = "default_mode")]
    pub mode: GainMode,
}

fn default_mode() -> GainMode {
    GainMode::Continuous
}

/// Either `lo`/`hi` corners or a symmetric `radius`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub t_span: Option<(f64, f64)>,
    #[serde(default)]
    pub dt: Option<f64>,
    /// One trajectory pair per seed.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Rate to check instead of the certified one.
    #[serde(default)]
    pub rate: Option<f64>,
    /// `θ` for the tracking check.
    #[serde(default)]
    pub input: Option<Signal>,
    /// `θx`, `θy` for the iISS check.
    #[serde(default)]
    pub inputs: Option<(Signal, Signal)>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

/// Validated form of [`SystemKind`].
pub enum Model {
    Linear { a: Matrix, offset: Vector },
    Quadratic { q: Matrix, b: Vector },
    Logistic { data: Matrix, labels: Vector, reg: f64 },
    DoubleWell { dim: usize },
    FiringRate(FiringRateSpec),
    Lure(LureSpec),
    ImplicitNn { spec: ImplicitNNSpec, u: Vector },
    Competitive { phi: Matrix, lambda: f64, u: Vector },
    Network(GainMatrix),
}

fn vector_or_zeros(v: &Option<Vec<f64>>, n: usize, field: &str) -> CliResult<Vector> {
    match v {
        None => Ok(Vector::zeros(n)),
        Some(v) if v.len() == n => Ok(Vector::from_vec(v.clone())),
        Some(v) => Err(CliError::Invalid(format!("{field}: expected {n} entries, found {}", v.len()))),
    }
}

fn square(rows: &Rows, field: &str) -> CliResult<Matrix> {
    let m = rows_to_matrix(rows, field)?;
    if !m.is_square() {
        return Err(CliError::Invalid(format!("{field}: matrix must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Linear(_) => "linear",
            SystemKind::GradientFlow(_) => "gradient_flow",
            SystemKind::FiringRate(_) => "firing_rate",
            SystemKind::Lure(_) => "lure",
            SystemKind::ImplicitNn(_) => "implicit_nn",
            SystemKind::Competitive(_) => "competitive",
            SystemKind::Network(_) => "network",
        }
    }

    pub fn model(&self) -> CliResult<Model> {
        Ok(match self {
            SystemKind::Linear(s) => {
                let a = square(&s.a, "system.linear.A")?;
                let offset = vector_or_zeros(&s.offset, a.nrows(), "system.linear.a")?;
                Model::Linear { a, offset }
            }
            SystemKind::GradientFlow(GradientFlow::Quadratic { q, b }) => {
                let q = square(q, "system.gradient_flow.quadratic.Q")?;
                if (&q - q.transpose()).amax() > 1e-9 * (1.0 + q.amax()) {
                    return Err(CliError::Invalid("system.gradient_flow.quadratic.Q: matrix must be symmetric".into()));
                }
                let b = vector_or_zeros(b, q.nrows(), "system.gradient_flow.quadratic.b")?;
                Model::Quadratic { q, b }
            }
            SystemKind::GradientFlow(GradientFlow::Logistic { data, labels, reg }) => {
                let data = rows_to_matrix(data, "system.gradient_flow.logistic.data")?;
                if labels.len() != data.nrows() {
                    return Err(CliError::Invalid(format!(
                        "system.gradient_flow.logistic.labels: expected {} entries, found {}",
                        data.nrows(),
                        labels.len()
                    )));
                }
                if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
                    return Err(CliError::Invalid(
                        "system.gradient_flow.logistic.labels: labels must be +1 or -1".into(),
                    ));
                }
                if !(*reg >= 0.0) {
                    return Err(CliError::Invalid(format!(
                        "system.gradient_flow.logistic.reg: must be nonnegative, got {reg}"
                    )));
                }
                Model::Logistic { data, labels: Vector::from_vec(labels.clone()), reg: *reg }
            }
            SystemKind::GradientFlow(GradientFlow::DoubleWell { dim }) => {
                if *dim == 0 {
                    return Err(CliError::Invalid("system.gradient_flow.double_well.dim: must be positive".into()));
                }
                Model::DoubleWell { dim: *dim }
            }
            SystemKind::FiringRate(s) => {
                let c = square(&s.c, "system.firing_rate.C")?;
                let a = square(&s.a, "system.firing_rate.A")?;
                let u = vector_or_zeros(&s.u, a.nrows(), "system.firing_rate.u")?;
                Model::FiringRate(
                    FiringRateSpec::new(c, a, s.activation, u).map_err(|e| CliError::core("system.firing_rate", e))?,
                )
            }
            SystemKind::Lure(s) => {
                let a = square(&s.a, "system.lure.A")?;
                let b = rows_to_matrix(&s.b, "system.lure.B")?;
                let c = rows_to_matrix(&s.c, "system.lure.C")?;
                Model::Lure(LureSpec::new(a, b, c, s.rho, s.eta).map_err(|e| CliError::core("system.lure", e))?)
            }
            SystemKind::ImplicitNn(s) => {
                let a = square(&s.a, "system.implicit_nn.A")?;
                let b = rows_to_matrix(&s.b, "system.implicit_nn.B")?;
                let activation = s.activation.unwrap_or(Activation::Relu);
                let spec = ImplicitNNSpec::new(a, b, Vector::from_vec(s.bias.clone()), activation)
                    .map_err(|e| CliError::core("system.implicit_nn", e))?;
                let u = vector_or_zeros(&s.u, spec.input_dim(), "system.implicit_nn.u")?;
                Model::ImplicitNn { spec, u }
            }
            SystemKind::Competitive(s) => {
                let phi = rows_to_matrix(&s.phi, "system.competitive.Phi")?;
                let u = Vector::from_vec(s.u.clone());
                // validates the dictionary
                competitive_network(&phi, &u, s.lambda).map_err(|e| CliError::core("system.competitive", e))?;
                Model::Competitive { phi, lambda: s.lambda, u }
            }
            SystemKind::Network(s) => {
                let g = square(&s.gains, "system.network.gains")?;
                Model::Network(
                    GainMatrix::new(g, s.blocks.clone(), s.mode).map_err(|e| CliError::core("system.network", e))?,
                )
            }
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Linear { a, .. } => a.nrows(),
            Model::Quadratic { q, .. } => q.nrows(),
            Model::Logistic { data, .. } => data.ncols(),
            Model::DoubleWell { dim } => *dim,
            Model::FiringRate(s) => s.dim(),
            Model::Lure(s) => s.dim(),
            Model::ImplicitNn { spec, .. } => spec.dim(),
            Model::Competitive { phi, .. } => phi.ncols(),
            Model::Network(g) => g.blocks(),
        }
    }

    /// The domain given in the spec, else the model's own default box.
    pub fn domain(&self, spec: Option<&DomainSpec>) -> CliResult<BoxDomain> {
        let n = self.dim();
        let Some(d) = spec else {
            return match self {
                Model::ImplicitNn { spec, u } => Ok(spec.default_domain(u)?),
                Model::Competitive { phi, lambda, u } => Ok(competitive_network(phi, u, *lambda)?.domain().clone()),
                _ => Ok(BoxDomain::symmetric(n, 1.0)?),
            };
        };
        match (&d.lo, &d.hi, d.radius) {
            (Some(lo), Some(hi), None) => {
                for (name, v) in [("lo", lo), ("hi", hi)] {
                    if v.len() != n {
                        return Err(CliError::Invalid(format!(
                            "domain.{name}: expected {n} entries, found {}",
                            v.len()
                        )));
                    }
                }
                BoxDomain::new(Vector::from_vec(lo.clone()), Vector::from_vec(hi.clone()))
                    .map_err(|e| CliError::core("domain", e))
            }
            (None, None, Some(r)) => BoxDomain::symmetric(n, r).map_err(|e| CliError::core("domain.radius", e)),
            _ => Err(CliError::Invalid("domain: give either `lo` and `hi` or `radius`".into())),
        }
    }

    /// The autonomous vector field on `domain`.
    pub fn field(&self, domain: BoxDomain) -> CliResult<VectorFieldSpec> {
        let n = self.dim();
        let field = match self {
            Model::Linear { a, offset } => VectorFieldSpec::affine(a.clone(), offset.clone(), domain)?,
            Model::Quadratic { q, b } => VectorFieldSpec::affine(-q, b.clone(), domain)?,
            Model::Logistic { data, labels, reg } => {
                let (x, y, reg) = (data.clone(), labels.clone(), *reg);
                let (x2, y2) = (x.clone(), y.clone());
                let m = x.nrows() as f64;
                VectorFieldSpec::new(
                    n,
                    move |w| {
                        let margins = (&x * w).component_mul(&y);
                        let weights = margins.map(|z| sigmoid(-z)).component_mul(&y);
                        x.transpose() * weights / m - w * reg
                    },
                    domain,
                )?
                .with_jacobian(move |w| {
                    let margins = (&x2 * w).component_mul(&y2);
                    let curvature = margins.map(|z| sigmoid(z) * (1.0 - sigmoid(z)));
                    let weighted = Matrix::from_diagonal(&curvature) * &x2;
                    -(x2.transpose() * weighted / m) - Matrix::identity(n, n) * reg
                })
            }
            Model::DoubleWell { .. } => VectorFieldSpec::new(n, |x| x.map(|v| v - v * v * v), domain)?
                .with_jacobian(|x| Matrix::from_diagonal(&x.map(|v| 1.0 - 3.0 * v * v))),
            Model::FiringRate(s) => s.vector_field(domain)?,
            Model::Lure(s) => s.relu_field(domain)?,
            Model::ImplicitNn { spec, u } => spec.recurrent_field(u)?.with_domain(domain)?,
            Model::Competitive { phi, lambda, u } => competitive_network(phi, u, *lambda)?.with_domain(domain)?,
            Model::Network(g) => VectorFieldSpec::affine(g.entries().clone(), Vector::zeros(n), domain)?,
        };
        Ok(field)
    }

    /// The field with an input channel `θ`: additive for linear and
    /// quadratic models, the bias for firing-rate networks.
    pub fn input_field(&self, domain: BoxDomain, input_domain: BoxDomain) -> CliResult<VectorFieldSpec> {
        let n = self.dim();
        if input_domain.dim() != n {
            return Err(CliError::Invalid(format!(
                "simulation input: expected dimension {n}, found {}",
                input_domain.dim()
            )));
        }
        match self {
            Model::Linear { a, offset } => additive_input(a.clone(), offset.clone(), domain, input_domain),
            Model::Quadratic { q, b } => additive_input(-q, b.clone(), domain, input_domain),
            Model::FiringRate(s) => Ok(s.input_field(domain, input_domain)?),
            _ => Err(CliError::Invalid(
                "this system kind has no input channel; use linear, gradient_flow quadratic or firing_rate".into(),
            )),
        }
    }
}

/// `ẋ = Ax + a + θ`.
fn additive_input(a: Matrix, offset: Vector, domain: BoxDomain, input_domain: BoxDomain) -> CliResult<VectorFieldSpec> {
    let n = a.nrows();
    let jac = a.clone();
    Ok(VectorFieldSpec::parametric(
        n,
        move |x, theta| &a * x + &offset + theta.expect("input"),
        domain,
        Some(input_domain),
    )?
    .with_parametric_jacobian(move |_, _| jac.clone())
    .with_param_jacobian(move |_, _| Matrix::identity(n, n)))
}
