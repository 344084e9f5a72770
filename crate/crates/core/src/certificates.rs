//! Contraction certificates.
//!
//! Linear systems are certified by a Lyapunov solve (weighted ℓ2) or by the
//! Perron weight of a Metzler matrix (weighted ℓ∞). Firing-rate networks and
//! implicit networks have closed forms, Lur'e systems are checked against
//! their block LMI. Local and weak contraction are sampled probes and never
//! certify anything on their own.

use nalgebra::{Cholesky, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::norms::{
    self, check_square, is_negative_semidefinite, log_norm, matrix_norm, spectral_abscissa, sym_max_eigenvalue,
    vector_norm, Matrix, NormSpec, Vector, PSD_TOLERANCE,
};
use crate::serde_rows;
use crate::simulate;
use crate::system::{estimate_osl, BoxDomain, Differentiable, SampledEstimate, Sampler, VectorFieldSpec};

/// Rate (continuous time) or factor (discrete time) of a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Rate(f64),
    Factor(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Weight {
        #[serde(with = "serde_rows")]
        p: Matrix,
    },
    Eta {
        #[serde(with = "serde_rows::vector")]
        eta: Vector,
    },
    WeightMultiplier {
        #[serde(with = "serde_rows")]
        p: Matrix,
        lambda: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "closed_form")]
    ClosedForm,
    #[serde(rename = "lyapunov")]
    Lyapunov,
    #[serde(rename = "perron")]
    Perron,
    #[serde(rename = "lmi_verify")]
    LmiVerify,
    #[serde(rename = "lmi_search")]
    LmiSearch,
    #[serde(rename = "sampled")]
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub norm: NormSpec,
    #[serde(flatten)]
    pub bound: Bound,
    pub witness: Option<Witness>,
    pub method: Method,
    /// Slack of the defining inequality; nonnegative up to tolerance.
    pub margin: f64,
    /// False for sampled evidence.
    pub certified: bool,
}

impl ContractionCertificate {
    /// Continuous-time rate, if this is a rate certificate.
    pub fn rate(&self) -> Option<f64> {
        match self.bound {
            Bound::Rate(c) => Some(c),
            Bound::Factor(_) => None,
        }
    }

    pub fn factor(&self) -> Option<f64> {
        match self.bound {
            Bound::Factor(r) => Some(r),
            Bound::Rate(_) => None,
        }
    }

    /// Wraps a sampled estimate of `osL` as non-certified evidence.
    pub fn sampled(norm: NormSpec, osl: &SampledEstimate) -> Self {
        Self {
            norm,
            bound: Bound::Rate(-osl.value),
            witness: None,
            method: Method::Sampled,
            margin: 0.0,
            certified: false,
        }
    }
}

/// Solves `MᵀX + XM = −Q` by vectorisation.
pub fn solve_lyapunov(m: &Matrix, q: &Matrix) -> Result<Matrix> {
    check_square(m)?;
    let n = m.nrows();
    let id = Matrix::identity(n, n);
    let mt = m.transpose();
    // column-major vec: vec(MᵀX) = (I ⊗ Mᵀ) vec X, vec(XM) = (Mᵀ ⊗ I) vec X
    let k = id.kronecker(&mt) + mt.kronecker(&id);
    let rhs = Vector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = LU::new(k).solve(&rhs).ok_or(Error::SingularLyapunov)?;
    let x = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Weighted-ℓ2 certificate for `ẋ = Ax` at `target_rate`, from
/// `(A + rI)ᵀP + P(A + rI) = −I`.
pub fn lti_l2_certificate(a: &Matrix, target_rate: f64) -> Result<ContractionCertificate> {
    check_square(a)?;
    if !(target_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("target rate must be positive, got {target_rate}")));
    }
    let n = a.nrows();
    let alpha = spectral_abscissa(a)?;
    if alpha >= -target_rate {
        return Err(Error::NotHurwitz { alpha, rate: target_rate });
    }
    let shifted = a + Matrix::identity(n, n) * target_rate;
    let p = solve_lyapunov(&shifted, &Matrix::identity(n, n))?;
    let lhs = a.transpose() * &p + &p * a + &p * (2.0 * target_rate);
    let margin = -sym_max_eigenvalue(&lhs);
    let norm = NormSpec::weighted_l2(p.clone())?;
    Ok(ContractionCertificate {
        norm,
        bound: Bound::Rate(target_rate),
        witness: Some(Witness::Weight { p: p.clone() }),
        method: Method::Lyapunov,
        margin,
        certified: margin >= -1e-8 * sym_max_eigenvalue(&p),
    })
}

pub fn check_metzler(a: &Matrix) -> Result<()> {
    check_square(a)?;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] < 0.0 {
                return Err(Error::NotMetzler { row: i, col: j, value: a[(i, j)] });
            }
        }
    }
    Ok(())
}

/// Weighted-ℓ∞ certificate of a Hurwitz Metzler matrix.
///
/// The weight is `η = −(A − γI)⁻¹𝟙` with `γ` just above `α(A)`; since
/// `(Aη)ᵢ/ηᵢ = γ − 1/ηᵢ` this gives `α(A) ≤ μ∞,η(A) ≤ γ` for any Metzler A,
/// reducible or not, and η is the Perron vector up to `O(γ − α)`.
pub fn metzler_linf_certificate(a: &Matrix) -> Result<ContractionCertificate> {
    check_metzler(a)?;
    let n = a.nrows();
    let alpha = spectral_abscissa(a)?;
    if alpha >= 0.0 {
        return Err(Error::NotHurwitz { alpha, rate: 0.0 });
    }
    let gamma = alpha + 1e-9 * alpha.abs().max(1.0);
    let shifted = a - Matrix::identity(n, n) * gamma;
    let mut eta = LU::new(shifted).solve(&Vector::from_element(n, -1.0)).ok_or(Error::EigenNonConvergence)?;
    if eta.iter().any(|v| !(*v > 0.0)) {
        // γ too close to α for the solve to stay accurate
        return Err(Error::EigenNonConvergence);
    }
    eta /= eta.max();
    let norm = NormSpec::weighted_linf(eta.clone())?;
    let rate = -log_norm(a, &norm)?;
    let ae = a * &eta;
    let row_slack = (0..n).map(|i| -ae[i] / eta[i]).fold(f64::INFINITY, f64::min);
    Ok(ContractionCertificate {
        norm,
        bound: Bound::Rate(rate),
        witness: Some(Witness::Eta { eta }),
        method: Method::Perron,
        margin: row_slack - rate,
        certified: rate > 0.0,
    })
}

/// Certificate for `ẋ = Ax + a`: Perron for Metzler A, else Lyapunov at
/// `target_rate` (default `0.95·|α(A)|`).
pub fn linear_certificate(a: &Matrix, target_rate: Option<f64>) -> Result<ContractionCertificate> {
    if check_metzler(a).is_ok() && target_rate.is_none() {
        return metzler_linf_certificate(a);
    }
    let alpha = spectral_abscissa(a)?;
    let rate = target_rate.unwrap_or(0.95 * -alpha);
    if !(rate > 0.0) {
        return Err(Error::NotHurwitz { alpha, rate: 0.0 });
    }
    lti_l2_certificate(a, rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalenceMode {
    /// `osL ≤ ℓ`.
    Osl,
    /// `Lip ≤ ℓ`.
    Lip,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    /// Verdict of the direct matrix inequality / row conditions.
    pub holds: bool,
    /// `ℓ` minus the quantity it bounds, computed directly.
    pub margin: f64,
    /// The same quantity from `log_norm` / `matrix_norm`.
    pub cross_check: f64,
    pub agrees: bool,
}

/// Direct evaluation of the affine-map equivalences for weighted norms:
///
/// * ℓ2,P osL: `AᵀP + PA ⪯ 2ℓP`; Lip: `AᵀPA ⪯ ℓ²P`,
/// * ℓ∞,η osL: `aᵢᵢ + Σ_{j≠i}|aᵢⱼ|ηⱼ/ηᵢ ≤ ℓ`; Lip: `|A|η ≤ ℓη`.
///
/// The ℓ2 path whitens with a Cholesky factor of P, independent of the
/// eigen square root used by [`norms`].
pub fn affine_equivalence_check(
    a: &Matrix,
    spec: &NormSpec,
    ell: f64,
    mode: EquivalenceMode,
) -> Result<EquivalenceCheck> {
    check_square(a)?;
    let n = a.nrows();
    spec.check_dim(n)?;
    let tol = PSD_TOLERANCE * (1.0 + ell.abs());
    let margin = match spec {
        NormSpec::WeightedL2(_) | NormSpec::L2 => {
            let p = match spec {
                NormSpec::WeightedL2(w) => w.matrix().clone(),
                _ => Matrix::identity(n, n),
            };
            let l = Cholesky::new(p.clone())
                .ok_or(Error::NotPositiveDefinite { min_eigenvalue: norms::sym_eigenvalues(&p).min() })?
                .l();
            let l_inv = l.clone().try_inverse().ok_or(Error::SingularLyapunov)?;
            let whiten = |s: &Matrix| &l_inv * s * l_inv.transpose();
            match mode {
                EquivalenceMode::Osl => {
                    let s = a.transpose() * &p + &p * a - &p * (2.0 * ell);
                    -0.5 * sym_max_eigenvalue(&whiten(&s))
                }
                EquivalenceMode::Lip => {
                    let s = a.transpose() * &p * a;
                    ell - sym_max_eigenvalue(&whiten(&s)).max(0.0).sqrt()
                }
            }
        }
        NormSpec::WeightedLinf(_) | NormSpec::Linf => {
            let eta = match spec {
                NormSpec::WeightedLinf(w) => w.vector().clone(),
                _ => Vector::from_element(n, 1.0),
            };
            let row = |i: usize| -> f64 {
                (0..n)
                    .map(|j| {
                        let w = eta[j] / eta[i];
                        match mode {
                            EquivalenceMode::Osl if i == j => a[(i, i)],
                            _ => a[(i, j)].abs() * w,
                        }
                    })
                    .sum()
            };
            (0..n).map(|i| ell - row(i)).fold(f64::INFINITY, f64::min)
        }
        _ => {
            return Err(Error::UnsupportedNorm { operation: "affine_equivalence_check", norm: spec.name().to_string() })
        }
    };
    let cross_check = match mode {
        EquivalenceMode::Osl => log_norm(a, spec)?,
        EquivalenceMode::Lip => matrix_norm(a, spec)?,
    };
    let holds = margin >= -tol;
    Ok(EquivalenceCheck { holds, margin, cross_check, agrees: holds == (cross_check <= ell + tol) })
}

/// `ẋ = Ax + Bφ(C x)` with `φ` ρ-cocoercive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LureSpec {
    #[serde(with = "serde_rows")]
    pub a: Matrix,
    #[serde(with = "serde_rows")]
    pub b: Matrix,
    #[serde(with = "serde_rows")]
    pub c_out: Matrix,
    pub rho: f64,
    pub eta_rate: f64,
}

impl LureSpec {
    pub fn new(a: Matrix, b: Matrix, c_out: Matrix, rho: f64, eta_rate: f64) -> Result<Self> {
        let s = Self { a, b, c_out, rho, eta_rate };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_square(&self.a)?;
        let n = self.a.nrows();
        if self.b.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.b.nrows() });
        }
        if self.c_out.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.c_out.ncols() });
        }
        if self.c_out.nrows() != self.b.ncols() {
            return Err(Error::DimensionMismatch { expected: self.b.ncols(), found: self.c_out.nrows() });
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.eta_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("eta_rate must be positive, got {}", self.eta_rate)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The closed loop with `φ = relu`, which is 1-cocoercive.
    pub fn relu_field(&self, domain: BoxDomain) -> Result<VectorFieldSpec> {
        let (a, b, c) = (self.a.clone(), self.b.clone(), self.c_out.clone());
        let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
        Ok(VectorFieldSpec::new(self.dim(), move |x| &a * x + &b * (&c * x).map(|y| y.max(0.0)), domain)?
            .with_jacobian(move |x| {
                let slopes = (&c2 * x).map(|y| if y > 0.0 { 1.0 } else { 0.0 });
                &a2 + &b2 * Matrix::from_diagonal(&slopes) * &c2
            }))
    }

    /// The symmetric block matrix of the LMI.
    pub fn lmi_block(&self, p: &Matrix, lambda: f64) -> Matrix {
        let (n, m) = (self.dim(), self.b.ncols());
        let mut blk = Matrix::zeros(n + m, n + m);
        let tl = self.a.transpose() * p + p * &self.a + p * (2.0 * self.eta_rate);
        let tr = p * &self.b + self.c_out.transpose() * lambda;
        blk.view_mut((0, 0), (n, n)).copy_from(&tl);
        blk.view_mut((0, n), (n, m)).copy_from(&tr);
        blk.view_mut((n, 0), (m, n)).copy_from(&tr.transpose());
        blk.view_mut((n, n), (m, m)).copy_from(&(Matrix::identity(m, m) * (-2.0 * lambda * self.rho)));
        blk
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiCheck {
    pub holds: bool,
    /// `−λ_max` of the block matrix.
    pub margin: f64,
}

/// Tests the Lur'e block LMI `⪯ 0` at `(P, λ)`.
pub fn lure_lmi_verify(s: &LureSpec, p: &Matrix, lambda: f64) -> Result<LmiCheck> {
    s.validate()?;
    if p.shape() != (s.dim(), s.dim()) {
        return Err(Error::DimensionMismatch { expected: s.dim(), found: p.nrows() });
    }
    // validates symmetry and definiteness
    norms::L2Weight::new(p.clone())?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let blk = s.lmi_block(p, lambda);
    Ok(LmiCheck { holds: is_negative_semidefinite(&blk), margin: -sym_max_eigenvalue(&blk) })
}

pub fn lure_certificate(s: &LureSpec, p: &Matrix, lambda: f64, method: Method) -> Result<ContractionCertificate> {
    let check = lure_lmi_verify(s, p, lambda)?;
    Ok(ContractionCertificate {
        norm: NormSpec::weighted_l2(p.clone())?,
        bound: Bound::Rate(s.eta_rate),
        witness: Some(Witness::WeightMultiplier { p: p.clone(), lambda }),
        method,
        margin: check.margin,
        certified: check.holds,
    })
}

/// The multiplier grid: 0 and 25 log-spaced points in `[10⁻³, 10³]`.
pub fn lure_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((0..25).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 24.0))).collect()
}

/// Heuristic search for a Lur'e certificate. `P` comes from the Lyapunov
/// solve at rate `eta_rate`; the first verified `λ` on the grid is returned.
/// `None` means no certificate was found, not infeasibility.
pub fn lure_lmi_search(s: &LureSpec) -> Option<ContractionCertificate> {
    s.validate().ok()?;
    let lyap = lti_l2_certificate(&s.a, s.eta_rate).ok()?;
    let Some(Witness::Weight { p }) = lyap.witness else { return None };
    lure_lambda_grid().into_iter().find_map(|lambda| {
        let cert = lure_certificate(s, &p, lambda, Method::LmiSearch).ok()?;
        cert.certified.then_some(cert)
    })
}

/// Scalar activation with slopes in `[d1, d2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    /// Piecewise linear: slope `d2` on `z ≥ 0`, `d1` on `z < 0`.
    Custom {
        d1: f64,
        d2: f64,
    },
}

impl Activation {
    pub fn slopes(&self) -> (f64, f64) {
        match *self {
            Activation::Tanh | Activation::Relu => (0.0, 1.0),
            Activation::Custom { d1, d2 } => (d1, d2),
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Custom { d1, d2 } => {
                if z >= 0.0 {
                    d2 * z
                } else {
                    d1 * z
                }
            }
        }
    }

    /// Derivative, with the right slope at the kink for `Custom` and 0 at
    /// the relu kink.
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Custom { d1, d2 } => {
                if z >= 0.0 {
                    d2
                } else {
                    d1
                }
            }
        }
    }
}

/// `ẋ = −Cx + Φ(Ax + u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiringRateSpec {
    #[serde(with = "serde_rows")]
    pub c: Matrix,
    #[serde(with = "serde_rows")]
    pub a: Matrix,
    pub activation: Activation,
    #[serde(with = "serde_rows::vector")]
    pub u: Vector,
}

impl FiringRateSpec {
    pub fn new(c: Matrix, a: Matrix, activation: Activation, u: Vector) -> Result<Self> {
        let s = Self { c, a, activation, u };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_square(&self.a)?;
        check_square(&self.c)?;
        let n = self.a.nrows();
        if self.c.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.c.nrows() });
        }
        if self.u.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.u.len() });
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.c[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "C must be diagonal; C[{i}][{j}] = {}",
                        self.c[(i, j)]
                    )));
                }
            }
            if self.c[(i, i)] < 0.0 {
                return Err(Error::InvalidArgument(format!("C must be nonnegative; C[{i}][{i}] = {}", self.c[(i, i)])));
            }
        }
        let (d1, d2) = self.activation.slopes();
        if !(d1 <= d2) {
            return Err(Error::InvalidArgument(format!("slopes need d1 <= d2, got ({d1}, {d2})")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The closed-form `max{μ∞(−C + d1·A), μ∞(−C + d2·A)}`.
    pub fn osl_bound(&self) -> Result<f64> {
        self.validate()?;
        let (d1, d2) = self.activation.slopes();
        let m1 = log_norm(&(-&self.c + &self.a * d1), &NormSpec::Linf)?;
        let m2 = log_norm(&(-&self.c + &self.a * d2), &NormSpec::Linf)?;
        Ok(m1.max(m2))
    }

    pub fn vector_field(&self, domain: BoxDomain) -> Result<VectorFieldSpec> {
        self.validate()?;
        let (c, a, u, act) = (self.c.clone(), self.a.clone(), self.u.clone(), self.activation);
        let (c2, a2, u2) = (c.clone(), a.clone(), u.clone());
        Ok(VectorFieldSpec::new(self.dim(), move |x| -(&c * x) + (&a * x + &u).map(|z| act.apply(z)), domain)?
            .with_jacobian(move |x| {
                let d = (&a2 * x + &u2).map(|z| act.derivative(z));
                -&c2 + Matrix::from_diagonal(&d) * &a2
            }))
    }

    /// Same network with the bias replaced by an input channel `θ = u`.
    pub fn input_field(&self, domain: BoxDomain, input_domain: BoxDomain) -> Result<VectorFieldSpec> {
        self.validate()?;
        let n = self.dim();
        let (c, a, act) = (self.c.clone(), self.a.clone(), self.activation);
        let (c2, a2) = (c.clone(), a.clone());
        let a3 = a.clone();
        let nominal = self.u.clone();
        Ok(VectorFieldSpec::parametric(
            n,
            move |x, theta| {
                let th = theta.expect("input");
                -(&c * x) + (&a * x + th).map(|z| act.apply(z))
            },
            domain,
            Some(input_domain),
        )?
        .with_parametric_jacobian(move |x, theta| {
            let d = (&a2 * x + theta.expect("input")).map(|z| act.derivative(z));
            -&c2 + Matrix::from_diagonal(&d) * &a2
        })
        .with_param_jacobian(move |x, theta| Matrix::from_diagonal(&(&a3 * x + theta).map(|z| act.derivative(z))))
        .with_nominal_param(nominal))
    }
}

/// Closed-form ℓ∞ certificate of a firing-rate network.
pub fn firing_rate_osl(s: &FiringRateSpec) -> Result<ContractionCertificate> {
    let osl = s.osl_bound()?;
    if osl >= 0.0 {
        return Err(Error::NotContracting { bound: osl });
    }
    Ok(ContractionCertificate {
        norm: NormSpec::Linf,
        bound: Bound::Rate(-osl),
        witness: None,
        method: Method::ClosedForm,
        margin: 0.0,
        certified: true,
    })
}

/// `x = Φ(Ax + Bu + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitNNSpec {
    #[serde(with = "serde_rows")]
    pub a: Matrix,
    #[serde(with = "serde_rows")]
    pub b: Matrix,
    #[serde(with = "serde_rows::vector")]
    pub bias: Vector,
    #[serde(default = "default_implicit_activation")]
    pub activation: Activation,
}

fn default_implicit_activation() -> Activation {
    Activation::Relu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitNNReport {
    pub well_posed: bool,
    pub mu_inf: f64,
    pub ct_rate: Option<f64>,
    pub alpha_star: Option<f64>,
    pub dt_factor: Option<f64>,
    pub lip_u_to_x: Option<f64>,
    pub rel_robustness_coeff: Option<f64>,
}

impl ImplicitNNSpec {
    pub fn new(a: Matrix, b: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        let s = Self { a, b, bias, activation };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_square(&self.a)?;
        let n = self.a.nrows();
        if self.b.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.b.nrows() });
        }
        if self.bias.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.bias.len() });
        }
        if self.activation.slopes() != (0.0, 1.0) {
            return Err(Error::InvalidArgument("implicit networks need slopes (0, 1)".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn check_input(&self, u: &Vector) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: u.len() });
        }
        Ok(())
    }

    /// A box that contains every fixed point for input `u`: the Euler map is
    /// an ℓ∞ contraction, so `‖x*‖∞ ≤ ‖Φ(Bu + b)‖∞ / (1 − μ₊)`.
    pub fn default_domain(&self, u: &Vector) -> Result<BoxDomain> {
        self.check_input(u)?;
        let mu = log_norm(&self.a, &NormSpec::Linf)?.max(0.0);
        let drive = (&self.b * u + &self.bias).amax();
        let radius = if mu < 1.0 { 1.0 + 2.0 * drive / (1.0 - mu) } else { 10.0 * (1.0 + drive) };
        BoxDomain::symmetric(self.dim(), radius)
    }

    /// `x ↦ (1−α)x + αΦ(Ax + Bu + b)`.
    pub fn iteration_map(&self, u: &Vector, alpha: f64) -> Result<crate::system::DiscreteMapSpec> {
        self.check_input(u)?;
        let n = self.dim();
        let drive = &self.b * u + &self.bias;
        let (a, act) = (self.a.clone(), self.activation);
        let (a2, drive2) = (a.clone(), drive.clone());
        Ok(crate::system::DiscreteMapSpec::new(
            n,
            move |x| x * (1.0 - alpha) + (&a * x + &drive).map(|z| act.apply(z)) * alpha,
            self.default_domain(u)?,
        )?
        .with_jacobian(move |x| {
            let d = (&a2 * x + &drive2).map(|z| act.derivative(z));
            Matrix::identity(n, n) * (1.0 - alpha) + Matrix::from_diagonal(&d) * &a2 * alpha
        }))
    }

    /// `ẋ = −x + Φ(Ax + Bu + b)`.
    pub fn recurrent_field(&self, u: &Vector) -> Result<VectorFieldSpec> {
        self.check_input(u)?;
        let n = self.dim();
        let drive = &self.b * u + &self.bias;
        let (a, act) = (self.a.clone(), self.activation);
        let (a2, drive2) = (a.clone(), drive.clone());
        Ok(VectorFieldSpec::new(n, move |x| -x + (&a * x + &drive).map(|z| act.apply(z)), self.default_domain(u)?)?
            .with_jacobian(move |x| {
                let d = (&a2 * x + &drive2).map(|z| act.derivative(z));
                -Matrix::identity(n, n) + Matrix::from_diagonal(&d) * &a2
            }))
    }
}

/// Well-posedness, rates and robustness constants of an implicit network.
pub fn implicit_nn_analyze(s: &ImplicitNNSpec) -> Result<ImplicitNNReport> {
    s.validate()?;
    let mu = log_norm(&s.a, &NormSpec::Linf)?;
    if !(mu < 1.0) {
        return Ok(ImplicitNNReport {
            well_posed: false,
            mu_inf: mu,
            ct_rate: None,
            alpha_star: None,
            dt_factor: None,
            lip_u_to_x: None,
            rel_robustness_coeff: None,
        });
    }
    let ct_rate = 1.0 - mu.max(0.0);
    let min_diag_neg = s.a.diagonal().min().min(0.0);
    let denom = 1.0 - min_diag_neg;
    let b_norm = if s.b.ncols() == 0 {
        0.0
    } else {
        s.b.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    };
    Ok(ImplicitNNReport {
        well_posed: true,
        mu_inf: mu,
        ct_rate: Some(ct_rate),
        alpha_star: Some(1.0 / denom),
        dt_factor: Some(1.0 - ct_rate / denom),
        lip_u_to_x: Some(b_norm / ct_rate),
        rel_robustness_coeff: Some(1.0 / ct_rate),
    })
}

/// `λ_max(M·DF + DFᵀ·M + Ṁ + 2cM)` at `x`; nonpositive means the
/// Riemannian condition holds there. `m_dot` is the Lie derivative of `M`
/// along F, supplied by the caller.
pub fn riemannian_pointwise_check<F: Differentiable>(
    f: &F,
    m: impl Fn(&Vector) -> Matrix,
    m_dot: impl Fn(&Vector) -> Matrix,
    x: &Vector,
    c: f64,
) -> Result<f64> {
    let mx = m(x);
    // validates symmetry and definiteness
    norms::L2Weight::new(mx.clone())?;
    let j = f.jacobian_at(x)?;
    let s = &mx * &j + j.transpose() * &mx + m_dot(x) + &mx * (2.0 * c);
    Ok(sym_max_eigenvalue(&((&s + s.transpose()) * 0.5)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionBall {
    #[serde(with = "serde_rows::vector")]
    pub center: Vector,
    pub radius: f64,
    /// `c` with `μ(DF) ≤ −c` on the sampled ball.
    pub rate: f64,
    /// `‖F(center)‖`.
    pub residual: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalScan {
    #[serde(with = "serde_rows::vectors")]
    pub points: Vec<Vector>,
    pub mu: Vec<f64>,
    pub ball: Option<ContractionBall>,
}

/// Fraction of `c·r` the centre residual may use.
pub const BALL_SAFETY: f64 = 0.1;
const BALL_GROWTH: f64 = 1.5;
const BALL_SAMPLES: usize = 200;
const BALL_CANDIDATES: usize = 8;

fn newton_polish<F: Differentiable>(f: &F, x0: &Vector) -> Vector {
    let mut x = x0.clone();
    for _ in 0..20 {
        let (Ok(fx), Ok(j)) = (f.eval(&x), f.jacobian_at(&x)) else { break };
        if fx.amax() < 1e-14 {
            break;
        }
        let Some(step) = LU::new(j).solve(&fx) else { break };
        let next = &x - step;
        if !f.domain().contains(&next) {
            break;
        }
        x = next;
    }
    x
}

fn ball_points(center: &Vector, radius: f64, spec: &NormSpec, seed: u64) -> Vec<Vector> {
    let n = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = spec.unit_ball_extent(n);
    let mut pts = vec![center.clone()];
    for k in 0..n {
        for s in [1.0, -1.0] {
            let mut p = center.clone();
            p[k] += s * radius * extent[k];
            pts.push(p);
        }
    }
    while pts.len() < BALL_SAMPLES {
        let d = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let Ok(len) = vector_norm(&d, spec) else { break };
        if len == 0.0 {
            continue;
        }
        let shrink = if pts.len() % 2 == 0 { 1.0 } else { rng.random::<f64>().powf(1.0 / n as f64) };
        pts.push(center + d * (radius * shrink / len));
    }
    pts
}

/// Pointwise log norms over `grid` plus a search for a ball `B(x̄, r)` with
/// sampled `μ(DF) ≤ −c < 0` and `‖F(x̄)‖ ≤ c·r·(1 − safety)`, which is
/// sampled evidence of a forward-invariant contraction region.
pub fn local_contraction_scan<F: Differentiable>(f: &F, spec: &NormSpec, grid: &Sampler) -> Result<LocalScan> {
    let points = grid.points(f.domain())?;
    let mu = exec::try_map(&points, |x| log_norm(&f.jacobian_at(x)?, spec))?;
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| mu[i] < 0.0).collect();
    order.sort_by(|&i, &j| mu[i].total_cmp(&mu[j]));
    let extent = spec.unit_ball_extent(f.dim());
    let max_mu = |center: &Vector, r: f64| -> f64 {
        ball_points(center, r, spec, 0)
            .iter()
            .map(|p| f.jacobian_at(p).and_then(|j| log_norm(&j, spec)).unwrap_or(f64::INFINITY))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut best: Option<ContractionBall> = None;
    let mut tried: Vec<Vector> = Vec::new();
    for &idx in order.iter() {
        if tried.len() >= BALL_CANDIDATES {
            break;
        }
        let center = newton_polish(f, &points[idx]);
        if tried.iter().any(|t| (t - &center).amax() < 1e-9) {
            continue;
        }
        tried.push(center.clone());
        let Ok(fc) = f.eval(&center) else { continue };
        let Ok(residual) = vector_norm(&fc, spec) else { continue };
        let clearance = f.domain().clearance(&center);
        let r_max = (0..center.len()).map(|k| clearance[k] / extent[k]).fold(f64::INFINITY, f64::min);
        if !(r_max > 0.0) {
            continue;
        }
        let mut r = r_max * 1e-3;
        let mut found: Option<ContractionBall> = None;
        loop {
            let c = -max_mu(&center, r);
            if !(c > 0.0) {
                break;
            }
            if residual <= c * r * (1.0 - BALL_SAFETY) {
                found = Some(ContractionBall {
                    center: center.clone(),
                    radius: r,
                    rate: c,
                    residual,
                    label: crate::system::SAMPLED_LABEL.to_string(),
                });
            }
            if r >= r_max {
                break;
            }
            r = (r * BALL_GROWTH).min(r_max);
        }
        if let Some(ball) = found {
            if best.as_ref().is_none_or(|b| ball.radius > b.radius) {
                best = Some(ball);
            }
        }
    }
    Ok(LocalScan { points, mu, ball: best })
}

/// Tolerance separating the three weak-contraction classes.
pub const WEAK_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum WeakClass {
    StrictlyNegative { c: f64 },
    WeaklyNonpositive,
    Indefinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyProbe {
    pub trajectories: usize,
    pub horizon: f64,
    pub bounded: bool,
    pub max_state_norm: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakContractionReport {
    pub class: WeakClass,
    pub sup: SampledEstimate,
    pub probe: DichotomyProbe,
}

/// Integrates a few trajectories from sample points and reports whether
/// they stayed bounded. Empirical only.
pub fn dichotomy_probe(f: &VectorFieldSpec, spec: &NormSpec, trajectories: usize, horizon: f64) -> DichotomyProbe {
    const BLOW_UP: f64 = 1e6;
    let starts = Sampler::RandomUniform { count: trajectories.max(1), seed: 17 }.points(f.domain()).unwrap_or_default();
    let dt = (horizon / 2000.0).min(1e-2);
    let norms: Vec<f64> = exec::map(&starts, |x0| match simulate::integrate(f, x0, (0.0, horizon), dt, None) {
        Ok(tr) => tr.states.iter().map(|x| vector_norm(x, spec).unwrap_or(f64::INFINITY)).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    });
    let max_state_norm = norms.iter().copied().fold(0.0, f64::max);
    let scale = f.domain().diameter().max(1.0);
    DichotomyProbe {
        trajectories: starts.len(),
        horizon,
        bounded: max_state_norm.is_finite() && max_state_norm <= BLOW_UP * scale,
        max_state_norm,
        certified: false,
    }
}

/// Classifies the sampled sup of `μ(DF)` against `±10⁻⁶`.
pub fn weak_contraction_check(
    f: &VectorFieldSpec,
    spec: &NormSpec,
    sampler: &Sampler,
) -> Result<WeakContractionReport> {
    let sup = estimate_osl(f, spec, sampler)?;
    let class = if sup.value < -WEAK_TOLERANCE {
        WeakClass::StrictlyNegative { c: -sup.value }
    } else if sup.value <= WEAK_TOLERANCE {
        WeakClass::WeaklyNonpositive
    } else {
        WeakClass::Indefinite
    };
    let probe = dichotomy_probe(f, spec, 4, 20.0);
    Ok(WeakContractionReport { class, sup, probe })
}
