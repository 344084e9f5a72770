//! Networks of contracting subsystems.
//!
//! Subsystem `i` contracts at rate `cᵢ` in its own norm and depends on
//! subsystem `j` with Lipschitz gain `ℓᵢⱼ`. If the Metzler gain matrix `Γ`
//! (diagonal `−cᵢ`, off-diagonal `ℓᵢⱼ`) is Hurwitz, the network contracts at
//! rate `|α(Γ)|`. In discrete time `Γ` holds per-block factors and must be
//! Schur stable.

use serde::{Deserialize, Serialize};

use crate::certificates::{metzler_linf_certificate, ContractionCertificate};
use crate::error::{Error, Result};
use crate::exec;
use crate::norms::{log_norm, operator_norm_between, spectral_summary, Matrix, NormSpec, Vector};
use crate::serde_rows;
use crate::system::{Differentiable, Sampler, SAMPLED_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    Continuous,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    #[serde(with = "serde_rows")]
    entries: Matrix,
    block_dims: Vec<usize>,
    mode: GainMode,
}

impl GainMatrix {
    /// Validates a matrix given directly: Metzler with negative diagonal in
    /// continuous mode, entrywise nonnegative in discrete mode.
    pub fn new(entries: Matrix, block_dims: Option<Vec<usize>>, mode: GainMode) -> Result<Self> {
        crate::norms::check_square(&entries)?;
        let k = entries.nrows();
        let block_dims = block_dims.unwrap_or_else(|| vec![1; k]);
        if block_dims.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: block_dims.len() });
        }
        if block_dims.contains(&0) {
            return Err(Error::InvalidArgument("block dimensions must be positive".into()));
        }
        for i in 0..k {
            for j in 0..k {
                let g = entries[(i, j)];
                if !g.is_finite() {
                    return Err(Error::InvalidArgument(format!("gain matrix entry ({i}, {j}) is not finite")));
                }
                if i == j {
                    match mode {
                        GainMode::Continuous if !(g < 0.0) => {
                            return Err(Error::InvalidArgument(format!(
                                "rate of subsystem {i} must be positive, got {}",
                                -g
                            )))
                        }
                        GainMode::Discrete if g < 0.0 => {
                            return Err(Error::InvalidArgument(format!(
                                "factor of subsystem {i} must be nonnegative, got {g}"
                            )))
                        }
                        _ => {}
                    }
                } else if g < 0.0 {
                    return Err(Error::InvalidArgument(format!("gain l[{i}][{j}] must be nonnegative, got {g}")));
                }
            }
        }
        Ok(Self { entries, block_dims, mode })
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn mode(&self) -> GainMode {
        self.mode
    }

    pub fn blocks(&self) -> usize {
        self.entries.nrows()
    }
}

/// Assembles `Γ` from rates (continuous) or factors (discrete) and the
/// cross-gain table; the diagonal of `gains` is ignored.
pub fn build_gain_matrix(
    rates: &[f64],
    gains: &Matrix,
    block_dims: Option<Vec<usize>>,
    mode: GainMode,
) -> Result<GainMatrix> {
    let k = rates.len();
    if gains.shape() != (k, k) {
        return Err(Error::DimensionMismatch { expected: k, found: gains.nrows() });
    }
    for (i, &c) in rates.iter().enumerate() {
        let bad = match mode {
            GainMode::Continuous => !(c > 0.0),
            GainMode::Discrete => !(c >= 0.0),
        };
        if bad {
            return Err(Error::InvalidArgument(format!("subsystem {i}: invalid rate/factor {c}")));
        }
    }
    let entries = Matrix::from_fn(k, k, |i, j| {
        if i != j {
            gains[(i, j)]
        } else {
            match mode {
                GainMode::Continuous => -rates[i],
                GainMode::Discrete => rates[i],
            }
        }
    });
    GainMatrix::new(entries, block_dims, mode)
}

/// `|α(Γ)|` if `Γ` is Hurwitz (continuous), `ρ(Γ)` if Schur (discrete).
pub fn network_rate(g: &GainMatrix) -> Result<Option<f64>> {
    let s = spectral_summary(&g.entries)?;
    Ok(match g.mode {
        GainMode::Continuous => (s.alpha < 0.0).then_some(-s.alpha),
        GainMode::Discrete => (s.rho < 1.0).then_some(s.rho),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCertificate {
    pub mode: GainMode,
    /// Rate (continuous) or factor (discrete).
    pub value: f64,
    /// Block weights of the composite norm `maxᵢ ‖xᵢ‖ᵢ/ηᵢ`.
    #[serde(with = "serde_rows::vector")]
    pub eta: Vector,
    /// Value implied by the η-weighted row condition on `Γ`.
    pub eta_value: f64,
    pub gain_certificate: ContractionCertificate,
    pub note: String,
}

/// Network rate together with the weight of one valid composite norm,
/// `‖x‖ = maxᵢ ‖xᵢ‖ᵢ/ηᵢ`, from the Perron certificate of `Γ` (or `Γ − I`
/// in discrete mode).
pub fn network_certificate(g: &GainMatrix) -> Result<Option<NetworkCertificate>> {
    let Some(value) = network_rate(g)? else { return Ok(None) };
    let k = g.blocks();
    let metzler = match g.mode {
        GainMode::Continuous => g.entries.clone(),
        GainMode::Discrete => &g.entries - Matrix::identity(k, k),
    };
    let cert = metzler_linf_certificate(&metzler)?;
    let eta = match &cert.witness {
        Some(crate::certificates::Witness::Eta { eta }) => eta.clone(),
        _ => return Err(Error::EigenNonConvergence),
    };
    let mu = log_norm(&metzler, &cert.norm)?;
    let eta_value = match g.mode {
        GainMode::Continuous => -mu,
        GainMode::Discrete => 1.0 + mu,
    };
    Ok(Some(NetworkCertificate {
        mode: g.mode,
        value,
        eta,
        eta_value,
        gain_certificate: cert,
        note: "composite norm max_i |x_i|_i / eta_i is one valid choice".into(),
    }))
}

/// Sampled subsystem rates and cross gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemGains {
    /// `cᵢ = −sup μᵢ(∂Fᵢ/∂xᵢ)`; may be nonpositive for non-contracting blocks.
    pub rates: Vec<f64>,
    /// `ℓᵢⱼ = sup ‖∂Fᵢ/∂xⱼ‖` from the block-j norm to the block-i norm.
    #[serde(with = "serde_rows")]
    pub gains: Matrix,
    pub partition: Vec<usize>,
    pub samples: usize,
    pub label: String,
}

impl SubsystemGains {
    pub fn gain_matrix(&self) -> Result<GainMatrix> {
        build_gain_matrix(&self.rates, &self.gains, Some(self.partition.clone()), GainMode::Continuous)
    }
}

/// Estimates rates and gains of the blocks of `f` given by `partition`,
/// each block measured in its own norm.
pub fn subsystem_gains_from_fields<F: Differentiable>(
    f: &F,
    partition: &[usize],
    specs: &[NormSpec],
    sampler: &Sampler,
) -> Result<SubsystemGains> {
    let total: usize = partition.iter().sum();
    if total != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: total });
    }
    if specs.len() != partition.len() {
        return Err(Error::DimensionMismatch { expected: partition.len(), found: specs.len() });
    }
    if partition.contains(&0) {
        return Err(Error::InvalidArgument("partition blocks must be nonempty".into()));
    }
    for (spec, &d) in specs.iter().zip(partition) {
        spec.check_dim(d)?;
    }
    let k = partition.len();
    let offsets: Vec<usize> = partition
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let points = sampler.points(f.domain())?;
    let per_point = exec::try_map(&points, |x| -> Result<(Vec<f64>, Matrix)> {
        let j = f.jacobian_at(x)?;
        let block = |r: usize, c: usize| j.view((offsets[r], offsets[c]), (partition[r], partition[c])).into_owned();
        let mut mus = vec![0.0; k];
        let mut gains = Matrix::zeros(k, k);
        for r in 0..k {
            mus[r] = log_norm(&block(r, r), &specs[r])?;
            for c in 0..k {
                if r != c {
                    gains[(r, c)] = operator_norm_between(&block(r, c), &specs[c], &specs[r])?;
                }
            }
        }
        Ok((mus, gains))
    })?;
    let mut sup_mu = vec![f64::NEG_INFINITY; k];
    let mut gains = Matrix::zeros(k, k);
    for (mus, g) in &per_point {
        for r in 0..k {
            sup_mu[r] = sup_mu[r].max(mus[r]);
        }
        gains = gains.zip_map(g, f64::max);
    }
    Ok(SubsystemGains {
        rates: sup_mu.iter().map(|m| -m).collect(),
        gains,
        partition: partition.to_vec(),
        samples: points.len(),
        label: SAMPLED_LABEL.to_string(),
    })
}
