//! The four subcommands.

use std::path::{Path, PathBuf};

use contraction_core::certificates::{
    firing_rate_osl, implicit_nn_analyze, linear_certificate, local_contraction_scan, lure_lmi_search, Bound,
    ContractionCertificate, Method,
};
use contraction_core::interconnect::{network_certificate, GainMode};
use contraction_core::norms::{log_norm, matrix_norm, operator_norm_between, spectral_summary};
use contraction_core::simulate::{
    default_dt, empirical_contraction_rate, incremental_stability_violation, verify_equilibrium_tracking,
    verify_iiss_bound, BoundNorms, Signal, Trajectory,
};
use contraction_core::system::{estimate_osl, BoxDomain, Sampler, VectorFieldSpec};
use contraction_core::{Error as CoreError, Matrix, NormSpec, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};
use crate::input::{read_json, read_matrix};
use crate::report::{
    CertifyReport, Check, IissSummary, IncrementalSummary, LognormReport, Report, ScanReport, SimulateReport,
    TrackingSummary,
};
use crate::spec::{Model, SimulationSpec, SystemSpecFile};

/// Flags shared by the subcommands.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub norm: Option<NormSpec>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_span: Option<(f64, f64)>,
    pub out: Option<PathBuf>,
    pub timestamp: bool,
}

impl Options {
    fn out_dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new("."))
    }
}

/// A finished command: the JSON report and whether the check passed.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub command: &'static str,
    pub json: String,
    pub passed: bool,
    /// Printed to stderr on a negative result.
    pub message: Option<String>,
}

/// Tolerance on `‖x−y‖ ≤ e^{−ct}‖x₀−y₀‖(1 + tol)`.
const OVERSHOOT_TOLERANCE: f64 = 1e-2;
/// Relative tolerance of the iISS bound.
const IISS_TOLERANCE: f64 = 1e-3;
const DEFAULT_PAIRS: u64 = 10;
/// Time samples per signal when sizing the input box and the input gain.
const INPUT_SAMPLES: usize = 16;

fn finish<T: serde::Serialize + serde::de::DeserializeOwned>(
    command: &'static str,
    opts: &Options,
    body: T,
    passed: bool,
    message: Option<String>,
) -> CliResult<Outcome> {
    let json = Report::new(command, opts.timestamp, body).to_json();
    if let Some(dir) = &opts.out {
        write_file(&dir.join(format!("{command}.json")), json.as_bytes())?;
    }
    Ok(Outcome { command, json, passed, message })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn sampler(n: usize, seed: Option<u64>) -> Sampler {
    match (Sampler::default_for(n), seed) {
        (Sampler::LatinHypercube { count, .. }, Some(seed)) => Sampler::LatinHypercube { count, seed },
        (s, _) => s,
    }
}

pub fn lognorm(matrix: &Path, opts: &Options) -> CliResult<Outcome> {
    let a = read_matrix(matrix)?;
    let norm = opts.norm.clone().unwrap_or(NormSpec::L2);
    let lognorm = log_norm(&a, &norm)?;
    let matrix_norm = match matrix_norm(&a, &norm) {
        Ok(v) => Some(v),
        Err(CoreError::UnsupportedNorm { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let spectral = spectral_summary(&a)?;
    finish("lognorm", opts, LognormReport { norm, dim: a.nrows(), lognorm, matrix_norm, spectral }, true, None)
}

fn load(spec: &Path) -> CliResult<(SystemSpecFile, Model)> {
    let file: SystemSpecFile = read_json(spec)?;
    let model = file.system.model()?;
    if let Some(norm) = &file.norm {
        norm.check_dim(model.dim()).map_err(|e| CliError::core("norm", e))?;
    }
    Ok((file, model))
}

fn closed_form(norm: NormSpec, rate: f64) -> ContractionCertificate {
    ContractionCertificate {
        norm,
        bound: Bound::Rate(rate),
        witness: None,
        method: Method::ClosedForm,
        margin: 0.0,
        certified: true,
    }
}

fn found(kind: &str, cert: ContractionCertificate) -> CertifyReport {
    CertifyReport {
        kind: kind.to_string(),
        found: true,
        rate: cert.rate(),
        certificate: Some(cert),
        network: None,
        implicit_nn: None,
        sampled: None,
        message: None,
    }
}

fn not_found(kind: &str, reason: String) -> CertifyReport {
    CertifyReport {
        kind: kind.to_string(),
        found: false,
        rate: None,
        certificate: None,
        network: None,
        implicit_nn: None,
        sampled: None,
        message: Some(format!("no certificate found: {reason}")),
    }
}

/// Closed form in the requested norm if it certifies, else Perron (Metzler)
/// or Lyapunov.
fn certify_linear(kind: &str, a: &Matrix, norm: Option<&NormSpec>) -> CliResult<CertifyReport> {
    if let Some(norm) = norm {
        let mu = log_norm(a, norm)?;
        if mu < 0.0 {
            return Ok(found(kind, closed_form(norm.clone(), -mu)));
        }
    }
    match linear_certificate(a, None) {
        Ok(cert) if cert.certified => Ok(found(kind, cert)),
        Ok(cert) => Ok(not_found(kind, format!("{:?} certificate has margin {:e}", cert.method, cert.margin))),
        Err(CoreError::NotHurwitz { alpha, .. }) => {
            Ok(not_found(kind, format!("spectral abscissa {alpha} is not negative")))
        }
        Err(e) => Err(e.into()),
    }
}

/// Sampled one-sided Lipschitz bound; evidence, not a certificate.
fn certify_sampled(kind: &str, field: &VectorFieldSpec, norm: NormSpec, seed: Option<u64>) -> CliResult<CertifyReport> {
    let est = estimate_osl(field, &norm, &sampler(field_dim(field), seed))?;
    let mut report = if est.value < 0.0 {
        found(kind, ContractionCertificate::sampled(norm, &est))
    } else {
        not_found(kind, format!("sampled one-sided Lipschitz bound {} is not negative", est.value))
    };
    report.sampled = Some(est);
    Ok(report)
}

fn field_dim(f: &VectorFieldSpec) -> usize {
    contraction_core::system::Differentiable::dim(f)
}

fn certify_model(kind: &str, file: &SystemSpecFile, model: &Model, opts: &Options) -> CliResult<CertifyReport> {
    let norm = opts.norm.clone().or_else(|| file.norm.clone());
    let sampled = |default: NormSpec| -> CliResult<CertifyReport> {
        let field = model.field(model.domain(file.domain.as_ref())?)?;
        certify_sampled(kind, &field, norm.clone().unwrap_or(default), opts.seed)
    };
    match model {
        Model::Linear { a, .. } => certify_linear(kind, a, norm.as_ref()),
        Model::Quadratic { q, .. } => certify_linear(kind, &-q, Some(&norm.clone().unwrap_or(NormSpec::L2))),
        // the Hessian is at least reg·I everywhere
        Model::Logistic { reg, .. } if *reg > 0.0 && norm.as_ref().is_none_or(|n| *n == NormSpec::L2) => {
            Ok(found(kind, closed_form(NormSpec::L2, *reg)))
        }
        Model::Logistic { .. } | Model::DoubleWell { .. } => sampled(NormSpec::L2),
        Model::Competitive { .. } => sampled(NormSpec::Linf),
        Model::FiringRate(s) => match firing_rate_osl(s) {
            Ok(cert) => Ok(found(kind, cert)),
            Err(CoreError::NotContracting { bound }) => {
                Ok(not_found(kind, format!("closed-form one-sided Lipschitz bound {bound} is not negative")))
            }
            Err(e) => Err(e.into()),
        },
        Model::Lure(s) => Ok(match lure_lmi_search(s) {
            Some(cert) => found(kind, cert),
            None => not_found(kind, format!("no multiplier on the grid verifies rate {}", s.eta_rate)),
        }),
        Model::ImplicitNn { spec, .. } => {
            let analysis = implicit_nn_analyze(spec)?;
            let mut report = match analysis.ct_rate {
                Some(rate) if analysis.well_posed => found(kind, closed_form(NormSpec::Linf, rate)),
                _ => not_found(kind, format!("mu_inf(A) = {} is not below 1", analysis.mu_inf)),
            };
            report.implicit_nn = Some(analysis);
            Ok(report)
        }
        Model::Network(g) => match network_certificate(g)? {
            Some(net) => {
                let mut report = found(kind, net.gain_certificate.clone());
                report.rate = Some(net.value);
                report.network = Some(net);
                Ok(report)
            }
            None => Ok(not_found(
                kind,
                match g.mode() {
                    GainMode::Continuous => "gain matrix is not Hurwitz".into(),
                    GainMode::Discrete => "gain matrix is not Schur stable".into(),
                },
            )),
        },
    }
}

pub fn certify(spec: &Path, opts: &Options) -> CliResult<Outcome> {
    let (file, model) = load(spec)?;
    let kind = file.system.name();
    let report = certify_model(kind, &file, &model, opts)?;
    let (passed, message) = (report.found, report.message.clone());
    finish("certify", opts, report, passed, message)
}

fn random_state(domain: &BoxDomain, rng: &mut ChaCha8Rng) -> Vector {
    let t: Vec<f64> = (0..domain.dim()).map(|_| rng.random::<f64>()).collect();
    domain.at_fraction(&t)
}

/// The unweighted norm of the same family, for input channels.
fn input_norm(state: &NormSpec) -> NormSpec {
    match state {
        NormSpec::WeightedL2(_) => NormSpec::L2,
        NormSpec::WeightedLinf(_) => NormSpec::Linf,
        other => other.clone(),
    }
}

fn signal_samples(signals: &[&Signal], t_span: (f64, f64)) -> Vec<Vector> {
    let mut out = Vec::new();
    for s in signals {
        for k in 0..=INPUT_SAMPLES {
            out.push(s.eval(t_span.0 + (t_span.1 - t_span.0) * k as f64 / INPUT_SAMPLES as f64));
        }
    }
    out
}

/// Bounding box of the sampled signal values, padded so it is never flat.
fn input_box(samples: &[Vector]) -> CliResult<BoxDomain> {
    let m = samples[0].len();
    let lo = Vector::from_fn(m, |i, _| samples.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min));
    let hi = Vector::from_fn(m, |i, _| samples.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max));
    let pad = Vector::from_fn(m, |i, _| 1e-6 * (1.0 + lo[i].abs().max(hi[i].abs())));
    Ok(BoxDomain::new(&lo - &pad, &hi + &pad)?)
}

/// Sampled `sup ‖∂F/∂θ‖` from the input norm to the state norm.
fn input_gain(
    field: &VectorFieldSpec,
    thetas: &[Vector],
    input: &NormSpec,
    state: &NormSpec,
    seed: Option<u64>,
) -> CliResult<f64> {
    let points = sampler(field_dim(field), seed).points(contraction_core::system::Differentiable::domain(field))?;
    let mut ell: f64 = 0.0;
    for x in &points {
        for theta in thetas {
            ell = ell.max(operator_norm_between(&field.param_jacobian_at(x, theta)?, input, state)?);
        }
    }
    Ok(ell)
}

fn save_csv(dir: &Path, name: String, traj: &Trajectory, files: &mut Vec<String>) -> CliResult<()> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir.join(&name), &buf)?;
    files.push(name);
    Ok(())
}

pub fn simulate(spec: &Path, check: Check, opts: &Options) -> CliResult<Outcome> {
    let (file, model) = load(spec)?;
    let kind = file.system.name();
    let sim: SimulationSpec = file
        .simulation
        .clone()
        .ok_or_else(|| CliError::Invalid("simulate needs a `simulation` block in the spec".into()))?;
    if let Model::Network(g) = &model {
        if g.mode() == GainMode::Discrete {
            return Err(CliError::Invalid("discrete-time networks cannot be simulated".into()));
        }
    }
    let cert = certify_model(kind, &file, &model, opts)?;
    let cert_norm = cert.certificate.as_ref().map(|c| c.norm.clone());
    let (rate, rate_source) = match (sim.rate, cert.rate) {
        (Some(r), _) => (r, "spec"),
        (None, Some(r)) if cert.found => (r, "certificate"),
        _ => {
            let reason = cert.message.unwrap_or_else(|| "no certificate found".into());
            return Err(CliError::Negative(format!("{reason}; set simulation.rate to check a rate")));
        }
    };
    if !(rate > 0.0) {
        return Err(CliError::Invalid(format!("simulation.rate must be positive, got {rate}")));
    }
    let norm = cert_norm.or_else(|| opts.norm.clone()).or_else(|| file.norm.clone()).unwrap_or(NormSpec::L2);
    let t_span = opts.t_span.or(sim.t_span).unwrap_or((0.0, 10.0 / rate));
    let dt = opts.dt.or(sim.dt).unwrap_or_else(|| default_dt(rate));
    let seeds: Vec<u64> = match (&sim.seeds, opts.seed) {
        (Some(s), None) => s.clone(),
        (Some(s), Some(base)) => (base..base + s.len() as u64).collect(),
        (None, base) => {
            let base = base.unwrap_or(0);
            (base..base + DEFAULT_PAIRS).collect()
        }
    };
    if seeds.is_empty() {
        return Err(CliError::Invalid("simulation.seeds must not be empty".into()));
    }
    let domain = model.domain(file.domain.as_ref())?;
    let pairs: Vec<(Vector, Vector)> = seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (random_state(&domain, &mut rng), random_state(&domain, &mut rng))
        })
        .collect();
    let dir = opts.out_dir();
    let mut files = Vec::new();
    let mut report = SimulateReport {
        kind: kind.to_string(),
        check,
        passes: false,
        norm: norm.clone(),
        rate,
        rate_source: rate_source.to_string(),
        t_span,
        dt,
        incremental: None,
        iiss: None,
        tracking: None,
        csv: Vec::new(),
    };
    match check {
        Check::Incremental => {
            let field = model.field(domain)?;
            let est = empirical_contraction_rate(&field, &norm, &pairs, t_span, dt, Some((rate, OVERSHOOT_TOLERANCE)))?;
            let overshoot = est.overshoot.clone().expect("rate supplied");
            let mut max_violation = f64::NEG_INFINITY;
            for (k, (x, y)) in est.trajectories.iter().enumerate() {
                max_violation = max_violation.max(incremental_stability_violation(x, y, &norm, rate)?);
                save_csv(dir, format!("pair_{k}_x.csv"), x, &mut files)?;
                save_csv(dir, format!("pair_{k}_y.csv"), y, &mut files)?;
            }
            report.passes = overshoot.passes;
            report.incremental = Some(IncrementalSummary {
                pairs: pairs.len(),
                max_ratio: overshoot.max_ratio,
                tolerance: overshoot.tolerance,
                max_violation,
                empirical_rate: est.rate,
            });
        }
        Check::Iiss => {
            let (tx, ty) = sim.inputs.as_ref().ok_or_else(|| {
                CliError::Invalid("the iiss check needs simulation.inputs = [theta_x, theta_y]".into())
            })?;
            for s in [tx, ty] {
                s.validate().map_err(|e| CliError::core("simulation.inputs", e))?;
            }
            let samples = signal_samples(&[tx, ty], t_span);
            let field = model.input_field(domain, input_box(&samples)?)?;
            let inorm = input_norm(&norm);
            let ell = input_gain(&field, &samples, &inorm, &norm, opts.seed)?;
            let norms = BoundNorms { state: &norm, input: &inorm };
            let mut worst = (f64::NEG_INFINITY, t_span.0);
            let mut scale: f64 = 0.0;
            for (k, (x0, y0)) in pairs.iter().enumerate() {
                let check = verify_iiss_bound(&field, norms.clone(), rate, ell, x0, y0, tx, ty, t_span, dt)?;
                if check.max_violation > worst.0 {
                    worst = (check.max_violation, check.time_of_max);
                }
                scale = scale.max(contraction_core::norms::vector_norm(&(x0 - y0), &norm)?);
                save_csv(dir, format!("pair_{k}_x.csv"), &check.trajectories[0], &mut files)?;
                save_csv(dir, format!("pair_{k}_y.csv"), &check.trajectories[1], &mut files)?;
            }
            let tolerance = IISS_TOLERANCE * (1.0 + scale);
            report.passes = worst.0 <= tolerance;
            report.iiss = Some(IissSummary {
                pairs: pairs.len(),
                ell,
                input_norm: inorm,
                max_violation: worst.0,
                time_of_max: worst.1,
                tolerance,
            });
        }
        Check::Tracking => {
            let theta = sim
                .input
                .as_ref()
                .ok_or_else(|| CliError::Invalid("the tracking check needs simulation.input".into()))?;
            theta.validate().map_err(|e| CliError::core("simulation.input", e))?;
            let samples = signal_samples(&[theta], t_span);
            let x0 = match &sim.x0 {
                Some(v) if v.len() == model.dim() => Vector::from_vec(v.clone()),
                Some(v) => {
                    return Err(CliError::Invalid(format!(
                        "simulation.x0: expected {} entries, found {}",
                        model.dim(),
                        v.len()
                    )))
                }
                None => domain.center(),
            };
            let field = model.input_field(domain, input_box(&samples)?)?;
            let inorm = input_norm(&norm);
            let ell = input_gain(&field, &samples, &inorm, &norm, opts.seed)?;
            let check = verify_equilibrium_tracking(
                &field,
                BoundNorms { state: &norm, input: &inorm },
                rate,
                ell,
                theta,
                &x0,
                t_span,
                dt,
            )?;
            if let Some(traj) = &check.trajectory {
                save_csv(dir, "tracking.csv".into(), traj, &mut files)?;
            }
            report.passes = check.tail_error <= check.asymptotic_bound * (1.0 + OVERSHOOT_TOLERANCE) + 1e-9;
            report.tracking = Some(TrackingSummary {
                ell,
                input_norm: inorm,
                tail_error: check.tail_error,
                asymptotic_bound: check.asymptotic_bound,
                max_violation: check.max_violation,
                euler_step: check.euler_step,
            });
        }
    }
    report.csv = files;
    let passed = report.passes;
    let message = (!passed).then(|| format!("{check:?} bound violated; see the report"));
    finish("simulate", opts, report, passed, message)
}

/// Largest state dimension with grid output.
pub const MAX_SCAN_DIM: usize = 3;

pub fn scan(spec: &Path, grid: usize, opts: &Options) -> CliResult<Outcome> {
    let (file, model) = load(spec)?;
    let n = model.dim();
    if n > MAX_SCAN_DIM {
        return Err(CliError::Invalid(format!(
            "state dimension {n} is too large for a grid scan (limit {MAX_SCAN_DIM}); use `certify`, which samples the domain instead"
        )));
    }
    if grid < 2 {
        return Err(CliError::Invalid(format!("--grid must be at least 2, got {grid}")));
    }
    let norm = opts.norm.clone().or_else(|| file.norm.clone()).unwrap_or(NormSpec::L2);
    norm.check_dim(n).map_err(|e| CliError::core("norm", e))?;
    let field = model.field(model.domain(file.domain.as_ref())?)?;
    let result = local_contraction_scan(&field, &norm, &Sampler::UniformGrid { points_per_axis: grid })?;
    let mut csv = (1..=n).map(|i| format!("x_{i}")).collect::<Vec<_>>().join(",") + ",mu\n";
    for (x, mu) in result.points.iter().zip(&result.mu) {
        let row: Vec<String> = x.iter().chain(std::iter::once(mu)).map(f64::to_string).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let name = "scan.csv".to_string();
    write_file(&opts.out_dir().join(&name), csv.as_bytes())?;
    let count = result.mu.len();
    let report = ScanReport {
        kind: file.system.name().to_string(),
        norm,
        grid,
        points: count,
        mu_min: result.mu.iter().copied().fold(f64::INFINITY, f64::min),
        mu_max: result.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        negative_fraction: result.mu.iter().filter(|m| **m < 0.0).count() as f64 / count as f64,
        ball: result.ball,
        csv: name,
    };
    finish("scan", opts, report, true, None)
}
