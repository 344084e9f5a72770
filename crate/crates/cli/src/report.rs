//! JSON reports. Every report carries [`SCHEMA_VERSION`].

use contraction_core::certificates::{ContractionBall, ContractionCertificate, ImplicitNNReport};
use contraction_core::interconnect::NetworkCertificate;
use contraction_core::norms::SpectralSummary;
use contraction_core::system::SampledEstimate;
use contraction_core::NormSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Report<T> {
    pub fn new(command: &str, timestamp: bool, body: T) -> Self {
        let generated_at_unix = timestamp
            .then(|| std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        Self { schema_version: SCHEMA_VERSION, command: command.to_string(), generated_at_unix, body }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Parses a report, rejecting other schema versions.
    pub fn parse(text: &str) -> Result<Self, String> {
        let r: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(format!("schema version {} is not {SCHEMA_VERSION}", r.schema_version));
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LognormReport {
    pub norm: NormSpec,
    pub dim: usize,
    pub lognorm: f64,
    /// Induced matrix norm, when the norm has a closed form.
    pub matrix_norm: Option<f64>,
    pub spectral: SpectralSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub kind: String,
    pub found: bool,
    /// Contraction rate (or factor, for discrete networks).
    pub rate: Option<f64>,
    pub certificate: Option<ContractionCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_nn: Option<ImplicitNNReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<SampledEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Incremental,
    Iiss,
    Tracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalSummary {
    pub pairs: usize,
    /// `max_t ‖x−y‖ / (e^{−ct}‖x₀−y₀‖)`.
    pub max_ratio: f64,
    pub tolerance: f64,
    /// `max_t ‖x−y‖ − e^{−ct}‖x₀−y₀‖`.
    pub max_violation: f64,
    pub empirical_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IissSummary {
    pub pairs: usize,
    /// Input gain `ℓ`, sampled.
    pub ell: f64,
    pub input_norm: NormSpec,
    pub max_violation: f64,
    pub time_of_max: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub ell: f64,
    pub input_norm: NormSpec,
    pub tail_error: f64,
    pub asymptotic_bound: f64,
    pub max_violation: f64,
    pub euler_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub kind: String,
    pub check: Check,
    pub passes: bool,
    pub norm: NormSpec,
    pub rate: f64,
    /// `certificate` or `spec`.
    pub rate_source: String,
    pub t_span: (f64, f64),
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incremental: Option<IncrementalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iiss: Option<IissSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingSummary>,
    /// Trajectory files, relative to the output directory.
    pub csv: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub kind: String,
    pub norm: NormSpec,
    pub grid: usize,
    pub points: usize,
    pub mu_min: f64,
    pub mu_max: f64,
    pub negative_fraction: f64,
    pub ball: Option<ContractionBall>,
    pub csv: String,
}
