use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contraction_cli::report::{CertifyReport, LognormReport, Report, ScanReport, SimulateReport, SCHEMA_VERSION};
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contraction-cert"))
}

fn run_in(dir: &Path, args: &[&str]) -> Run {
    let Output { status, stdout, stderr } = exe().current_dir(dir).args(args).output().expect("binary runs");
    Run {
        code: status.code().expect("exited"),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(dir: &TempDir, args: &[&str]) -> Run {
    run_in(dir.path(), args)
}

const FIRING: &str = r#"{"system": {"firing_rate": {"C": [[1, 0], [0, 1]], "A": [[0.25, 0.25], [0.25, 0.25]]}},
  "simulation": {"t_span": [0, 12], "dt": 0.002, "seeds": [0, 1, 2, 3]}}"#;

const SCALAR: &str = r#"{"system": {"linear": {"A": [[-1]]}},
  "simulation": {"t_span": [0, 10], "dt": 0.001, "seeds": [0, 1],
    "inputs": [{"kind": "sinusoid", "amplitude": [1], "frequency": 1, "phase": 0, "offset": [0]},
               {"kind": "constant", "value": [0.5]}],
    "input": {"kind": "sinusoid", "amplitude": [1], "frequency": 0.5, "phase": 0, "offset": [0]}}}"#;

#[test]
fn lognorm_of_identity_in_linf_is_one() {
    let dir = TempDir::new().unwrap();
    write(&dir, "id.json", "[[1,0,0],[0,1,0],[0,0,1]]");
    let r = run(&dir, &["lognorm", "id.json", "--norm", "linf", "--no-timestamp"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<LognormReport>::parse(&r.stdout).unwrap();
    assert_eq!(rep.body.lognorm, 1.0);
    assert_eq!(rep.body.spectral.rho, 1.0);
}

#[test]
fn lognorm_of_skew_matrix_in_l2_is_zero() {
    let dir = TempDir::new().unwrap();
    write(&dir, "skew.json", r#"{"matrix": [[0, 1], [-1, 0]]}"#);
    let r = run(&dir, &["lognorm", "skew.json", "--norm", "l2"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<LognormReport>::parse(&r.stdout).unwrap();
    assert!(rep.body.lognorm.abs() < 1e-12);
    assert!(rep.generated_at_unix.is_some());
}

#[test]
fn weighted_norm_flags_read_weight_files() {
    let dir = TempDir::new().unwrap();
    write(&dir, "a.json", "[[-1, 2], [0, -3]]");
    write(&dir, "eta.json", "[1, 0.25]");
    write(&dir, "p.json", "[[2, 0], [0, 1]]");
    // ℓ∞,η rows: −1 + 2·0.25/1 and −3
    let r = run(&dir, &["lognorm", "a.json", "--norm", "winf:eta.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mu = Report::<LognormReport>::parse(&r.stdout).unwrap().body.lognorm;
    assert!((mu + 0.5).abs() < 1e-12, "{mu}");
    let r = run(&dir, &["lognorm", "a.json", "--norm", "wl2:p.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    // P½AP⁻½ = [[-1, 2√2], [0, -3]]; its symmetric part has λmax = −2 + √3
    let mu = Report::<LognormReport>::parse(&r.stdout).unwrap().body.lognorm;
    let expected = -2.0 + 3f64.sqrt();
    assert!((mu - expected).abs() < 1e-10, "{mu} vs {expected}");
}

#[test]
fn malformed_json_exits_2_with_location() {
    let dir = TempDir::new().unwrap();
    write(&dir, "bad.json", "[[1, 2],\n [3, ");
    let r = run(&dir, &["lognorm", "bad.json"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("bad.json") && r.stderr.contains("line"), "{}", r.stderr);
    let r = run(&dir, &["lognorm", "missing.json"]);
    assert_eq!(r.code, 2);
    let r = run(&dir, &["lognorm", "bad.json", "--norm", "l7"]);
    assert_eq!(r.code, 2);
}

#[test]
fn dimension_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    write(&dir, "rect.json", "[[1, 2, 3], [4, 5, 6]]");
    write(&dir, "ragged.json", "[[1, 2], [3]]");
    write(&dir, "a.json", "[[1, 0], [0, 1]]");
    write(&dir, "eta.json", "[1, 1, 1]");
    assert_eq!(run(&dir, &["lognorm", "rect.json"]).code, 3);
    assert_eq!(run(&dir, &["lognorm", "ragged.json"]).code, 3);
    assert_eq!(run(&dir, &["lognorm", "a.json", "--norm", "winf:eta.json"]).code, 3);
    write(&dir, "neg.json", "[1, -1]");
    assert_eq!(run(&dir, &["lognorm", "a.json", "--norm", "winf:neg.json"]).code, 3);
}

#[test]
fn firing_rate_certificate_has_rate_one_half() {
    let dir = TempDir::new().unwrap();
    write(&dir, "fr.json", FIRING);
    let r = run(&dir, &["certify", "fr.json", "--no-timestamp"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<CertifyReport>::parse(&r.stdout).unwrap().body;
    // μ∞(−I + A): each row is −1 + 0.25 + 0.25
    assert!((rep.rate.unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(rep.certificate.unwrap().norm, contraction_core::NormSpec::Linf);
}

#[test]
fn unstable_lure_system_has_no_certificate() {
    let dir = TempDir::new().unwrap();
    write(&dir, "lure.json", r#"{"system": {"lure": {"A": [[1, 0], [0, 1]], "B": [[1], [0]], "C": [[1, 0]]}}}"#);
    let r = run(&dir, &["certify", "lure.json"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("no certificate found"), "{}", r.stderr);
    let rep = Report::<CertifyReport>::parse(&r.stdout).unwrap().body;
    assert!(!rep.found && rep.certificate.is_none());
}

#[test]
fn stable_lure_system_is_certified() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "lure.json",
        r#"{"system": {"lure": {"A": [[-2, 0], [0, -3]], "B": [[-1], [0]], "C": [[1, 0]], "eta": 0.5}}}"#,
    );
    let r = run(&dir, &["certify", "lure.json", "--no-timestamp"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let cert = Report::<CertifyReport>::parse(&r.stdout).unwrap().body.certificate.unwrap();
    assert!(cert.certified && cert.rate() == Some(0.5));
}

#[test]
fn network_gain_matrix_gives_rate_one() {
    let dir = TempDir::new().unwrap();
    write(&dir, "net.json", r#"{"system": {"network": {"gains": [[-2, 1], [1, -2]]}}}"#);
    let r = run(&dir, &["certify", "net.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<CertifyReport>::parse(&r.stdout).unwrap().body;
    // eigenvalues of Γ are −1 and −3
    assert!((rep.rate.unwrap() - 1.0).abs() < 1e-8);
    let net = rep.network.unwrap();
    assert!((net.eta_value - 1.0).abs() < 1e-8);
    write(&dir, "bad.json", r#"{"system": {"network": {"gains": [[-1, 2], [2, -1]]}}}"#);
    assert_eq!(run(&dir, &["certify", "bad.json"]).code, 1);
    write(&dir, "neg.json", r#"{"system": {"network": {"gains": [[-1, -2], [2, -1]]}}}"#);
    assert_eq!(run(&dir, &["certify", "neg.json"]).code, 3);
}

#[test]
fn linear_pipeline_picks_perron_or_lyapunov() {
    let dir = TempDir::new().unwrap();
    write(&dir, "metzler.json", r#"{"system": {"linear": {"A": [[-3, 1], [2, -4]]}}}"#);
    let r = run(&dir, &["certify", "metzler.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let cert = Report::<CertifyReport>::parse(&r.stdout).unwrap().body.certificate.unwrap();
    assert_eq!(cert.method, contraction_core::certificates::Method::Perron);
    // eigenvalues −2 and −5
    assert!((cert.rate().unwrap() - 2.0).abs() < 1e-6);
    write(&dir, "lyap.json", r#"{"system": {"linear": {"A": [[-1, 10], [-1, -2]]}}}"#);
    let r = run(&dir, &["certify", "lyap.json", "--norm", "l2"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let cert = Report::<CertifyReport>::parse(&r.stdout).unwrap().body.certificate.unwrap();
    assert_eq!(cert.method, contraction_core::certificates::Method::Lyapunov);
    write(&dir, "unstable.json", r#"{"system": {"linear": {"A": [[0.5]]}}}"#);
    assert_eq!(run(&dir, &["certify", "unstable.json"]).code, 1);
}

#[test]
fn gradient_flows_certify_in_l2() {
    let dir = TempDir::new().unwrap();
    write(&dir, "q.json", r#"{"system": {"gradient_flow": {"quadratic": {"Q": [[1, 0], [0, 3]]}}}}"#);
    let r = run(&dir, &["certify", "q.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!((Report::<CertifyReport>::parse(&r.stdout).unwrap().body.rate.unwrap() - 1.0).abs() < 1e-12);
    write(
        &dir,
        "log.json",
        r#"{"system": {"gradient_flow": {"logistic": {"data": [[1, 0.5], [-0.3, 1], [0.2, -1]], "labels": [1, -1, 1], "reg": 0.1}}}}"#,
    );
    let r = run(&dir, &["certify", "log.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(Report::<CertifyReport>::parse(&r.stdout).unwrap().body.rate, Some(0.1));
    write(&dir, "dw.json", r#"{"system": {"gradient_flow": {"double_well": {"dim": 2}}}}"#);
    assert_eq!(run(&dir, &["certify", "dw.json"]).code, 1);
}

#[test]
fn implicit_network_reports_well_posedness() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "nn.json",
        r#"{"system": {"implicit_nn": {"A": [[-0.5, 0.2], [0.1, 0.3]], "B": [[1], [0.5]], "b": [0, 0.1]}}}"#,
    );
    let r = run(&dir, &["certify", "nn.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<CertifyReport>::parse(&r.stdout).unwrap().body;
    // μ∞(A) = max(−0.5 + 0.2, 0.3 + 0.1) = 0.4
    let nn = rep.implicit_nn.unwrap();
    assert!((nn.mu_inf - 0.4).abs() < 1e-12 && (rep.rate.unwrap() - 0.6).abs() < 1e-12);
    write(&dir, "ill.json", r#"{"system": {"implicit_nn": {"A": [[1.5]], "B": [[1]], "b": [0]}}}"#);
    assert_eq!(run(&dir, &["certify", "ill.json"]).code, 1);
}

#[test]
fn spec_validation_distinguishes_parse_and_dimension_errors() {
    let dir = TempDir::new().unwrap();
    write(&dir, "two.json", r#"{"system": {"linear": {"A": [[-1]]}, "network": {"gains": [[-1]]}}}"#);
    write(&dir, "unknown.json", r#"{"system": {"pendulum": {}}}"#);
    write(&dir, "typo.json", r#"{"system": {"linear": {"A": [[-1]], "offset": [1]}}}"#);
    write(
        &dir,
        "dims.json",
        r#"{"system": {"firing_rate": {"C": [[1, 0], [0, 1]], "A": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}}}"#,
    );
    write(
        &dir,
        "norm.json",
        r#"{"system": {"linear": {"A": [[-1]]}}, "norm": {"kind": "weighted_linf", "eta": [1, 2]}}"#,
    );
    assert_eq!(run(&dir, &["certify", "two.json"]).code, 2);
    assert_eq!(run(&dir, &["certify", "unknown.json"]).code, 2);
    let typo = run(&dir, &["certify", "typo.json"]);
    assert_eq!(typo.code, 2);
    assert!(typo.stderr.contains("system.linear"), "{}", typo.stderr);
    let dims = run(&dir, &["certify", "dims.json"]);
    assert_eq!(dims.code, 3);
    assert!(dims.stderr.contains("firing_rate"), "{}", dims.stderr);
    assert_eq!(run(&dir, &["certify", "norm.json"]).code, 3);
}

#[test]
fn scalar_iiss_and_tracking_checks_pass() {
    let dir = TempDir::new().unwrap();
    write(&dir, "s.json", SCALAR);
    let r = run(&dir, &["simulate", "s.json", "--check", "iiss", "--out", "iiss", "--no-timestamp"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<SimulateReport>::parse(&r.stdout).unwrap().body;
    let iiss = rep.iiss.unwrap();
    assert_eq!(iiss.ell, 1.0);
    assert!(iiss.max_violation <= iiss.tolerance);
    assert_eq!(rep.csv.len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("iiss").join(&rep.csv[0])).unwrap();
    assert!(csv.starts_with("t,x_1,theta_1\n"));
    let r = run(&dir, &["simulate", "s.json", "--check", "tracking", "--out", "track"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let tracking = Report::<SimulateReport>::parse(&r.stdout).unwrap().body.tracking.unwrap();
    // ẋ = −x + sin(t/2): ℓ/c² · sup|θ̇| = 0.5
    assert!((tracking.asymptotic_bound - 0.5).abs() < 1e-12);
    assert!(tracking.tail_error <= tracking.asymptotic_bound);
}

#[test]
fn certified_firing_rate_network_passes_incremental_check() {
    let dir = TempDir::new().unwrap();
    write(&dir, "fr.json", FIRING);
    let r = run(&dir, &["simulate", "fr.json", "--out", "out", "--no-timestamp"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<SimulateReport>::parse(&r.stdout).unwrap().body;
    assert!(rep.passes && rep.rate == 0.5 && rep.rate_source == "certificate");
    assert_eq!(rep.csv.len(), 8);
    assert!(dir.path().join("out").join("simulate.json").exists());
}

#[test]
fn doubled_rate_breaks_the_bound() {
    let dir = TempDir::new().unwrap();
    write(&dir, "fr.json", &FIRING.replace("\"seeds\"", "\"rate\": 1.0, \"seeds\""));
    let r = run(&dir, &["simulate", "fr.json", "--out", "out"]);
    assert_eq!(r.code, 1);
    let inc = Report::<SimulateReport>::parse(&r.stdout).unwrap().body.incremental.unwrap();
    assert!(inc.max_ratio > 1.0 + inc.tolerance && inc.max_violation > 0.0);
}

#[test]
fn blow_up_exits_4() {
    let dir = TempDir::new().unwrap();
    write(&dir, "up.json", r#"{"system": {"linear": {"A": [[2]]}}, "simulation": {"rate": 1.0, "seeds": [0]}}"#);
    let r = run(&dir, &["simulate", "up.json", "--tspan", "0,1000", "--dt", "0.5", "--out", "out"]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("blew up"), "{}", r.stderr);
}

#[test]
fn simulate_without_a_rate_is_negative() {
    let dir = TempDir::new().unwrap();
    write(&dir, "up.json", r#"{"system": {"linear": {"A": [[2]]}}, "simulation": {}}"#);
    assert_eq!(run(&dir, &["simulate", "up.json", "--out", "out"]).code, 1);
    write(&dir, "nosim.json", r#"{"system": {"linear": {"A": [[-2]]}}}"#);
    assert_eq!(run(&dir, &["simulate", "nosim.json"]).code, 3);
}

#[test]
fn affine_hurwitz_scan_is_uniformly_negative() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "a.json",
        r#"{"system": {"linear": {"A": [[-1, 0.5], [-0.5, -2]], "a": [0.1, 0]}}, "domain": {"radius": 2}}"#,
    );
    let r = run(&dir, &["scan", "a.json", "--grid", "5", "--out", "out"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = Report::<ScanReport>::parse(&r.stdout).unwrap().body;
    assert_eq!(rep.points, 25);
    assert!(rep.mu_max < 0.0 && rep.negative_fraction == 1.0);
    assert!(rep.ball.is_some());
}

#[test]
fn cubic_scan_changes_sign_near_the_inflection_points() {
    let dir = TempDir::new().unwrap();
    write(&dir, "dw.json", r#"{"system": {"gradient_flow": {"double_well": {"dim": 1}}}, "domain": {"radius": 1.5}}"#);
    let grid = 31;
    let r = run(&dir, &["scan", "dw.json", "--grid", &grid.to_string(), "--out", "out"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = std::fs::read_to_string(dir.path().join("out/scan.csv")).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect();
    assert_eq!(rows.len(), grid);
    let h = 3.0 / (grid - 1) as f64;
    let root = 1.0 / 3f64.sqrt();
    for w in rows.windows(2) {
        let ((x0, m0), (x1, m1)) = (w[0], w[1]);
        // μ = 1 − 3x²
        assert!((m0 - (1.0 - 3.0 * x0 * x0)).abs() < 1e-12);
        if m0.signum() != m1.signum() {
            let mid = 0.5 * (x0 + x1);
            assert!((mid.abs() - root).abs() <= h, "sign change at {mid}");
        }
    }
    let changes = rows.windows(2).filter(|w| w[0].1.signum() != w[1].1.signum()).count();
    assert_eq!(changes, 2);
    let ball = Report::<ScanReport>::parse(&r.stdout).unwrap().body.ball.unwrap();
    assert!((ball.center[0].abs() - 1.0).abs() < 1e-9);
}

#[test]
fn scan_rejects_five_dimensional_systems() {
    let dir = TempDir::new().unwrap();
    write(&dir, "n5.json", r#"{"system": {"gradient_flow": {"double_well": {"dim": 5}}}}"#);
    let r = run(&dir, &["scan", "n5.json", "--grid", "3"]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("certify"), "{}", r.stderr);
}

#[test]
fn reports_are_deterministic_and_round_trip() {
    let dir = TempDir::new().unwrap();
    write(&dir, "fr.json", FIRING);
    write(
        &dir,
        "c.json",
        r#"{"system": {"competitive": {"Phi": [[1, 0.6], [0, 0.8]], "lambda": 0.1, "u": [1, 0.5]}}}"#,
    );
    for args in [
        vec!["simulate", "fr.json", "--out", "a", "--no-timestamp"],
        vec!["certify", "c.json", "--no-timestamp", "--seed", "7"],
        vec!["scan", "fr.json", "--grid", "7", "--out", "s", "--no-timestamp"],
    ] {
        let first = run(&dir, &args);
        let second = run(&dir, &args);
        assert_eq!(first.stdout, second.stdout, "{args:?}");
        let v: serde_json::Value = serde_json::from_str(&first.stdout).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert!(v.get("generated_at_unix").is_none());
    }
    let r = run(&dir, &["certify", "fr.json", "--no-timestamp"]);
    let parsed = Report::<CertifyReport>::parse(&r.stdout).unwrap();
    assert_eq!(parsed.to_json() + "\n", r.stdout);
    let r = run(&dir, &["simulate", "fr.json", "--out", "b", "--no-timestamp"]);
    let parsed = Report::<SimulateReport>::parse(&r.stdout).unwrap();
    assert_eq!(parsed.to_json() + "\n", r.stdout);
    let stale = r.stdout.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert!(Report::<SimulateReport>::parse(&stale).is_err());
}

#[test]
fn thread_cap_is_read_from_the_environment() {
    let dir = TempDir::new().unwrap();
    write(&dir, "fr.json", FIRING);
    let base = run(&dir, &["certify", "fr.json", "--no-timestamp"]);
    let capped = exe()
        .current_dir(dir.path())
        .args(["certify", "fr.json", "--no-timestamp"])
        .env("CONTRACTION_CERT_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(capped.status.code(), Some(0));
    assert_eq!(String::from_utf8(capped.stdout).unwrap(), base.stdout);
    let bad = exe()
        .current_dir(dir.path())
        .args(["certify", "fr.json"])
        .env("CONTRACTION_CERT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
