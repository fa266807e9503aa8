//! End-to-end runs of the `ergosde` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ergosde"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn report(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join("out").join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FLAT: &str = r#"
[problem.custom]
family = "scalar"
name = "flat"
drift = { coeffs = [0.0] }
diffusion = { kind = "constant", value = 0.0 }
params = { gamma = 2.0, l1 = 1.0, l2 = 1.0, l3 = 0.5, p_star = 2.0, growth_const = 1.0 }
"#;

#[test]
fn check_assumptions_exit_codes() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), "[problem]\nid = \"cubic\"\n[check]\nn_samples = 2000", &["check-assumptions"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(t.path(), "check-assumptions");
    assert_eq!(r["verdict"], "pass");
    assert_eq!(r["result"]["reports"].as_array().unwrap().len(), 3);

    // b = x − x³ is not monotone with L₁ > 0: the worst pair straddles the
    // unstable origin, where ⟨x − y, b(x) − b(y)⟩ ≈ |x − y|²
    let o = run(t.path(), "[problem]\nid = \"double_well\"\n[check]\nn_samples = 2000", &["check-assumptions"]);
    assert_eq!(code(&o), 1);
    let r = report(t.path(), "check-assumptions");
    let mono = &r["result"]["reports"][0];
    assert_eq!(mono["checked_condition"], "Monotonicity");
    assert_eq!(mono["verdict"], "violation_found");
    let w = &mono["witness"];
    let (x, y) = (w[0][0].as_f64().unwrap(), w[1][0].as_f64().unwrap());
    // slack recomputed from the witness: −L₁|x−y|² − ⟨x−y, b(x)−b(y)⟩ − c|σ(x)−σ(y)|²
    let b = |v: f64| v - v * v * v;
    let slack = -0.5 * (x - y).powi(2) - (x - y) * (b(x) - b(y));
    assert!(slack < 0.0);
    assert!((slack - mono["worst_margin"].as_f64().unwrap()).abs() <= 1e-9 * (1.0 + slack.abs()));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), "seed = 1\n[scheme\n", &["simulate"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = run(t.path(), "[simulate]\nsteps = 10\n", &["simulate"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("unknown field `steps`"));

    let o = Command::new(env!("CARGO_BIN_EXE_ergosde")).arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_ergosde"))
        .args(["simulate", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_ergosde"))
        .args(["simulate", "--seed", "18446744073709551615"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_ergosde")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn simulate_ou_matches_ar1_variance() {
    let t = TempDir::new().unwrap();
    let cfg = "seed = 7\n[scheme]\nkind = \"em\"\ntau = 0.01\n[phi]\nkind = \"square\"\n[simulate]\nn_steps = 1000000\n";
    let o = run(t.path(), cfg, &["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(t.path(), "simulate");
    let e = &r["result"]["estimate"];
    let (m, se) = (e["phi_mean"].as_f64().unwrap(), e["stderr"].as_f64().unwrap());
    // AR(1): Y' = (1 − τ)Y + √2 δW has stationary variance 2τ / (1 − (1 − τ)²)
    let exact = 2.0 * 0.01 / (1.0 - 0.99f64 * 0.99);
    assert!((m - exact).abs() <= 3.0 * se, "{m} ± {se} vs {exact}");
    assert_eq!(r["digest"].as_str().unwrap().len(), 64);
    assert_eq!(r["config"]["seed"], 7);

    let trace = std::fs::read_to_string(t.path().join("out/simulate.trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "k,y");
    assert_eq!(trace.lines().count(), 1 + 10_001);
}

#[test]
fn simulate_without_noise_is_constant() {
    let t = TempDir::new().unwrap();
    let cfg = format!("{FLAT}\n[simulate]\ny0 = [2.5]\nn_steps = 1000\ntrace_thin = 10\n");
    let o = run(t.path(), &cfg, &["simulate", "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = std::fs::read_to_string(t.path().join("out/simulate.trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r.ends_with(",2.5")));
    let est = std::fs::read_to_string(t.path().join("out/simulate.csv")).unwrap();
    // φ = x² at 2.5, zero spread
    assert!(est.lines().nth(1).unwrap().starts_with("6.25,0.0,"));
    assert!(t.path().join("out/simulate.config.toml").exists());
}

#[test]
fn simulate_flags_em_blow_up() {
    let t = TempDir::new().unwrap();
    let cfg = "[problem]\nid = \"double_well\"\n[scheme]\nkind = \"em\"\ntau = 0.1\n[simulate]\ny0 = [5.0]\nn_steps = 1000\n";
    let o = run(t.path(), cfg, &["simulate"]);
    assert_eq!(code(&o), 1);
    let r = report(t.path(), "simulate");
    assert_eq!(r["result"]["estimate"]["diverged"], true);
    assert!(r["result"]["estimate"]["diverged_at"].as_u64().unwrap() < 1000);
    assert!(r["result"]["estimate"]["phi_mean"].is_null());
}

#[test]
fn stein_verify_constant_phi_passes() {
    let t = TempDir::new().unwrap();
    let cfg = "[problem]\nid = \"cubic\"\n[scheme]\nkind = \"tem\"\ntau = 0.05\n[phi]\nkind = \"constant\"\nvalue = 2.0\n[stein]\nn_steps = 20000\nn_mc = 2000\n";
    let o = run(t.path(), cfg, &["stein-verify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(t.path(), "stein-verify");
    assert_eq!(r["result"]["verdict"], "pass");
    assert_eq!(r["result"]["lhs"].as_f64().unwrap(), 0.0);
    assert_eq!(r["result"]["rhs"].as_f64().unwrap(), 0.0);
}

#[test]
fn stein_verify_rejects_vector_problems() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), "[problem]\nid = \"cubic_2d\"\n", &["stein-verify"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn converge_ou_em_csv_and_script() {
    let t = TempDir::new().unwrap();
    let cfg = r#"
seed = 3
[scheme]
kind = "em"
tau_grid = [0.2, 0.1, 0.05]
[phi]
kind = "square"
[converge.budget]
pilot_steps = 400000
min_steps = 400000
max_steps = 20000000
target_ratio = 10.0
n_chains = 4
"#;
    let o = run(t.path(), cfg, &["converge", "--format", "csv"]);
    let c = code(&o);
    assert!(c == 0 || c == 1 || c == 2, "{}", stderr(&o));
    let csv = std::fs::read_to_string(t.path().join("out/converge.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "tau,error,stderr,estimate,n_steps");
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        // exact EM error for φ = x²: τ / (2 − τ)
        let exact = f[0] / (2.0 - f[0]);
        assert!((f[1] - exact).abs() <= 4.0 * f[2], "{line}");
    }
    let gp = std::fs::read_to_string(t.path().join("out/converge.gp")).unwrap();
    assert!(gp.contains("converge.csv"));
    // the slope with this budget lands in [0.8, 1.2]
    assert_eq!(c, 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn blowup_demo_contrast_and_stable_basin() {
    let t = TempDir::new().unwrap();
    let cfg = "seed = 5\n[problem]\nid = \"double_well\"\n[scheme]\ntau = 0.1\n[blowup]\nx0 = [5.0]\nn_traj = 40\nn_steps = 5000\n";
    let o = run(t.path(), cfg, &["blowup-demo"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(t.path(), "blowup-demo");
    let entries = r["result"]["entries"].as_array().unwrap();
    assert_eq!(entries[0]["scheme"], "em");
    assert_eq!(entries[0]["diverged_fraction"].as_f64().unwrap(), 1.0);
    for e in &entries[1..] {
        assert_eq!(e["trace"]["n_diverged"], 0);
        assert!(e["trace"]["running_sup"].as_f64().unwrap().is_finite());
    }

    // σ ≡ 0, small τ, start in the basin: the deterministic flow stays put
    let cfg = r#"
[problem.custom]
family = "scalar"
name = "double_well_noiseless"
drift = { coeffs = [0.0, 1.0, 0.0, -1.0] }
diffusion = { kind = "constant", value = 0.0 }
params = { gamma = 3.0, l1 = 0.5, l2 = 8.0, l3 = 0.5, p_star = 2.0, growth_const = 6.0 }
[scheme]
tau = 0.001
[blowup]
x0 = [0.1]
n_traj = 4
n_steps = 2000
"#;
    let o = run(t.path(), cfg, &["blowup-demo"]);
    // no blow-up of the reference scheme: contrast not shown
    assert_eq!(code(&o), 2);
    let r = report(t.path(), "blowup-demo");
    assert_eq!(r["result"]["entries"][0]["trace"]["n_diverged"], 0);
    assert_eq!(r["verdict"], "inconclusive");
}

#[test]
fn reports_are_bitwise_reproducible_across_workers() {
    let cfg = r#"
seed = 9
[problem]
id = "cubic"
[scheme]
kind = "bem"
tau = 0.05
[phi]
kind = "rational_square"
[simulate]
n_steps = 40000
n_chains = 4
[stein]
n_steps = 40000
n_mc = 4000
n_mc_atau = 16000
"#;
    for cmd in ["simulate", "stein-verify"] {
        let outputs: Vec<(String, String)> = ["1", "4", "4"]
            .iter()
            .map(|w| {
                let t = TempDir::new().unwrap();
                let o = run(t.path(), cfg, &[cmd, "--workers", w]);
                assert!(code(&o) <= 2, "{}", stderr(&o));
                let json = std::fs::read_to_string(t.path().join("out").join(format!("{cmd}.json"))).unwrap();
                let trace = std::fs::read_to_string(t.path().join("out/simulate.trace.csv")).unwrap_or_default();
                (json, trace)
            })
            .collect();
        assert_eq!(outputs[0], outputs[1], "{cmd}: workers 1 vs 4");
        assert_eq!(outputs[1], outputs[2], "{cmd}: repeated run");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let t = TempDir::new().unwrap();
    let cfg = "seed = 1\n[simulate]\nn_steps = 20000\n";
    run(t.path(), cfg, &["simulate"]);
    let a = report(t.path(), "simulate");
    run(t.path(), cfg, &["simulate", "--seed", "2"]);
    let b = report(t.path(), "simulate");
    assert_eq!(b["config"]["seed"], 2);
    assert_ne!(a["digest"], b["digest"]);
    assert_ne!(a["result"]["estimate"]["phi_mean"], b["result"]["estimate"]["phi_mean"]);
}
