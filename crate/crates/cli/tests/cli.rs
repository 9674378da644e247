use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resolve_core::formats::{write_etch_csv, write_trace_csv, write_xps_csv};
use resolve_core::resonance::linear_grid;
use resolve_core::synth::generate_xps;
use resolve_core::xps::{LayerStack, LineConfig};
use resolve_core::{ComplexTrace, ResonanceParams};
use serde_json::{json, Value};

fn resolve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resolve"))
        .args(args)
        .env_remove("RESOLVE_CONFIG_DIR")
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn trace_file(dir: &Path, points: usize) -> PathBuf {
    let mut p = ResonanceParams::from_q_int(6.5e9, 0.9e6, 0.6e6, 0.1);
    p.delay = 30e-9;
    let trace = ComplexTrace::from_model(&p, linear_grid(p.f_r, 20.0 * p.linewidth(), points)).unwrap();
    let path = dir.join(format!("trace_{points}.csv"));
    std::fs::write(&path, write_trace_csv(&trace)).unwrap();
    path
}

fn spec_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/campaign_spec.json")
}

#[test]
fn fit_trace_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = trace_file(dir.path(), 801);
    let out = dir.path().join("fit.json");
    let run = resolve(&[
        "fit-trace",
        "--input",
        &s(&input),
        "--power-w",
        "1e-17",
        "--out",
        &s(&out),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((fit["q_int"].as_f64().unwrap() / 0.9e6 - 1.0).abs() < 1e-6);
    assert!(fit["photon_number"].as_f64().unwrap() > 0.0);
}

#[test]
fn fit_trace_prints_to_stdout_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let run = resolve(&["fit-trace", "--input", &s(&trace_file(dir.path(), 401))]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let fit: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!(fit["converged"].as_bool().unwrap());
}

#[test]
fn empty_trace_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    std::fs::write(&input, "").unwrap();
    let run = resolve(&["fit-trace", "--input", &s(&input)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("line 1"), "{}", stderr(&run));
}

#[test]
fn short_trace_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("short.csv");
    let rows: String = (0..5)
        .map(|k| format!("{},0.5,0.1\n", 6.5e9 + 1e3 * k as f64))
        .collect();
    std::fs::write(&input, format!("freq_hz,s11_re,s11_im\n{rows}")).unwrap();
    let run = resolve(&["fit-trace", "--input", &s(&input)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("insufficient points"), "{}", stderr(&run));
}

#[test]
fn missing_input_is_an_input_error() {
    let run = resolve(&["fit-trace", "--input", "/nonexistent/trace.csv"]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn fit_power_with_too_few_points_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sweep.csv");
    std::fs::write(&input, "photon_number,delta_int,sigma\n1,2e-6,1e-8\n100,1.5e-6,1e-8\n").unwrap();
    let run = resolve(&["fit-power", "--input", &s(&input), "--f-r", "6.5e9"]);
    assert_eq!(run.status.code(), Some(2), "{}", stderr(&run));
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fit.json");
    std::fs::write(&config, r#"{"max_iter": 0}"#).unwrap();
    let run = resolve(&[
        "fit-trace",
        "--input",
        &s(&trace_file(dir.path(), 401)),
        "--config",
        &s(&config),
    ]);
    assert_eq!(run.status.code(), Some(1), "{}", stderr(&run));
}

fn value_chip(id: &str, role: &str, tls: f64, d0: f64) -> Value {
    let resonators: Vec<Value> = (0..4)
        .map(|k| {
            let scale = 1.0 + 0.02 * k as f64;
            json!({"id": format!("r{k}"), "f_r_hz": 6e9 + 1e8 * k as f64,
                   "delta_single_photon": scale * (tls + d0), "delta_high_power": scale * d0})
        })
        .collect();
    json!({"chip_id": id, "role": role, "nbox_thickness_nm": 4.0, "siox_thickness_nm": 2.0,
           "resonators": resonators})
}

#[test]
fn single_chip_budget_skips_attribution() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    std::fs::write(
        &manifest,
        json!({"chips": [value_chip("a", "standard", 7e-7, 3e-7)]}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let run = resolve(&["budget", "--manifest", &s(&manifest), "--out", &s(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert!(stderr(&run).contains("attribution skipped"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["attribution"]["status"], "skipped");
}

#[test]
fn duplicate_chip_ids_are_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    let chip = value_chip("a", "standard", 7e-7, 3e-7);
    std::fs::write(&manifest, json!({"chips": [chip.clone(), chip]}).to_string()).unwrap();
    let run = resolve(&[
        "budget",
        "--manifest",
        &s(&manifest),
        "--out",
        &s(&dir.path().join("r.json")),
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn three_chip_budget_writes_svgs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    let chips = [
        value_chip("std", "standard", 7e-7, 3e-7),
        value_chip("short", "sa_etch", 2e-7, 2.5e-7),
        value_chip("long", "sa_ma_etch", 1e-7, 1e-7),
    ];
    std::fs::write(&manifest, json!({ "chips": chips }).to_string()).unwrap();
    let out = dir.path().join("report.json");
    let run = resolve(&["budget", "--manifest", &s(&manifest), "--out", &s(&out), "--svg"]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["attribution"]["status"], "computed");
    let bars = std::fs::read_to_string(dir.path().join("report_losses.svg")).unwrap();
    let budget = std::fs::read_to_string(dir.path().join("report_budget.svg")).unwrap();
    assert!(bars.starts_with("<svg") && bars.contains("std"));
    assert!(budget.contains("SA") && budget.contains('%'));
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let run = resolve(&["simulate", "--spec", &s(&spec_path()), "--out", &s(dir.path())]);
        assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    }
    for rel in ["truth.json", "campaign.json", "standard/r00/power_00.csv"] {
        let left = std::fs::read(a.path().join(rel)).unwrap();
        let right = std::fs::read(b.path().join(rel)).unwrap();
        assert_eq!(left, right, "{rel}");
    }
}

#[test]
fn simulated_campaign_feeds_budget_directly() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(resolve(&["simulate", "--spec", &s(&spec_path()), "--out", &s(&sim)])
        .status
        .success());
    let out = dir.path().join("report.json");
    let run = resolve(&[
        "budget",
        "--manifest",
        &s(&sim.join("campaign.json")),
        "--out",
        &s(&out),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    let got = report["attribution"]["components"].as_array().unwrap();
    let want = truth["attribution"]["components"].as_array().unwrap();
    for (g, w) in got.iter().zip(want) {
        assert!((g["fraction"].as_f64().unwrap() - w["fraction"].as_f64().unwrap()).abs() < 0.05);
    }
}

#[test]
fn xps_solves_niobium_oxides() {
    let dir = tempfile::tempdir().unwrap();
    let spectrum = generate_xps(
        &LayerStack::niobium_oxides([2.5, 1.0, 1.0]),
        &LineConfig::nb3d(),
        1e5,
        3,
    )
    .unwrap();
    let input = dir.path().join("nb3d.csv");
    std::fs::write(&input, write_xps_csv(&spectrum)).unwrap();
    let run = resolve(&["xps", "--input", &s(&input), "--line", "nb3d"]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!((report["total_oxide_thickness_nm"].as_f64().unwrap() - 4.5).abs() < 0.05);
}

#[test]
fn etch_rate_reports_selectivity() {
    let dir = tempfile::tempdir().unwrap();
    let series: Vec<(f64, f64)> = (0..10)
        .map(|k| (30.0 * k as f64, 4.0 - 0.0083 * 30.0 * k as f64))
        .collect();
    let input = dir.path().join("etch.csv");
    std::fs::write(&input, write_etch_csv(&series)).unwrap();
    let run = resolve(&["etch-rate", "--input", &s(&input), "--fast-rate", "1800"]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["selectivity"]["label"], ">200:1");
}
