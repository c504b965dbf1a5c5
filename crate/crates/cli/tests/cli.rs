use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spikeconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeconv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn write_handcrafted(dir: &Path) -> (String, String) {
    let model = dir.join("model.json");
    fs::write(
        &model,
        r#"{"format_version": 1, "input_shape": [3], "layers": [
            {"kind": "fc", "weights": [[1, 0.5, -1]], "bias": [0], "lambda": 1, "L": 5},
            {"kind": "fc", "weights": [[1]], "bias": [0]}]}"#,
    )
    .unwrap();
    let input = dir.join("input.json");
    fs::write(&input, "[0.6, 0.4, 0.4]").unwrap();
    (model.to_str().unwrap().into(), input.to_str().unwrap().into())
}

#[test]
fn compare_handcrafted_model_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = write_handcrafted(dir.path());
    let out = spikeconv(&[
        "compare",
        "--model",
        &model,
        "--T",
        "5",
        "--t-delay",
        "5",
        "--neuron",
        "if",
        "--input",
        &input,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert!(report["max_abs"].as_f64().unwrap() <= 1e-5);
    assert_eq!(report["residual_violations"], 0);
}

#[test]
fn compare_flags_adversarial_spikes_without_delay() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = write_handcrafted(dir.path());
    let spikes = dir.path().join("spikes.json");
    fs::write(&spikes, "[[1,1,1],[1,0,1],[0,0,0],[0,0,0],[1,1,0]]").unwrap();
    let spikes = spikes.to_str().unwrap();
    let out = spikeconv(&[
        "compare",
        "--model",
        &model,
        "--T",
        "5",
        "--t-delay",
        "0",
        "--input-spikes",
        spikes,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    assert_eq!(report["within_tolerance"], false);
    assert!(report["max_output_abs"].as_f64().unwrap() > 0.05);

    let out = spikeconv(&[
        "compare",
        "--model",
        &model,
        "--T",
        "5",
        "--t-delay",
        "5",
        "--input-spikes",
        spikes,
    ]);
    assert!(out.status.success());
}

#[test]
fn pipeline_reports_latency() {
    let out = spikeconv(&["pipeline", "--layers", "3", "--T", "8", "--t-delay", "8"]);
    assert!(out.status.success());
    let report = json(&out);
    assert_eq!(report["latency_first_sample"], 32);
    assert_eq!(report["steady_throughput_period"], 8);
    assert_eq!(report["conflicts"].as_array().unwrap().len(), 0);
    assert_eq!(report["gantt"].as_array().unwrap().len(), 7);
}

#[test]
fn demos() {
    let out = spikeconv(&["demo", "anchor", "--T", "1"]);
    assert!(out.status.success());
    assert_eq!(json(&out)["cardinality"], 2);

    let out = spikeconv(&["demo", "fig1"]);
    let report = json(&out);
    assert_eq!(report["placements_searched"], 1000);
    assert!(report["plain_if"]["overflow"]["residual"].as_f64().unwrap() >= 1.0);
    assert!(report["plain_if"]["negative"]["residual"].as_f64().unwrap() < 0.0);
    assert_eq!(report["delay_spike"]["lossless_placements"], 1000);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        spikeconv(&["pipeline", "--layers", "3", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(spikeconv(&["nonsense"]).status.code(), Some(2));
    assert_eq!(
        spikeconv(&["pipeline", "--layers", "x", "--T", "8", "--t-delay", "8"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_one_with_message() {
    let out = spikeconv(&["run-ann", "--model", "/does/not/exist.json", "--input", "/nope.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("/does/not/exist.json"));

    let out = spikeconv(&["pipeline", "--layers", "3", "--T", "4", "--t-delay", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generated_model_workflow_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let gen = spikeconv(&[
        "gen-model",
        "--seed",
        "3",
        "--L",
        "4",
        "--out",
        &p("m.json"),
        "--input-out",
        &p("x.json"),
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    for (neuron, out) in [("if", "if.json"), ("tdif", "tdif.json")] {
        let conv = spikeconv(&[
            "convert",
            "--model",
            &p("m.json"),
            "--T",
            "4",
            "--neuron",
            neuron,
            "--out",
            &p(out),
        ]);
        assert!(conv.status.success(), "{}", String::from_utf8_lossy(&conv.stderr));
    }
    let run = || spikeconv(&["run-snn", "--snn", &p("if.json"), "--input", &p("x.json")]).stdout;
    assert_eq!(run(), run());

    let energy = spikeconv(&[
        "energy",
        "--snn",
        &p("tdif.json"),
        "--input",
        &p("x.json"),
        "--reference",
        &p("if.json"),
    ]);
    assert!(energy.status.success(), "{}", String::from_utf8_lossy(&energy.stderr));
    let report = json(&energy);
    let ratio = report["ratio"].as_f64().unwrap();
    assert!((1.0..=4.0).contains(&ratio), "{ratio}");
    assert_eq!(report["neuron"], "tdif");

    let all_events = spikeconv(&[
        "energy",
        "--snn",
        &p("if.json"),
        "--input",
        &p("x.json"),
        "--paper-mode",
    ]);
    let split = spikeconv(&["energy", "--snn", &p("if.json"), "--input", &p("x.json")]);
    assert!(json(&all_events)["total_pj"].as_f64().unwrap() >= json(&split)["total_pj"].as_f64().unwrap());

    let ann = spikeconv(&["run-ann", "--model", &p("m.json"), "--input", &p("x.json")]);
    assert!(ann.status.success());
    let cmp = spikeconv(&["compare", "--model", &p("m.json"), "--T", "4", "--input", &p("x.json")]);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stdout));
}
