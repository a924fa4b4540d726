use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use losslens::simulate::SimConfig;

fn losslens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_losslens"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Simulated reference fleet plus a fourth run so a scaling law can be fitted.
fn simulated(dir: &Path) -> PathBuf {
    let mut config = SimConfig::reference_fleet();
    let mut extra = config.fleet[0].clone();
    extra.run_id = "0.5B".into();
    extra.model_params = 5e8;
    config.fleet.push(extra);
    for run in &mut config.fleet {
        run.final_tokens = 2.5e12;
    }
    let cfg = dir.join("sim.json");
    fs::write(&cfg, serde_json::to_string(&config).unwrap()).unwrap();
    let out_dir = dir.join("sim");
    let out = losslens(&[
        "simulate",
        "--config",
        &s(&cfg),
        "--out-dir",
        &s(&out_dir),
        "--seed",
        "9",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    out_dir
}

#[test]
fn simulate_then_detect_recovers_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated(tmp.path());
    let fits = tmp.path().join("fits.json");
    let out = losslens(&[
        "detect-emergence",
        "--runs",
        &s(&sim.join("runs.csv")),
        "--manifest",
        &s(&sim.join("manifest.csv")),
        "--dataset",
        "MMLU",
        "--out",
        &s(&fits),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fits).unwrap()).unwrap();
    let fit = &v["fits"][0];
    assert_eq!(fit["dataset"], "MMLU");
    assert_eq!(fit["emergent"], true);
    let eta = fit["eta"].as_f64().unwrap();
    assert!((eta - 2.2).abs() <= 0.05, "eta {eta}");
}

#[test]
fn scaling_fit_and_threshold_translation() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated(tmp.path());
    let scaling = tmp.path().join("scaling.json");
    let out = losslens(&[
        "fit-scaling",
        "--runs",
        &s(&sim.join("runs.csv")),
        "--manifest",
        &s(&sim.join("manifest.csv")),
        "--out",
        &s(&scaling),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scaling).unwrap()).unwrap();
    assert!(v["L_inf"].as_f64().unwrap() > 1.5);

    let out = losslens(&[
        "translate-threshold",
        "--eta",
        "2.2",
        "--scaling",
        &s(&scaling),
    ]);
    assert_eq!(code(&out), 0);
    let t: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(t["model_params"].as_f64().unwrap() > 1.0);

    let out = losslens(&[
        "translate-threshold",
        "--eta",
        "1.0",
        "--scaling",
        &s(&scaling),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable"));
    assert!(out.stdout.is_empty());
}

#[test]
fn exit_codes() {
    assert_eq!(code(&losslens(&["frobnicate"])), 2);
    assert_eq!(
        code(&losslens(&[
            "correlate",
            "--runs",
            "a.csv",
            "--manifest",
            "b.csv",
            "--bogus"
        ])),
        2
    );
    assert_eq!(
        code(&losslens(&[
            "detect-emergence",
            "--runs",
            "a.csv",
            "--manifest",
            "b.csv",
            "--family",
            "cubic"
        ])),
        2
    );
    let out = losslens(&[
        "validate",
        "--runs",
        "/nonexistent/runs.csv",
        "--manifest",
        "/nonexistent/m.csv",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/m.csv"));
    assert_eq!(code(&losslens(&["--help"])), 0);
}

#[test]
fn help_documents_every_flag_default() {
    for (cmd, defaults) in [
        ("validate", vec![]),
        ("metrics", vec![]),
        (
            "correlate",
            vec!["--bootstrap", "--confidence", "--seed", "--format"],
        ),
        ("fit-scaling", vec!["--grid-cells"]),
        (
            "detect-emergence",
            vec![
                "--family",
                "--resolution",
                "--smooth",
                "--bic-margin",
                "--bootstrap",
                "--seed",
            ],
        ),
        ("translate-threshold", vec![]),
        ("simulate", vec!["--config", "--seed", "--eval-examples"]),
        ("report", vec!["--bootstrap", "--seed", "--format"]),
    ] {
        let out = losslens(&[cmd, "--help"]);
        assert_eq!(code(&out), 0);
        let help = String::from_utf8(out.stdout).unwrap();
        for flag in defaults {
            let line = help
                .lines()
                .skip_while(|l| !l.contains(flag))
                .take(3)
                .collect::<String>();
            assert!(line.contains("default"), "{cmd} {flag}:\n{help}");
        }
    }
}

#[test]
fn failed_command_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated(tmp.path());
    let out_file = tmp.path().join("fits.json");
    let out = losslens(&[
        "detect-emergence",
        "--runs",
        &s(&sim.join("runs.csv")),
        "--manifest",
        &s(&sim.join("manifest.csv")),
        "--dataset",
        "NoSuchSet",
        "--out",
        &s(&out_file),
    ]);
    assert_eq!(code(&out), 1);
    assert!(!out_file.exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated(tmp.path());
    let mut outputs = Vec::new();
    for name in ["a.md", "b.md"] {
        let path = tmp.path().join(name);
        let out = losslens(&[
            "correlate",
            "--runs",
            &s(&sim.join("runs.csv")),
            "--manifest",
            &s(&sim.join("manifest.csv")),
            "--bootstrap",
            "300",
            "--seed",
            "4",
            "--out",
            &s(&path),
        ]);
        assert_eq!(code(&out), 0);
        outputs.push(fs::read(path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let table = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(table.starts_with("| Dataset | Spearman | Spearman CI | Pearson | Pearson CI |"));
}

#[test]
fn metrics_scores_a_log_and_warns_on_ties() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("manifest.csv");
    fs::write(&manifest, "name,task_type,prompting,answer_form,num_choices,metric\nMMLU,examination,few_shot,multi_choice,4,accuracy\n").unwrap();
    let log = tmp.path().join("mmlu.jsonl");
    fs::write(
        &log,
        "{\"example_id\":\"a\",\"choice_probs\":[0.25,0.25,0.25,0.25],\"correct_index\":0}\n\
         {\"example_id\":\"b\",\"choice_probs\":[0.1,0.7,0.1,0.1],\"correct_index\":1}\n",
    )
    .unwrap();
    let out = losslens(&[
        "metrics",
        "--manifest",
        &s(&manifest),
        "--log",
        &s(&log),
        "--dataset",
        "MMLU",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["value"], 1.0);
    assert_eq!(v["random_baseline"], 0.25);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tied"));

    let out = losslens(&[
        "metrics",
        "--manifest",
        &s(&manifest),
        "--log",
        &s(&log),
        "--dataset",
        "MMLU",
        "--metric",
        "brier",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["higher_is_better"], false);
}

#[test]
fn report_writes_tables_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated(tmp.path());
    let runs = s(&sim.join("runs.csv"));
    let manifest = s(&sim.join("manifest.csv"));
    let fits = s(&tmp.path().join("fits.json"));
    assert_eq!(
        code(&losslens(&[
            "detect-emergence",
            "--runs",
            &runs,
            "--manifest",
            &manifest,
            "--out",
            &fits
        ])),
        0
    );
    let rep = tmp.path().join("rep");
    let out = losslens(&[
        "report",
        "--runs",
        &runs,
        "--manifest",
        &manifest,
        "--fits",
        &fits,
        "--out-dir",
        &s(&rep),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(rep.join("correlations.csv").exists());
    let thresholds = fs::read_to_string(rep.join("thresholds.csv")).unwrap();
    assert!(thresholds.starts_with("dataset,emergent,eta,eta_lo,eta_hi,model_size\n"));
    assert_eq!(fs::read_dir(rep.join("curves")).unwrap().count(), 24);
}
