use std::path::Path;
use std::process::{Command, Output};

use acttail::{load_tensor_file, save_tensor_file, synth_powerlaw_matrix, WeightMatrix};

fn acttail(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acttail"))
        .current_dir(dir)
        .env_remove("ACTTAIL_THREADS")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("spawn acttail")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn synth_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&acttail(dir.path(), &["synth", "--seed", "3"])), 0);
    let stack = load_tensor_file(dir.path().join("stack.safetensors")).unwrap();
    assert_eq!(stack.len(), 14);
    assert_eq!(code(&acttail(dir.path(), &["synth", "--seed", "3", "--out", "again.safetensors"])), 0);
    assert_eq!(read(dir.path(), "stack.safetensors"), read(dir.path(), "again.safetensors"));
    assert_eq!(code(&acttail(dir.path(), &["synth", "--seed", "4", "--out", "other.safetensors"])), 0);
    assert_ne!(read(dir.path(), "stack.safetensors"), read(dir.path(), "other.safetensors"));
}

#[test]
fn synth_rejects_bad_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let out = acttail(dir.path(), &["synth", "--alpha-attn", "2.0"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--alpha-attn"));
}

#[test]
fn stdout_carries_only_data() {
    let dir = tempfile::tempdir().unwrap();
    acttail(dir.path(), &["synth", "--layers", "1", "--d-model", "16"]);
    let out = acttail(dir.path(), &["analyze", "stack.safetensors", "--out", "-", "--log-level", "debug"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let out = acttail(dir.path(), &["synth", "--layers", "1", "--d-model", "16", "--out", "-"]);
    assert_eq!(out.stdout, read(dir.path(), "stack.safetensors"));
}

#[test]
fn analyze_partial_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = synth_powerlaw_matrix(16, 16, 3.0, 1).unwrap().renamed("model.layers.0.self_attn.q_proj.weight");
    let zero = WeightMatrix::new("model.layers.0.self_attn.k_proj.weight", 16, 16, vec![0.0; 256]).unwrap();
    save_tensor_file(&[good, zero], dir.path().join("w.safetensors")).unwrap();
    let out = acttail(dir.path(), &["analyze", "w.safetensors", "--keep-spectra"]);
    assert_eq!(code(&out), 2);
    let text = String::from_utf8(read(dir.path(), "spectra.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().contains("\"error\""));
    let eig = load_tensor_file(dir.path().join("spectra.eig.safetensors"));
    assert!(eig.unwrap().is_empty(), "eigenvalue sidecar holds 1-D tensors only");
    let raw = acttail::tensor_store::read_raw_tensors(&read(dir.path(), "spectra.eig.safetensors")).unwrap();
    assert_eq!(raw.len(), 1);
    assert_eq!(raw[0].1.len(), 16);
}

#[test]
fn analyze_bad_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.safetensors"), b"not a tensor file").unwrap();
    let out = acttail(dir.path(), &["analyze", "junk.safetensors"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("format"), "{}", stderr(&out));
    assert_eq!(code(&acttail(dir.path(), &["analyze", "missing.safetensors"])), 1);
}

#[test]
fn allocate_contract() {
    let dir = tempfile::tempdir().unwrap();
    acttail(dir.path(), &["synth", "--layers", "1", "--d-model", "16", "--alpha-attn", "3", "--alpha-mlp", "3"]);
    acttail(dir.path(), &["analyze", "stack.safetensors"]);
    let out = acttail(dir.path(), &["allocate", "spectra.jsonl", "--global-sparsity", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("eta = ") && stderr(&out).contains("achieved_S = "));
    let plan: serde_json::Value = serde_json::from_slice(&read(dir.path(), "plan.json")).unwrap();
    assert_eq!(plan["entries"].as_array().unwrap().len(), 7);

    assert_eq!(code(&acttail(dir.path(), &["allocate", "spectra.jsonl", "--global-sparsity", "1.0"])), 1);
    let out = acttail(dir.path(), &["allocate", "spectra.jsonl", "--global-sparsity", "0.9", "--clamp", "0.5"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("smallest feasible clamp"), "{}", stderr(&out));
}

#[test]
fn equal_alpha_spectra_give_uniform_plan() {
    let dir = tempfile::tempdir().unwrap();
    let lines: String = ["q", "k", "v"]
        .iter()
        .map(|p| {
            format!(
                "{{\"layer\":0,\"proj\":\"{p}\",\"name\":\"model.layers.0.self_attn.{p}_proj.weight\",\"n\":32,\"d_out\":32,\"alpha\":3.0,\"k_used\":16,\"lambda_ref\":0.1,\"lambda_max\":1.0}}\n"
            )
        })
        .collect();
    std::fs::write(dir.path().join("s.jsonl"), lines).unwrap();
    let out = acttail(dir.path(), &["allocate", "s.jsonl", "--global-sparsity", "0.5", "--out", "-"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["eta"], 1.0);
    for e in plan["entries"].as_array().unwrap() {
        assert_eq!(e["s"], 0.5);
        assert_eq!(e["K"], 16);
    }
}

#[test]
fn sparsify_eval_dense_plan_and_key_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    acttail(dir.path(), &["synth", "--layers", "1", "--d-model", "16"]);
    acttail(dir.path(), &["analyze", "stack.safetensors"]);
    acttail(dir.path(), &["allocate", "spectra.jsonl", "--global-sparsity", "0"]);
    let out = acttail(dir.path(), &["sparsify-eval", "stack.safetensors", "plan.json", "--batch", "4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(read(dir.path(), "eval.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let idx = rdr.headers().unwrap().iter().position(|h| h == "final_mse").unwrap();
    for rec in rdr.records() {
        assert_eq!(rec.unwrap()[idx].parse::<f64>().unwrap(), 0.0);
    }
    assert!(dir.path().join("eval.json").exists());

    acttail(dir.path(), &["synth", "--layers", "2", "--d-model", "16", "--out", "two.safetensors"]);
    let out = acttail(dir.path(), &["sparsify-eval", "two.safetensors", "plan.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing from plan: [1.q, 1.k"), "{}", stderr(&out));
}

#[test]
fn verify_theory_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = acttail(dir.path(), &["verify-theory", "--checks", "karamata", "--alphas", "2.5,3,4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("theory.md").exists());

    let out = acttail(dir.path(), &["verify-theory", "--checks", "karamata", "--alphas", "2.05", "--out", "-"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["flags"].as_array().unwrap().iter().any(|f| f == "near-pole"));
    assert_eq!(code(&out), if report["pass"] == true { 0 } else { 3 });

    let out = acttail(dir.path(), &["verify-theory", "--checks", "nonsense"]);
    assert_eq!(code(&out), 1);

    let out = acttail(dir.path(), &["verify-theory", "--checks", "stechkin", "--trials", "10", "--out", "-"]);
    let any_fail = String::from_utf8(out.stdout.clone()).unwrap().lines().any(|l| l.contains("\"pass\":false"));
    assert_eq!(code(&out), if any_fail { 3 } else { 0 });
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"layers": 1, "d_model": 16, "seed": 9}"#).unwrap();
    assert_eq!(code(&acttail(dir.path(), &["synth", "--config", "cfg.json", "--out", "a.safetensors"])), 0);
    assert_eq!(load_tensor_file(dir.path().join("a.safetensors")).unwrap().len(), 7);
    assert_eq!(code(&acttail(dir.path(), &["synth", "--layers", "1", "--d-model", "16", "--seed", "9", "--out", "b.safetensors"])), 0);
    assert_eq!(read(dir.path(), "a.safetensors"), read(dir.path(), "b.safetensors"));

    let out = acttail(dir.path(), &["synth", "--config", "cfg.json", "--layers", "3", "--out", "c.safetensors"]);
    assert_eq!(code(&out), 0);
    assert_eq!(load_tensor_file(dir.path().join("c.safetensors")).unwrap().len(), 21);

    std::fs::write(dir.path().join("bad.json"), "[1, 2]").unwrap();
    assert_eq!(code(&acttail(dir.path(), &["synth", "--config", "bad.json"])), 1);
}

#[test]
fn threads_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: &str| {
        Command::new(env!("CARGO_BIN_EXE_acttail"))
            .current_dir(dir.path())
            .env("ACTTAIL_THREADS", env)
            .args(["synth", "--layers", "1", "--d-model", "16", "--out", "-"])
            .output()
            .unwrap()
    };
    let one = run("1");
    let two = run("2");
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(code(&run("lots")), 1);
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&acttail(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&acttail(dir.path(), &["--help"])), 0);
    assert_eq!(code(&acttail(dir.path(), &["allocate", "x.jsonl"])), 1);
}

#[test]
fn sweep_report_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = acttail(dir.path(), &["sweep", "--layers", "1", "--d-model", "16", "--seeds", "0,1,2", "--batch", "4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8(read(dir.path(), "sweep.csv")).unwrap().lines().count(), 28);

    acttail(dir.path(), &["synth", "--layers", "1", "--d-model", "16"]);
    acttail(dir.path(), &["analyze", "stack.safetensors"]);
    acttail(dir.path(), &["allocate", "spectra.jsonl", "--global-sparsity", "0.7"]);
    let out = acttail(dir.path(), &["report", "spectra.jsonl", "plan.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8(read(dir.path(), "alpha_sparsity.tsv")).unwrap().lines().count(), 8);

    let out = acttail(dir.path(), &["bench", "--d-out", "64", "--d-in", "64", "--repeats", "2", "--out", "-"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().skip(1).all(|l| l.ends_with("true")));
}
