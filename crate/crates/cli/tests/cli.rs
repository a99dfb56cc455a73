use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cauliflow_cli::exit;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cauliflow"))
        .args(args)
        .output()
        .expect("spawn cauliflow")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit status")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(dir: &Path, seed: &str) {
    let out = run(&["gen-data", "--seed", seed, "--train", "40", "--dev", "8", "--test", "8", "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&["--help"]), exit::OK);
    assert_eq!(code(&["--version"]), exit::OK);
    assert_eq!(code(&["train-flow", "--help"]), exit::OK);
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(code(&["gen-data", "--frobnicate"]), exit::USAGE);
    assert_eq!(code(&["fly"]), exit::USAGE);
    assert_eq!(code(&[]), exit::USAGE);
}

#[test]
fn missing_inputs_exit_with_their_own_status() {
    let tmp = TempDir::new().unwrap();
    let nowhere = tmp.path().join("nowhere");
    assert_eq!(code(&["train-dur", "--data", s(&nowhere), "--out", s(&tmp.path().join("m"))]), exit::MISSING_INPUT);
    let cfg = tmp.path().join("absent.toml");
    assert_eq!(code(&["selftest", "--config", s(&cfg)]), exit::MISSING_INPUT);
}

#[test]
fn invalid_configuration_is_rejected_before_any_work() {
    let tmp = TempDir::new().unwrap();
    let bad_key = tmp.path().join("bad.toml");
    fs::write(&bad_key, "learning_rate = 0.1\n").unwrap();
    assert_eq!(code(&["train-flow", "--config", s(&bad_key)]), exit::CONFIG);

    assert_eq!(code(&["predict", "--temperature", "-1", "--model", "m"]), exit::CONFIG);
    assert_eq!(code(&["evaluate", "--percentile", "0", "--predicted", "p"]), exit::CONFIG);
    assert_eq!(code(&["gen-data", "--train", "0", "--out", s(&tmp.path().join("d"))]), exit::CONFIG);
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn a_manifest_for_another_subcommand_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "1");
    let manifest = data.join("manifest.json");
    assert_eq!(code(&["train-dur", "--config", s(&manifest)]), exit::CONFIG);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("data");
    assert_eq!(code(&["gen-data", "--train", "5", "--dev", "1", "--test", "1", "--out", s(&out)]), exit::RUNTIME);
}

#[test]
fn gen_data_is_reproducible_and_seed_sensitive() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen_small(&a, "4");
    gen_small(&b, "4");
    gen_small(&c, "5");
    let (fa, fb, fc) = (files(&a), files(&b), files(&c));
    let data_only = |f: &[(PathBuf, Vec<u8>)]| -> Vec<(PathBuf, Vec<u8>)> {
        f.iter().filter(|(p, _)| p != Path::new("manifest.json")).cloned().collect()
    };
    assert_eq!(data_only(&fa), data_only(&fb));
    assert_ne!(data_only(&fa), data_only(&fc));
    for name in ["corpus/utterances.jsonl", "split.json", "latents.jsonl", "generator.toml"] {
        assert!(a.join(name).is_file(), "{name}");
    }
}

#[test]
fn manifests_record_tool_subcommand_seed_and_config() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "6");
    let m = manifest(&data);
    assert_eq!(m["tool"], "cauliflow");
    assert_eq!(m["subcommand"], "gen-data");
    assert_eq!(m["seed"], 6);
    assert_eq!(m["config"]["sizes"]["train"], 40);
    assert_eq!(m["config"]["generator"]["seed"], 6);
}

#[test]
fn flags_override_config_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("gen.toml");
    fs::write(&cfg, "[sizes]\ntrain = 30\ndev = 4\ntest = 4\n\n[generator]\nseed = 2\n").unwrap();
    let out = tmp.path().join("data");
    assert_eq!(code(&["gen-data", "--config", s(&cfg), "--train", "12", "--out", s(&out)]), exit::OK);
    let m = manifest(&out);
    assert_eq!(m["config"]["sizes"]["train"], 12);
    assert_eq!(m["config"]["sizes"]["dev"], 4);
    assert_eq!(m["seed"], 2);
    let split: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 12);
}

#[test]
fn evaluating_the_reference_against_itself_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "8");
    let eval = tmp.path().join("eval");
    let corpus = data.join("corpus");
    assert_eq!(
        code(&["evaluate", "--data", s(&data), "--predicted", s(&corpus), "--out", s(&eval)]),
        exit::OK
    );
    let report = fs::read_to_string(eval.join("report.txt")).unwrap();
    let get = |k: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap_or_else(|| panic!("{k} missing"))
            .parse()
            .unwrap()
    };
    assert_eq!(get("jsd_pause"), 0.0);
    assert_eq!(get("jsd_nonpause"), 0.0);
    assert_eq!(get("percentile_l1"), 0.0);
    assert_eq!(get("punct_precision"), 100.0);
    assert_eq!(get("punct_recall"), 100.0);
    for f in ["report.csv", "hist_pause.csv", "hist_nonpause.csv", "manifest.json"] {
        assert!(eval.join(f).is_file(), "{f}");
    }
}

#[test]
fn baselines_train_predict_and_need_a_phrasing_classifier() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "9");
    let durp = tmp.path().join("durp");
    let phrasing = tmp.path().join("phrasing");
    for (cmd, out) in [("train-durp", &durp), ("train-phrasing", &phrasing)] {
        let o = run(&[cmd, "--data", s(&data), "--epochs", "1", "--out", s(out)]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let pred = tmp.path().join("pred");
    let base = ["predict", "--data", s(&data), "--model", s(&durp), "--out", s(&pred)];
    assert_eq!(code(&base), exit::MISSING_INPUT);
    let mut with = base.to_vec();
    with.extend(["--phrasing", s(&phrasing)]);
    assert_eq!(code(&with), exit::OK);
    let lines = fs::read_to_string(pred.join("utterances.jsonl")).unwrap();
    assert!(lines.lines().count() >= 8);
}

#[test]
fn sweeps_reject_non_flow_models() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "10");
    let dur = tmp.path().join("dur");
    assert_eq!(code(&["train-dur", "--data", s(&data), "--epochs", "1", "--out", s(&dur)]), exit::OK);
    assert_eq!(code(&["sweep-rate", "--data", s(&data), "--model", s(&dur)]), exit::CONFIG);
    assert_eq!(code(&["sweep-rate", "--data", s(&data), "--model", s(&dur), "--control", "rx"]), exit::USAGE);
}

#[test]
fn selftest_passes() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["selftest", "--out", s(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = fs::read_to_string(tmp.path().join("selftest.txt")).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
