use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use robust_crl_cli::document::MdpDocument;
use robust_crl_cli::train::RunManifest;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_robust-crl");

const MINIMAL: &str = r#"
delta = 0.2
sigma = -10.0
steps = 20
methods = ["exact_rpd", "robust_rpd"]

[env]
kind = "garnet"
sn = 2
an = 2
seed = 3
threshold = "active"

[schedule]
kind = "practical"
theta_step = 1.0
lambda_step = 1.0
reg = 0.1

[online]
eps_est = 0.05

[eval]
stride = 4
"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("ROBUST_CRL_SEED").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(config: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), config).unwrap();
    dir
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn minimal_train_is_quick_and_complete() {
    let dir = setup(MINIMAL);
    let start = Instant::now();
    let o = run(&["train", "--config", "cfg.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(5));
    let out = dir.path().join("out");
    for f in ["trace.csv", "policies.json", "env.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,replica,seed,t,lambda,V_sigma_r_rho,V_sigma_c_rho,grad_mapping_norm,alpha_t,beta_t,b_t"
    );
    assert_eq!(lines.count(), 2 * 21);
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seeds, vec![0]);
    assert_eq!(manifest.feasibility.len(), 2);
    assert!(manifest.lambda_max > 0.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = setup(MINIMAL);
    for out in ["a", "b"] {
        assert!(run(&["train", "--config", "cfg.toml", "--out", out, "--jobs", "2"], dir.path()).status.success());
    }
    let o = run(&["train", "--config", "a/manifest.json", "--out", "c"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let p = dir.path();
    assert_eq!(std::fs::read(p.join("a/trace.csv")).unwrap(), std::fs::read(p.join("b/trace.csv")).unwrap());
    assert_eq!(std::fs::read(p.join("a/trace.csv")).unwrap(), std::fs::read(p.join("c/trace.csv")).unwrap());
    assert_eq!(std::fs::read(p.join("a/policies.json")).unwrap(), std::fs::read(p.join("c/policies.json")).unwrap());
}

#[test]
fn seed_comes_from_environment_variable() {
    let dir = setup(MINIMAL);
    let o = Command::new(BIN)
        .args(["train", "--config", "cfg.toml", "--out", "out", "--replicas", "2"])
        .current_dir(dir.path())
        .env("ROBUST_CRL_SEED", "41")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m: RunManifest = serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.seeds, vec![41, 42]);
    assert_eq!(m.config.seed, 41);
}

#[test]
fn missing_field_exits_with_two() {
    let dir = setup(&MINIMAL.replace("steps = 20\n", ""));
    let o = run(&["train", "--config", "cfg.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`steps`"), "{}", stderr(&o));

    let dir = setup(&MINIMAL.replace("theta_step = 1.0\n", ""));
    let o = run(&["train", "--config", "cfg.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule.theta_step"));
}

#[test]
fn eval_writes_bands_and_charts() {
    let dir = setup(&MINIMAL.replace("[eval]\n", "[eval]\nn_reps = 1\n"));
    assert!(run(&["train", "--config", "cfg.toml", "--out", "out"], dir.path()).status.success());
    let o = run(&["eval", "--run", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iterate,method,metric,mean,p5,p95,exact");
    // iterates 0, 4, ..., 20 for two methods and two metrics
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6 * 2 * 2);
    for r in &rows {
        assert_eq!(r[3], r[4]);
        assert_eq!(r[3], r[5]);
    }
    let vc = std::fs::read_to_string(dir.path().join("out/vc.svg")).unwrap();
    assert!(vc.contains(r#"viewBox="0 0 800 500""#) && vc.contains("stroke-dasharray"));
    assert!(dir.path().join("out/vr.svg").exists());
}

#[test]
fn eval_output_is_frozen() {
    let dir = setup(&MINIMAL.replace("methods = [\"exact_rpd\", \"robust_rpd\"]", "methods = [\"exact_rpd\"]"));
    assert!(run(&["train", "--config", "cfg.toml", "--out", "out"], dir.path()).status.success());
    assert!(run(&["eval", "--run", "out"], dir.path()).status.success());
    let out = dir.path().join("out");
    assert_eq!(sha(&out.join("trace.csv")), "bfe94fec8b2b2a7ef724540b5e6481e40da9bfd40d9ab3fb8217909272e3df3b");
    assert_eq!(sha(&out.join("vc.svg")), "bbe499940d406781a5bc226171c4975841074ef5a4350db3ab8751b70c1911a8");
}

#[test]
fn eval_refuses_other_environment() {
    let dir = setup(MINIMAL);
    assert!(run(&["train", "--config", "cfg.toml", "--out", "out"], dir.path()).status.success());
    let mut doc = MdpDocument::load(&dir.path().join("out/env.json")).unwrap();
    doc.thresholds[0] += 0.5;
    std::fs::write(dir.path().join("other.json"), doc.to_json()).unwrap();
    let o = run(&["eval", "--run", "out", "--env", "other.json"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("hash mismatch"));
    assert!(!dir.path().join("out/eval.csv").exists());
}

#[test]
fn generated_envs_match_golden_files() {
    let dir = TempDir::new().unwrap();
    let o = run(&["gen", "--kind", "garnet", "--sn", "2", "--an", "1", "--seed", "0", "--out", "g.json"], dir.path());
    assert!(o.status.success());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/garnet_2_1_seed0.json");
    assert_eq!(std::fs::read(dir.path().join("g.json")).unwrap(), std::fs::read(golden).unwrap());

    let cases: [(&[&str], &str); 3] = [
        (&["--kind", "frozen-lake", "--size", "4"], "018d6cecdd01a4be2556596b06a1a2a7fb378924f425d8e0ef8da5b354294843"),
        (&["--kind", "taxi"], "001c5088ec5020dfeccf704684f234dc8f1dac2a13dcb3798e398f433473e975"),
        (&["--kind", "n-chain", "--n", "5"], "8d81714a270e005959f846f729f088998ab6e96b7adce211de436e262909e141"),
    ];
    for (args, hash) in cases {
        let mut full = vec!["gen"];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--out", "e.json"]);
        assert!(run(&full, dir.path()).status.success());
        assert_eq!(sha(&dir.path().join("e.json")), hash, "{args:?}");
    }
}

#[test]
fn verify_reports_corrupted_row() {
    let dir = TempDir::new().unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/garnet_2_1_seed0.json");
    let o = run(&["verify", "--env", golden.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
    assert!(text.contains("PASS zero_radius_equivalence"));

    let mut doc = MdpDocument::load(&golden).unwrap();
    doc.kernel[1][0][1] = 0.5;
    std::fs::write(dir.path().join("bad.json"), doc.to_json()).unwrap();
    let o = run(&["verify", "--env", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("FAIL kernel_stochastic: row 1 (s=1, a=0)"), "{text}");
}

#[test]
fn counterexample_report() {
    let dir = TempDir::new().unwrap();
    let o = run(&["counterexample", "--gamma", "0.9", "--delta", "0.1", "--out", "."], dir.path());
    assert!(o.status.success());
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("counterexample.json")).unwrap()).unwrap();
    assert_eq!(json["verdict"], true);
    assert!(json["closed_form_error"].as_f64().unwrap() < 1e-9);
    let o = run(&["counterexample", "--gamma", "1.0"], dir.path());
    assert!(!o.status.success());
}
