use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rbayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbayes")).args(args).env("RBAYES_THREADS", "1").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn records(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn noiseless_single_shot_always_survives() {
    let d = tempfile::tempdir().unwrap();
    let o = rbayes(&["simulate", "--noise", "noiseless", "--shots", "1", "--sequences", "3", "--lengths", "1,5,20", "--out-dir", dir_str(d.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = records(&d.path().join("dataset.jsonl"));
    assert_eq!(recs.len(), 9);
    assert!(recs.iter().all(|r| r["N"] == 1 && r["Q"] == 1));
}

#[test]
fn default_rb_design_has_200_records() {
    let d = tempfile::tempdir().unwrap();
    let o = rbayes(&["simulate", "--protocol", "rb", "--out-dir", dir_str(d.path())]);
    assert_eq!(code(&o), 0);
    assert_eq!(records(&d.path().join("dataset.jsonl")).len(), 200);
}

#[test]
fn simulate_fit_diagnose_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let sim = root.join("sim");
    let fit = root.join("fit");
    let diag = root.join("diag");
    let o = rbayes(&["simulate", "--noise", "depolarizing:0.002", "--lengths", "1,50,200,600,1500", "--sequences", "8", "--seed", "3", "--out-dir", dir_str(&sim)]);
    assert_eq!(code(&o), 0);
    let ds = sim.join("dataset.jsonl");
    let o = rbayes(&["fit", "--dataset", dir_str(&ds), "--chains", "2", "--warmup", "300", "--draws", "300", "--out-dir", dir_str(&fit)]);
    assert!(code(&o) <= 1, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["chains.csv", "diagnostics.json", "summary.json", "summary.csv"] {
        assert!(fit.join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(fit.join("summary.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("p_0.95"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("summary.json")).unwrap()).unwrap();
    let p = summary["params"].as_array().unwrap().iter().find(|x| x["name"] == "p").unwrap()["mean"].as_f64().unwrap();
    assert!((p - 0.998).abs() < 0.003, "{p}");
    let o = rbayes(&["diagnose", "--chains", dir_str(&fit.join("chains.csv")), "--out-dir", dir_str(&diag)]);
    assert!(code(&o) <= 1);
    let means = fs::read_to_string(diag.join("survival_means.csv")).unwrap();
    assert_eq!(means.lines().count(), 6);
    assert!(diag.join("survival_densities.csv").exists());

    let o = rbayes(&["fit", "--dataset", dir_str(&ds), "--method", "mle", "--out-dir", dir_str(&root.join("mle"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = rbayes(&["fit", "--dataset", dir_str(&ds), "--method", "bootstrap", "--replicates", "20", "--out-dir", dir_str(&root.join("boot"))]);
    assert!(code(&o) <= 1);
    assert!(root.join("boot/bootstrap.json").exists());
}

#[test]
fn same_seed_same_bytes() {
    let d = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let sim = d.path().join(format!("sim{tag}"));
        let fit = d.path().join(format!("fit{tag}"));
        rbayes(&["simulate", "--lengths", "1,10,50", "--sequences", "4", "--seed", "9", "--shuffle", "--out-dir", dir_str(&sim)]);
        rbayes(&["fit", "--dataset", dir_str(&sim.join("dataset.jsonl")), "--chains", "2", "--warmup", "100", "--draws", "100", "--seed", "5", "--out-dir", dir_str(&fit)]);
        (fs::read(sim.join("dataset.jsonl")).unwrap(), fs::read(fit.join("chains.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

fn plan_n(args: &[&str]) -> u64 {
    let d = tempfile::tempdir().unwrap();
    let mut a = vec!["plan", "--out-dir", dir_str(d.path())];
    a.extend_from_slice(args);
    let o = rbayes(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("curve.csv").exists());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("plan.json")).unwrap()).unwrap();
    v.get("n_opt").or(v.get("N_opt")).and_then(|x| x.as_u64()).unwrap()
}

#[test]
fn plan_scenarios() {
    assert_eq!(plan_n(&["--t-pick", "0"]), 1);
    assert!(plan_n(&["--t-pick", "50"]) > 1);
    assert_eq!(plan_n(&["--moment", "2", "--budget", "8000"]), 13);
}

#[test]
fn bad_input_exits_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&rbayes(&["fit", "--dataset", dir_str(&d.path().join("missing.jsonl"))])), 2);
    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, "{\"M\":1}\n").unwrap();
    assert_eq!(code(&rbayes(&["fit", "--dataset", dir_str(&bad), "--out-dir", dir_str(d.path())])), 2);
    assert_eq!(code(&rbayes(&["plan", "--moment", "2", "--budget", "1", "--out-dir", dir_str(d.path())])), 2);
    assert_ne!(code(&rbayes(&["simulate", "--noise", "unknown-model"])), 0);
}

#[test]
fn stuck_chain_is_flagged() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("chains.csv");
    let mut s = String::from("chain,draw,p\n");
    for c in 0..2 {
        for i in 0..200 {
            let v = if c == 0 { 0.99 + 1e-4 * ((i * 7 % 13) as f64) } else { 0.9 + 1e-4 * ((i * 5 % 11) as f64) };
            s.push_str(&format!("{c},{i},{v}\n"));
        }
    }
    fs::write(&path, s).unwrap();
    let o = rbayes(&["diagnose", "--chains", dir_str(&path), "--out-dir", dir_str(d.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("R-hat"));
}
