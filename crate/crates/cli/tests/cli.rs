use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bicomp_cli::{read_report_csv, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK};
use bicomp_core::engine::read_metrics_csv;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bicomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicomp"))
        .args(args)
        .env("BICOMP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn minimal(algo: &str, dual: Value, primal: Value, rounds: usize) -> Value {
    json!({
        "problem": {"kind": "quadratic", "synthetic_quadratic": {"n_workers": 3, "dim": 5, "seed": 4}},
        "algorithm": {"algo": algo, "gamma": 0.05, "beta": "theory"},
        "compressors": {"dual": dual, "primal": primal},
        "rounds": rounds,
        "x0": {"gaussian": {"scale": 1.0, "seed": 2}}
    })
}

fn run(dir: &Path, cfg: &Path, out: &str, extra: &[&str]) -> (Output, String) {
    let out_path = dir.join(out);
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = bicomp(&args);
    let csv = fs::read_to_string(&out_path).unwrap_or_default();
    (o, csv)
}

#[test]
fn minimal_run_writes_every_round() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &minimal(
            "gd",
            json!({"kind": "identity"}),
            json!({"kind": "identity"}),
            40,
        ),
    );
    let summary = dir.path().join("s.json");
    let (o, csv) = run(
        dir.path(),
        &cfg,
        "m.csv",
        &["--summary", summary.to_str().unwrap()],
    );
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(read_metrics_csv(&csv).unwrap().len(), 41);
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(printed, saved);
    for key in [
        "final_f",
        "final_grad_norm_sq",
        "rounds",
        "uplink_cum",
        "downlink_cum",
        "gamma_used",
        "theory_caps",
    ] {
        assert!(printed.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn contractive_uplink_for_diana_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &minimal(
            "diana",
            json!({"kind": "topk", "k": 1}),
            json!({"kind": "identity"}),
            5,
        ),
    );
    let (o, _) = run(dir.path(), &cfg, "m.csv", &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unbiased uplink compressor"), "{err}");
}

#[test]
fn unparsable_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\"problem\": 3}").unwrap();
    let (o, _) = run(dir.path(), &p, "m.csv", &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn seed_override_affects_only_randomized_runs() {
    let dir = TempDir::new().unwrap();
    let randk = write_config(
        dir.path(),
        "r.json",
        &minimal(
            "ef21p_dcgd",
            json!({"kind": "randk", "k": 2}),
            json!({"kind": "topk", "k": 2}),
            30,
        ),
    );
    let topk = write_config(
        dir.path(),
        "t.json",
        &minimal(
            "ef21p",
            json!({"kind": "identity"}),
            json!({"kind": "topk", "k": 2}),
            30,
        ),
    );
    let (_, r1) = run(dir.path(), &randk, "r1.csv", &["--seed", "1"]);
    let (_, r2) = run(dir.path(), &randk, "r2.csv", &["--seed", "2"]);
    let (_, t1) = run(dir.path(), &topk, "t1.csv", &["--seed", "1"]);
    let (_, t2) = run(dir.path(), &topk, "t2.csv", &["--seed", "2"]);
    assert_ne!(r1, r2);
    assert_eq!(t1, t2);
}

#[test]
fn downlink_flag_multiplies_broadcasts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &minimal(
            "ef21p",
            json!({"kind": "identity"}),
            json!({"kind": "topk", "k": 2}),
            10,
        ),
    );
    let (_, once) = run(dir.path(), &cfg, "a.csv", &[]);
    let (_, times_n) = run(dir.path(), &cfg, "b.csv", &["--downlink-times-n"]);
    let once = read_metrics_csv(&once).unwrap();
    let times_n = read_metrics_csv(&times_n).unwrap();
    assert_eq!(once.last().unwrap().downlink_cum, 20);
    assert_eq!(times_n.last().unwrap().downlink_cum, 60);
}

#[test]
fn divergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let mut cfg = minimal(
        "gd",
        json!({"kind": "identity"}),
        json!({"kind": "identity"}),
        500,
    );
    cfg["algorithm"]["gamma"] = json!(1e3);
    let cfg = write_config(dir.path(), "c.json", &cfg);
    let (o, _) = run(dir.path(), &cfg, "m.csv", &[]);
    assert_eq!(o.status.code(), Some(EXIT_DIVERGED));
}

#[test]
fn constants_for_two_worker_quadratic() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "problem": {"kind": "quadratic", "workers": [{"a": [[1.0]], "b": [0.0]}, {"a": [[3.0]], "b": [0.0]}]},
        "algorithm": {"algo": "ef21p_diana", "gamma": "theory", "beta": "theory"},
        "compressors": {"dual": {"kind": "identity"}, "primal": {"kind": "identity"}},
        "rounds": 10
    });
    let p = write_config(dir.path(), "c.json", &cfg);
    let o = bicomp(&["constants", "--config", p.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["lemma1"]["all_hold"], json!(true));
    assert_eq!(report["beta"], json!(1.0));
    assert_eq!(report["inputs"]["l"], json!(2.0));
    assert_eq!(report["inputs"]["l_max"], json!(3.0));
    assert!((report["inputs"]["l_hat"].as_f64().unwrap() - 5f64.sqrt()).abs() < 1e-12);
    // omega = 0 leaves only the smoothness terms
    let terms: Vec<String> = report["gamma_diana_strong"]["terms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t[0].as_str().unwrap().to_string())
        .collect();
    assert!(
        terms.iter().all(|t| !t.contains("omega L_max")),
        "{terms:?}"
    );
}

#[test]
fn report_merges_runs() {
    let dir = TempDir::new().unwrap();
    let diana = write_config(
        dir.path(),
        "diana.json",
        &minimal(
            "diana",
            json!({"kind": "randk", "k": 1}),
            json!({"kind": "identity"}),
            12,
        ),
    );
    let bi = write_config(
        dir.path(),
        "bi.json",
        &minimal(
            "ef21p_diana",
            json!({"kind": "randk", "k": 1}),
            json!({"kind": "topk", "k": 1}),
            12,
        ),
    );
    let (_, a) = run(dir.path(), &diana, "diana.csv", &[]);
    let (_, b) = run(dir.path(), &bi, "bi.csv", &[]);
    let out = dir.path().join("merged.csv");
    let o = bicomp(&[
        "report",
        "--inputs",
        dir.path().join("diana.csv").to_str().unwrap(),
        dir.path().join("bi.csv").to_str().unwrap(),
        "--x",
        "downlink",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let rows = read_report_csv(&fs::read_to_string(&out).unwrap()).unwrap();
    let (na, nb) = (
        read_metrics_csv(&a).unwrap().len(),
        read_metrics_csv(&b).unwrap().len(),
    );
    assert_eq!(rows.len(), na + nb);
    let last = |label: &str| rows.iter().rfind(|r| r.run_label == label).unwrap().x;
    // d / k_primal = 5
    assert_eq!(last("diana"), 5 * last("bi"));

    let single = dir.path().join("single.csv");
    bicomp(&[
        "report",
        "--inputs",
        dir.path().join("diana.csv").to_str().unwrap(),
        "--out",
        single.to_str().unwrap(),
    ]);
    let rows = read_report_csv(&fs::read_to_string(&single).unwrap()).unwrap();
    for (r, m) in rows.iter().zip(read_metrics_csv(&a).unwrap()) {
        assert_eq!(
            (r.x, r.f.to_bits(), r.grad_norm_sq.to_bits()),
            (m.round as u64, m.f.to_bits(), m.grad_norm_sq.to_bits())
        );
    }
}

#[test]
fn report_rejects_foreign_csv() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "a,b\n1,2\n").unwrap();
    let o = bicomp(&[
        "report",
        "--inputs",
        p.to_str().unwrap(),
        "--out",
        dir.path().join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn sweep_lists_every_stepsize() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &minimal(
            "dcgd",
            json!({"kind": "randk", "k": 2}),
            json!({"kind": "identity"}),
            20,
        ),
    );
    let o = bicomp(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--lo",
        "-4",
        "--hi",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 7);
}
