use std::path::Path;
use std::process::{Command, Output};

fn labrr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labrr"))
        .args(args)
        .env("LABRR_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, func: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = labrr(&["synth", "--fn", func, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn numbers(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.parse().unwrap())
        .collect()
}

fn labels(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn synth_writes_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let f1 = synth(dir.path(), "f1.csv", "f1", 750, 1);
    let text = std::fs::read_to_string(&f1).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,y");
    assert_eq!(text.lines().count(), 751);

    let f2 = synth(dir.path(), "f2.csv", "f2", 10, 1);
    let text = std::fs::read_to_string(&f2).unwrap();
    assert!(text.lines().all(|l| l.split(',').count() == 7));
}

#[test]
fn unknown_function_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = labrr(&["synth", "--fn", "f9", "--n", "10", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown function"));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = labrr(&["train", "--data", p(&dir.path().join("nope.csv")), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "f1", 200, 2);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let trace = dir.path().join("trace.jsonl");
    for (out, extra) in [(&a, vec!["--trace", p(&trace)]), (&b, vec![])] {
        let mut args = vec!["train", "--data", p(&data), "--out", p(out), "--B", "1e-2", "--seed", "7"];
        args.extend(extra);
        let o = labrr(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let last = std::fs::read_to_string(&trace).unwrap().lines().last().unwrap().to_string();
    assert!(last.contains("\"record\":\"summary\""));
}

#[test]
fn oversized_n0_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "f1", 10, 2);
    let o = labrr(&["train", "--data", p(&data), "--out", p(&dir.path().join("m.json")), "--n0", "20"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient data"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "f1", 10, 2);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"initial_support": 50}"#).unwrap();
    let model = dir.path().join("m.json");
    let o = labrr(&["train", "--data", p(&data), "--out", p(&model), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let o = labrr(&["train", "--data", p(&data), "--out", p(&model), "--config", p(&cfg), "--n0", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn jitter_free_model_reproduces_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "f3", 15, 4);
    let model = dir.path().join("m.json");
    let preds = dir.path().join("p.csv");
    let o = labrr(&["train", "--data", p(&data), "--out", p(&model), "--n0", "15", "--jitter", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = labrr(&["predict", "--model", p(&model), "--data", p(&data), "--out", p(&preds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (y, f) = (labels(&data), numbers(&preds));
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(*v), a.1.max(*v)));
    for (a, b) in y.iter().zip(&f) {
        // compare in normalized units
        assert!(2.0 * (a - b).abs() / (hi - lo) <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn predict_rejects_wrong_columns_and_clips() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "f1", 60, 5);
    let model = dir.path().join("m.json");
    let o = labrr(&["train", "--data", p(&data), "--out", p(&model), "--B", "1e-2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let wrong = synth(dir.path(), "w.csv", "f3", 5, 1);
    let o = labrr(&["predict", "--model", p(&model), "--data", p(&wrong)]);
    assert_eq!(o.status.code(), Some(2));

    // far outside the training box the raw interpolant decays towards zero
    // in normalized units; clipping at a tiny bound pins every output
    let far = dir.path().join("far.csv");
    std::fs::write(&far, "x1,x2\n0.1,0.2\n-1.5,1.9\n1.0,-0.3\n").unwrap();
    let preds = dir.path().join("p.csv");
    let o = labrr(&["predict", "--model", p(&model), "--data", p(&far), "--out", p(&preds), "--clip", "0.01"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (y, f) = (labels(&data), numbers(&preds));
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(*v), a.1.max(*v)));
    let mid = (lo + hi) / 2.0;
    for v in f {
        assert!((2.0 * (v - mid) / (hi - lo)).abs() <= 0.01 + 1e-12, "{v}");
    }
}

#[test]
fn benchmark_writes_results_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let strip = |path: &Path| -> String {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                if let Some(o) = v.as_object_mut() {
                    o.remove("wall_clock_seconds");
                }
                v.to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let o = labrr(&[
            "benchmark", "--fn", "f1", "--n", "150", "--data-seed", "3", "--trials", "2", "--B", "1e-2", "--L", "10",
            "--n0", "10", "--out", p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(strip(&a), strip(&b));
    let lines: Vec<serde_json::Value> =
        std::fs::read_to_string(&a).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["record"], "config");
    assert_eq!(lines[3]["record"], "aggregate");
    assert_ne!(lines[1]["r_squared"], lines[2]["r_squared"]);
    assert!(lines[1]["n_support"].as_u64().unwrap() < 120);
}

#[test]
fn benchmark_fails_only_when_every_trial_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let o = labrr(&["benchmark", "--fn", "f1", "--n", "30", "--trials", "2", "--n0", "100", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("insufficient data"));
}
