use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisykit::dataset::load_csv;
use serde_json::Value;

fn noisykit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisykit"))
        .args(args)
        .env_remove("NOISYKIT_THREADS")
        .output()
        .expect("spawn noisykit")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self, name: &str, per_class: usize, seed: u64) -> PathBuf {
        let out = self.path(name);
        let (pc, sd) = (per_class.to_string(), seed.to_string());
        ok(&noisykit(&[
            "synth", "--classes", "3", "--dim", "4", "--per-class", &pc, "--sep", "3", "--sigma", "1", "--seed", &sd,
            "-o", s(&out),
        ]));
        out
    }

    fn noisy(&self) -> (PathBuf, PathBuf) {
        let clean = self.synth("clean.csv", 150, 7);
        let test = self.synth("test.csv", 60, 8);
        let noisy = self.path("noisy.csv");
        ok(&noisykit(&["inject", "-i", s(&clean), "--t-known", "fashion05", "--seed", "3", "-o", s(&noisy)]));
        (noisy, test)
    }
}

#[test]
fn synth_writes_rows_and_manifest() {
    let fx = Fixture::new();
    let out = fx.path("data.csv");
    ok(&noisykit(&[
        "synth", "--classes", "3", "--dim", "8", "--per-class", "2000", "--sep", "10", "--sigma", "1", "--seed", "7",
        "-o", s(&out),
    ]));
    let ds = load_csv(&out).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (6000, 8, 3));

    let manifest = read_json(&fx.path("data.csv.manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["outputs"][0]["path"], s(&out));
    assert_eq!(manifest["resolved_config"]["seed"], 7);
    assert!(manifest["rng_algorithm"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn synth_is_reproducible() {
    let fx = Fixture::new();
    let a = fx.synth("a.csv", 100, 5);
    let b = fx.synth("b.csv", 100, 5);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn missing_seed_is_a_usage_error_without_output() {
    let fx = Fixture::new();
    let out = fx.path("data.csv");
    let r = noisykit(&[
        "synth", "--classes", "3", "--dim", "8", "--per-class", "10", "--sep", "10", "--sigma", "1", "-o", s(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_spec_is_a_usage_error_without_output() {
    let fx = Fixture::new();
    let out = fx.path("data.csv");
    let r = noisykit(&[
        "synth", "--classes", "1", "--dim", "8", "--per-class", "10", "--sep", "10", "--sigma", "1", "--seed", "1",
        "-o", s(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    assert!(std::fs::read_dir(fx.dir.path()).unwrap().next().is_none());
}

#[test]
fn inject_keeps_about_half_the_labels() {
    let fx = Fixture::new();
    let clean = fx.synth("clean.csv", 2000, 1);
    let noisy = fx.path("noisy.csv");
    ok(&noisykit(&["inject", "-i", s(&clean), "--t-known", "fashion05", "--seed", "3", "-o", s(&noisy)]));
    let (c, n) = (load_csv(&clean).unwrap(), load_csv(&noisy).unwrap());
    for class in 0..3 {
        let rows: Vec<usize> = (0..c.len()).filter(|&i| c.labels()[i] == class).collect();
        let kept = rows.iter().filter(|&&i| n.labels()[i] == class).count() as f64 / rows.len() as f64;
        assert!((kept - 0.5).abs() < 0.04, "class {class} kept {kept}");
    }
    assert_eq!(c.features(), n.features());
}

#[test]
fn inject_identity_keeps_every_label() {
    let fx = Fixture::new();
    let clean = fx.synth("clean.csv", 50, 1);
    let same = fx.path("same.csv");
    ok(&noisykit(&["inject", "-i", s(&clean), "--t-known", "identity", "--seed", "3", "-o", s(&same)]));
    assert_eq!(std::fs::read(clean).unwrap(), std::fs::read(same).unwrap());
}

#[test]
fn inject_inline_matrix() {
    let fx = Fixture::new();
    let clean = fx.synth("clean.csv", 50, 1);
    let out = fx.path("out.csv");
    ok(&noisykit(&[
        "inject", "-i", s(&clean), "--t-inline", "0,1,0;0,0,1;1,0,0", "--seed", "3", "-o", s(&out),
    ]));
    let (c, n) = (load_csv(&clean).unwrap(), load_csv(&out).unwrap());
    assert!(c.labels().iter().zip(n.labels()).all(|(a, b)| (a + 1) % 3 == *b));
}

#[test]
fn malformed_transition_file_names_the_violation() {
    let fx = Fixture::new();
    let clean = fx.synth("clean.csv", 20, 1);
    let t = fx.path("t.json");
    std::fs::write(&t, r#"{"size": 3, "rows": [[0.5,0.5,0.5],[0,1,0],[0,0,1]]}"#).unwrap();
    let out = fx.path("out.csv");
    let r = noisykit(&["inject", "-i", s(&clean), "--t-file", s(&t), "--seed", "3", "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("row 0 sums to 1.5"), "{err}");
    assert!(!out.exists());
}

#[test]
fn estimate_t_writes_valid_matrices_with_top_k() {
    let fx = Fixture::new();
    let (noisy, _) = fx.noisy();
    for k in ["1", "5"] {
        let out = fx.path(&format!("t{k}.json"));
        ok(&noisykit(&["estimate-t", "-i", s(&noisy), "--top-k", k, "--epochs", "2", "-o", s(&out)]));
        let v = read_json(&out);
        assert_eq!(v["metadata"]["top_k"], k.parse::<u64>().unwrap());
        for row in v["rows"].as_array().unwrap() {
            let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn train_reports_every_trial() {
    let fx = Fixture::new();
    let (noisy, test) = fx.noisy();
    let out = fx.path("rw.json");
    ok(&noisykit(&[
        "train", "-i", s(&noisy), "--test", s(&test), "--method", "reweight", "--t-known", "fashion05", "--trials",
        "10", "--epochs", "1", "-o", s(&out),
    ]));
    let v = read_json(&out);
    assert_eq!(v["trials"].as_array().unwrap().len(), 10);
    let csv = std::fs::read_to_string(fx.path("rw.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(fx.path("rw.csv.manifest.json").exists());
}

#[test]
fn revision_with_estimate_records_matrices() {
    let fx = Fixture::new();
    let (noisy, test) = fx.noisy();
    let out = fx.path("rev.json");
    ok(&noisykit(&[
        "train", "-i", s(&noisy), "--test", s(&test), "--method", "revision", "--t-source", "estimate", "--top-k", "1",
        "--trials", "2", "--epochs", "2", "--revision-epochs", "2", "-o", s(&out),
    ]));
    for t in read_json(&out)["trials"].as_array().unwrap() {
        assert_eq!(t["estimated_t"]["size"], 3);
        assert_eq!(t["learned_delta_t"]["size"], 3);
    }
}

#[test]
fn baseline_warns_that_t_is_ignored() {
    let fx = Fixture::new();
    let (noisy, test) = fx.noisy();
    let out = fx.path("b.json");
    let r = noisykit(&[
        "train", "-i", s(&noisy), "--test", s(&test), "--method", "baseline", "--t-known", "fashion05", "--trials", "1",
        "--epochs", "1", "-o", s(&out),
    ]);
    ok(&r);
    assert!(String::from_utf8_lossy(&r.stderr).contains("ignores the transition matrix"));
}

#[test]
fn compare_emits_json_csv_and_chart() {
    let fx = Fixture::new();
    let (noisy, test) = fx.noisy();
    let out = fx.path("cmp.json");
    ok(&noisykit(&[
        "compare", "-i", s(&noisy), "--test", s(&test), "--t-known", "fashion05", "--trials", "3", "--epochs", "1",
        "--revision-epochs", "1", "-o", s(&out),
    ]));
    let csv = std::fs::read_to_string(fx.path("cmp.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("trial,method,accuracy"));
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    let svg = std::fs::read_to_string(fx.path("cmp.svg")).unwrap();
    // One background rect plus one bar per method.
    assert_eq!(svg.matches("<rect").count(), 5);
    for m in ["baseline", "forward", "reweight", "revision"] {
        assert!(svg.contains(&format!(">{m}</text>")));
    }
    let v = read_json(&out);
    assert_eq!(v["summary"].as_array().unwrap().len(), 4);
    for name in ["cmp.json", "cmp.csv", "cmp.svg"] {
        let manifest = read_json(&fx.path(&format!("{name}.manifest.json")));
        let outputs: Vec<&str> = manifest["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o["path"].as_str().unwrap())
            .collect();
        assert!(outputs.contains(&s(&fx.path(name))));
    }
}

#[test]
fn score_t_reproduces_published_error() {
    let fx = Fixture::new();
    let est = fx.path("est.json");
    std::fs::write(
        &est,
        r#"{"size": 3, "rows": [[0.545,0.224,0.229],[0.231,0.488,0.280],[0.285,0.213,0.501]]}"#,
    )
    .unwrap();
    let r = noisykit(&["compare", "--score-t", s(&est), "--t-known", "fashion05"]);
    ok(&r);
    let v: f64 = String::from_utf8_lossy(&r.stdout).trim().parse().unwrap();
    assert!((v - 0.158).abs() < 1e-3, "{v}");
}

#[test]
fn compare_without_inputs_is_a_usage_error() {
    let r = noisykit(&["compare", "--t-known", "fashion05"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let fx = Fixture::new();
    let (noisy, test) = fx.noisy();
    let cfg = fx.path("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "trials": 4, "lr": 0.01}"#).unwrap();
    let out = fx.path("r.json");
    ok(&noisykit(&[
        "--config", s(&cfg), "train", "-i", s(&noisy), "--test", s(&test), "--method", "forward", "--t-known",
        "fashion05", "--trials", "2", "-o", s(&out),
    ]));
    let v = read_json(&out);
    assert_eq!(v["config"]["trials"], 2);
    assert_eq!(v["config"]["epochs"], 1);
    assert_eq!(v["config"]["lr"], 0.01);
}

#[test]
fn thread_count_does_not_change_reports() {
    let fx = Fixture::new();
    let (noisy, test) = fx.noisy();
    let mut outputs = Vec::new();
    for threads in ["0", "3"] {
        let out = fx.path(&format!("r{threads}.json"));
        let r = Command::new(env!("CARGO_BIN_EXE_noisykit"))
            .args([
                "train", "-i", s(&noisy), "--test", s(&test), "--method", "forward", "--t-known", "fashion05",
                "--trials", "4", "--epochs", "1", "-o", s(&out),
            ])
            .env("NOISYKIT_THREADS", threads)
            .output()
            .unwrap();
        ok(&r);
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
