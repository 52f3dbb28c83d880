use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recap::dataset::{InstanceStore, Split};
use recap::evaluation::EvalReport;
use recap::training::EpochRecord;

const TINY_MODEL: [&str; 9] = [
    "model.hidden=16",
    "model.poi_dim=8",
    "model.cat_dim=4",
    "model.ff_dim=32",
    "model.graph_hidden=16",
    "revisit.calibration_hidden=8",
    "revisit.time_embedding_dim=4",
    "training.learning_rate=1e-3",
    "training.batch_size=256",
];

fn recap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recap"))
        .current_dir(dir)
        .env_remove("RECAP_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn with_sets(base: &[&str], sets: &[String]) -> Vec<String> {
    let mut v: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    for s in sets {
        v.push("--set".to_string());
        v.push(s.clone());
    }
    v
}

struct Run {
    dir: tempfile::TempDir,
    sets: Vec<String>,
}

impl Run {
    fn new(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        ok(&recap(
            dir.path(),
            &[
                "synth", "--out", "world/checkins.csv", "--set", "num_users=10", "--set", "num_pois=60",
                "--set", "num_checkins=3000", "--set", "withheld_pairs=10",
            ],
        ));
        let mut sets: Vec<String> = ["output_dir=run", "data.path=world/checkins.csv", "training.epochs=2"]
            .iter()
            .chain(TINY_MODEL.iter())
            .chain(extra.iter())
            .map(|s| s.to_string())
            .collect();
        sets.dedup();
        Run { dir, sets }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, sub: &str, more: &[&str]) -> Output {
        let mut args = with_sets(&[sub], &self.sets);
        args.extend(more.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        recap(self.dir.path(), &refs)
    }
}

fn epochs(path: &Path) -> Vec<EpochRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn missing_column_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "user_id,poi_id,category_id,latitude,longitude\nu1,p1,c1,40.7,-73.9\n",
    )
    .unwrap();
    let out = recap(dir.path(), &["preprocess", "--set", "data.path=bad.csv", "--set", "output_dir=run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("timestamp"));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = recap(dir.path(), &["train", "--set", "training.epochz=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn synth_is_byte_identical_and_infeasible_spec_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&recap(dir.path(), &["synth", "--out", name, "--set", "num_checkins=2000", "--set", "seed=3"]));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let truth: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["withheld"].as_array().unwrap().len(), 100);

    let out = recap(
        dir.path(),
        &["synth", "--out", "c.csv", "--set", "num_pois=6", "--set", "out_degree=2", "--set", "withheld_pairs=50"],
    );
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn preprocess_store_is_deterministic() {
    let run = Run::new(&[]);
    let first = ok(&run.cmd("preprocess", &[]));
    assert!(first.contains("users          10"));
    assert!(first.contains("tail at eta=1"));
    let a = std::fs::read(run.path("run/store.json")).unwrap();
    ok(&run.cmd("preprocess", &[]));
    assert_eq!(a, std::fs::read(run.path("run/store.json")).unwrap());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.path("run/summary.json")).unwrap()).unwrap();
    assert!(summary["test_pairs"]["tail_share"].as_f64().is_some());
    assert!(run.path("run/config.toml").exists());
}

/// Training counts recomputed from the stored sequences: consecutive
/// training-split check-ins inside one trajectory.
fn recount(store: &InstanceStore) -> HashMap<(u32, u32), u32> {
    let mut m = HashMap::new();
    for seq in &store.sequences {
        let mut cuts = vec![0];
        cuts.extend(&seq.trajectory_boundaries);
        cuts.push(seq.checkins.len());
        for w in cuts.windows(2) {
            for pair in seq.checkins[w[0]..w[1]].windows(2) {
                if let ([a, b], true) = (pair, pair.iter().all(|c| c.split == Split::Train)) {
                    *m.entry((a.poi.unwrap(), b.poi.unwrap())).or_insert(0) += 1;
                }
            }
        }
    }
    m
}

#[test]
fn train_evaluate_report_pipeline() {
    let run = Run::new(&[]);
    ok(&run.cmd("preprocess", &[]));
    ok(&run.cmd("train", &[]));
    assert!(run.path("run/checkpoint.safetensors").exists());
    let log = epochs(&run.path("run/train_log.jsonl"));
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|r| r.lambda_warm == 0.0 && r.main_loss.is_finite()));

    ok(&run.cmd("train", &[]));
    assert_eq!(epochs(&run.path("run/train_log.jsonl"))[0].main_loss, log[0].main_loss);

    let text = ok(&run.cmd("evaluate", &[]));
    assert!(text.contains("Tail (inst.)"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.path("run/report_test.json")).unwrap()).unwrap();
    assert!(report["tail"]["hr20"].as_f64().is_some());
    assert!(run.path("run/bins_test.tsv").exists());

    let store = InstanceStore::load(run.path("run/store.json")).unwrap();
    let counts = recount(&store);
    for eta in [0u32, 1] {
        let set = format!("eval.eta={eta}");
        ok(&run.cmd("evaluate", &["--set", &set]));
        let r: EvalReport = serde_json::from_slice(&std::fs::read(run.path("run/report_test.json")).unwrap()).unwrap();
        let expected = store
            .test
            .instances
            .iter()
            .filter(|i| counts.get(&(i.source, i.target)).copied().unwrap_or(0) <= eta)
            .count();
        assert_eq!((r.eta, r.tail.count), (eta, expected));
    }

    ok(&run.cmd("analyze-hops", &[]));
    let hops: serde_json::Value = serde_json::from_slice(&std::fs::read(run.path("run/hops.json")).unwrap()).unwrap();
    assert_eq!(hops["records"].as_array().unwrap().len(), 5);

    let summary = ok(&run.cmd("report", &[]));
    for section in ["== dataset ==", "== training ==", "== evaluation (test) ==", "== hop analysis =="] {
        assert!(summary.contains(section), "{section}");
    }
}

#[test]
fn changed_architecture_exits_four_on_evaluate() {
    let run = Run::new(&[]);
    ok(&run.cmd("preprocess", &[]));
    ok(&run.cmd("train", &[]));
    let out = run.cmd("evaluate", &["--set", "model.hops=3"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn divergent_training_exits_three() {
    let run = Run::new(&["training.learning_rate=1e30", "training.batch_size=64", "training.grad_clip=false"]);
    ok(&run.cmd("preprocess", &[]));
    let out = run.cmd("train", &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("last good epoch"));
}

#[test]
fn output_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    ok(&recap(dir.path(), &["synth", "--out", "w.csv", "--set", "num_checkins=2000"]));
    let out = Command::new(env!("CARGO_BIN_EXE_recap"))
        .current_dir(dir.path())
        .env("RECAP_OUTPUT_DIR", "from_env")
        .args(["preprocess", "--set", "data.path=w.csv"])
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from_env/store.json").exists());
    let resolved = std::fs::read_to_string(dir.path().join("from_env/config.toml")).unwrap();
    assert!(resolved.contains("output_dir = \"from_env\""));
}
