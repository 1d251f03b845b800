use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use heartsiam::cli::commands::checkpoint_path;
use heartsiam::cli::PipelineConfig;
use heartsiam::embednet::{init_params, load_checkpoint};
use heartsiam::pipeline::branch_seed;
use heartsiam::Domain;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(dir: &Path, args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_heartsiam"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

const CONFIG: &str = r#"{
  "seed": 11,
  "paths": {"manifest": "data/manifest.csv", "cache_dir": "cache", "output_dir": "out"},
  "synth": {"domains": ["a", "b"], "n_per_class": 4, "duration_s": 6.0},
  "sampler": {"anchor_domains": ["a", "b"], "n_blocks": 4},
  "training": {"epochs": 1, "batch": 8},
  "classifier": {"k": 3, "per_class": 10}
}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

fn ok(o: &Out) {
    assert_eq!(o.code, 0, "stdout:\n{}\nstderr:\n{}", o.stdout, o.stderr);
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_cycle_is_deterministic() {
    let dir = setup();
    let p = dir.path();
    let c = ["--config", "cfg.json"];
    let r = run(p, &[&c[..], &["synth"]].concat());
    ok(&r);
    assert!(r.stdout.trim().ends_with("manifest.csv"));
    assert!(p.join("data/manifest.csv").exists());
    let data1 = tree(&p.join("data"));
    ok(&run(p, &[&c[..], &["synth"]].concat()));
    assert_eq!(data1, tree(&p.join("data")));

    ok(&run(p, &[&c[..], &["prepare"]].concat()));
    let cache1 = tree(&p.join("cache"));
    assert_eq!(cache1.iter().filter(|(n, _)| n.extension().is_some_and(|e| e == "hssg")).count(), 16);
    ok(&run(p, &[&c[..], &["prepare"]].concat()));
    assert_eq!(cache1, tree(&p.join("cache")));

    ok(&run(p, &[&c[..], &["train"]].concat()));
    for d in ["a", "b"] {
        assert!(p.join(format!("out/branch_{d}.checkpoint.json")).exists());
        assert!(p.join(format!("out/branch_{d}.knn.json")).exists());
    }
    assert!(p.join("out/loss_trace.csv").exists());
    let out1 = tree(&p.join("out"));
    ok(&run(p, &[&c[..], &["train", "--jobs", "1"]].concat()));
    assert_eq!(out1, tree(&p.join("out")));

    let r = run(p, &[&c[..], &["evaluate", "data/manifest.csv"]].concat());
    ok(&r);
    assert!(r.stdout.contains("Macc") && r.stdout.contains("Sens.") && r.stdout.contains("Spec."));
    let metrics = fs::read_to_string(p.join("out/metrics.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    for key in ["se", "sp", "macc", "acc", "per_domain", "confusion", "undefined"] {
        assert!(v.get(key).is_some(), "{key} missing");
    }
    assert!(v["confusion"].get("fn").is_some());
    let preds = fs::read_to_string(p.join("out/predictions.csv")).unwrap();
    assert!(preds.starts_with("record_id,domain,label,score,prediction\n"));
    assert_eq!(preds.lines().count(), 17);
    ok(&run(p, &[&c[..], &["evaluate", "data/manifest.csv", "--jobs", "1"]].concat()));
    assert_eq!(metrics, fs::read_to_string(p.join("out/metrics.json")).unwrap());

    // one class only: undefined rates flagged, still exit 0
    let manifest = fs::read_to_string(p.join("data/manifest.csv")).unwrap();
    let normals: String = manifest
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.ends_with(",-1"))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    fs::write(p.join("data/normals.csv"), normals).unwrap();
    let r = run(p, &[&c[..], &["evaluate", "data/normals.csv"]].concat());
    ok(&r);
    assert!(r.stdout.contains("undefined: se, macc"));

    let r1 = run(p, &[&c[..], &["predict", "data/wav/aa0001.wav"]].concat());
    ok(&r1);
    let fields: Vec<&str> = r1.stdout.split_whitespace().collect();
    assert_eq!(fields[0], "aa0001");
    let score: f64 = fields[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert!(fields[2] == "1" || fields[2] == "-1");
    assert_eq!(r1.stdout, run(p, &[&c[..], &["predict", "data/wav/aa0001.wav"]].concat()).stdout);

    // missing branch
    fs::remove_file(p.join("out/branch_b.knn.json")).unwrap();
    let r = run(p, &[&c[..], &["evaluate", "data/manifest.csv"]].concat());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("branch b"), "{}", r.stderr);
}

#[test]
fn zero_epochs_store_the_initial_weights() {
    let dir = setup();
    let p = dir.path();
    let c = ["--config", "cfg.json", "--training.epochs", "0"];
    ok(&run(p, &[&c[..], &["synth"]].concat()));
    ok(&run(p, &[&c[..], &["prepare"]].concat()));
    ok(&run(p, &[&c[..], &["train"]].concat()));
    let cfg = PipelineConfig::load(&p.join("cfg.json")).unwrap();
    for d in ['a', 'b'] {
        let d = Domain::new(d).unwrap();
        let (params, _) = load_checkpoint(&checkpoint_path(&p.join("out"), d)).unwrap();
        let init = init_params::<f32>(&cfg.training.arch, branch_seed(cfg.training_seed(), d)).unwrap();
        assert_eq!(params.values, init.values);
    }
}

#[test]
fn seed_flag_changes_the_data() {
    let dir = setup();
    let p = dir.path();
    ok(&run(p, &["--config", "cfg.json", "synth", "s1"]));
    ok(&run(p, &["--config", "cfg.json", "--seed", "12", "synth", "s2"]));
    assert_ne!(tree(&p.join("s1")), tree(&p.join("s2")));
}

#[test]
fn empty_cell_is_named() {
    let dir = setup();
    let p = dir.path();
    let c = ["--config", "cfg.json"];
    ok(&run(p, &[&c[..], &["synth"]].concat()));
    ok(&run(p, &[&c[..], &["prepare"]].concat()));
    let r = run(p, &[&c[..], &["train", "--sampler.anchor_domains", "[\"a\",\"c\"]"]].concat());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("(c, Normal)"), "{}", r.stderr);
}

#[test]
fn usage_errors_and_help() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(run(p, &["--config", "cfg.json", "--training.epoch", "3", "train"]).code, 1);
    fs::write(p.join("bad.json"), r#"{"training": {"epochz": 1}}"#).unwrap();
    assert_eq!(run(p, &["--config", "bad.json", "train"]).code, 1);
    assert_eq!(run(p, &["--classifier.k", "4", "train"]).code, 1);
    assert_eq!(run(p, &["bogus"]).code, 1);

    fs::write(p.join("file"), "").unwrap();
    assert_eq!(run(p, &["--config", "cfg.json", "synth", "file/sub"]).code, 2);

    let r = run(p, &["train", "--help"]);
    ok(&r);
    for key in ["sampler.anchor_domains", "sampler.n_blocks", "training.epochs", "training.lr", "classifier.per_class"] {
        assert!(r.stdout.contains(key), "{key}");
    }
    let r = run(p, &["prepare", "--help"]);
    assert!(r.stdout.contains("processing.spike.threshold"));
    let r = run(p, &["evaluate", "--help"]);
    assert!(r.stdout.contains("classifier.threshold"));
}

#[test]
fn predict_rejects_unreadable_wav() {
    let dir = setup();
    let p = dir.path();
    let c = ["--config", "cfg.json"];
    ok(&run(p, &[&c[..], &["synth"]].concat()));
    ok(&run(p, &[&c[..], &["prepare"]].concat()));
    ok(&run(p, &[&c[..], &["train"]].concat()));
    fs::write(p.join("junk.wav"), b"not a wav").unwrap();
    let r = run(p, &[&c[..], &["predict", "junk.wav"]].concat());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("junk.wav"));
}
