use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use jmmfr_core::eval::SweepResult;
use jmmfr_core::trainer::TrainReport;

fn jmmfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jmmfr"))
        .args(args)
        .env("JMMFR_LOG", "error")
        .output()
        .expect("run jmmfr")
}

fn ok(args: &[&str]) -> Output {
    let out = jmmfr(args);
    assert!(
        out.status.success(),
        "jmmfr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_writes_three_files_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["generate", "--out-dir", p(&a)]);
    for f in ["nodes.jsonl", "edges.jsonl", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    // feeding the manifest back as config reproduces it byte for byte
    let b = dir.path().join("b");
    ok(&["generate", "--config", p(&a.join("manifest.json")), "--out-dir", p(&b)]);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(fs::read(a.join("nodes.jsonl")).unwrap(), fs::read(b.join("nodes.jsonl")).unwrap());

    let c = dir.path().join("c");
    ok(&["generate", "--seed", "99", "--out-dir", p(&c)]);
    assert_ne!(fs::read(a.join("nodes.jsonl")).unwrap(), fs::read(c.join("nodes.jsonl")).unwrap());
    assert_ne!(fs::read(a.join("edges.jsonl")).unwrap(), fs::read(c.join("edges.jsonl")).unwrap());
}

#[test]
fn missing_data_dir_fails_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dir");
    let out = jmmfr(&["train", "--data-dir", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = jmmfr(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_lists_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("generate", &["--config", "--preset", "--seed", "--out-dir"]),
        (
            "train",
            &[
                "--data-dir", "--config", "--out", "--encoder", "--backbone", "--restoration", "--seed", "--epochs",
                "--patience", "--batch-size", "--learning-rate", "--dropout", "--beta1", "--beta2", "--depth",
                "--missing-ratio", "--full-graph-l1",
            ],
        ),
        ("eval", &["--data-dir", "--checkpoint", "--split", "--out"]),
        ("sweep", &["--axis", "--data-dir", "--config", "--models", "--seeds", "--values", "--jobs", "--out"]),
        ("export", &["--what", "--data-dir", "--checkpoint", "--out"]),
    ];
    for (sub, flags) in cases {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for f in *flags {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
    }
    let top = String::from_utf8_lossy(&ok(&["--help"]).stdout).to_string();
    for sub in ["generate", "train", "eval", "sweep", "export"] {
        assert!(top.contains(sub));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--out-dir", p(&data)]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"encoder":"sage","epochs":50,"seed":3}"#).unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--data-dir", p(&data), "--config", p(&cfg), "--epochs", "1", "--encoder", "mlp", "--out", p(&out)]);
    let report: TrainReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.history.len(), 1);
    assert_eq!(report.encoder.as_str(), "mlp");
    assert_eq!(report.seed, 3);
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--preset", "desk", "--out-dir", p(&data)]);

    let run = dir.path().join("run");
    ok(&[
        "train", "--data-dir", p(&data), "--encoder", "jmmfr-mc", "--epochs", "2", "--missing-ratio", "0.1", "--out",
        p(&run),
    ]);
    let body = fs::read_to_string(run.join("report.json")).unwrap();
    let report: TrainReport = serde_json::from_str(&body).unwrap();
    assert_eq!(report.history.len(), 2);
    assert!(report.best_epoch.is_some());
    let member = report.test.member.as_ref().unwrap();
    assert!((0.0..=1.0).contains(&member.accuracy));
    let value: serde_json::Value = serde_json::from_str(&body).unwrap();
    for key in ["history", "best_epoch", "val", "test"] {
        assert!(value.get(key).is_some(), "report lacks {key}");
    }
    for key in ["l1", "l2", "total", "val_metric"] {
        assert!(value["history"][0].get(key).is_some(), "epoch record lacks {key}");
    }

    let ck = run.join("checkpoint.json");
    let eval = |split: &str| {
        let out = ok(&["eval", "--data-dir", p(&data), "--checkpoint", p(&ck), "--split", split]);
        String::from_utf8(out.stdout).unwrap()
    };
    let first = eval("test");
    assert_eq!(first, eval("test"));
    let metrics: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(metrics["metrics"]["member"]["accuracy"].as_f64().unwrap(), member.accuracy);
    assert!(!metrics["restoration"].as_array().unwrap().is_empty());
    let val: serde_json::Value = serde_json::from_str(&eval("val")).unwrap();
    assert_eq!(val["split"], "val");

    let emb = dir.path().join("emb.tsv");
    ok(&["export", "--what", "embeddings", "--data-dir", p(&data), "--checkpoint", p(&ck), "--out", p(&emb)]);
    let tsv = fs::read_to_string(&emb).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 1 + 5000);
    assert!(lines.iter().all(|l| l.split('\t').count() == 2 + 3 * 32 + 1));
    let emb2 = dir.path().join("emb2.tsv");
    ok(&["export", "--what", "embeddings", "--data-dir", p(&data), "--checkpoint", p(&ck), "--out", p(&emb2)]);
    assert_eq!(fs::read(&emb).unwrap(), fs::read(&emb2).unwrap());

    let restored = dir.path().join("restored.jsonl");
    ok(&["export", "--what", "restored", "--data-dir", p(&data), "--checkpoint", p(&ck), "--out", p(&restored)]);
    let jsonl = fs::read_to_string(&restored).unwrap();
    let first_line: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert!(first_line["id"].is_string() && first_line["channel"].is_string() && first_line["scores"].is_array());

    let sweep = |out: &Path| {
        ok(&[
            "sweep", "--axis", "missing", "--data-dir", p(&data), "--models", "mlp,jmmfr-mc", "--seeds", "1",
            "--values", "0.1,0.3", "--epochs", "1", "--out", p(out),
        ]);
    };
    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    sweep(&s1);
    sweep(&s2);
    let a = fs::read_to_string(s1.join("sweep.json")).unwrap();
    assert_eq!(a, fs::read_to_string(s2.join("sweep.json")).unwrap());
    let result: SweepResult = serde_json::from_str(&a).unwrap();
    assert_eq!(result.cells.len(), 4);
    assert_eq!(result.rows.len(), 4);
    assert!(fs::read_to_string(s1.join("sweep.txt")).unwrap().contains("jmmfr-mc"));

    let plain = dir.path().join("plain");
    ok(&["train", "--data-dir", p(&data), "--encoder", "mlp", "--epochs", "1", "--out", p(&plain)]);
    let out = jmmfr(&[
        "export", "--what", "restored", "--data-dir", p(&data), "--checkpoint", p(&plain.join("checkpoint.json")),
        "--out", p(&dir.path().join("x.jsonl")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn skills_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--out-dir", p(&data)]);
    let out = dir.path().join("sk");
    ok(&[
        "sweep", "--axis", "skills", "--data-dir", p(&data), "--models", "mlp", "--seeds", "1", "--values", "400,54",
        "--epochs", "1", "--out", p(&out),
    ]);
    let result: SweepResult = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(result.values, vec![400.0, 54.0]);
    let bad = jmmfr(&[
        "sweep", "--axis", "skills", "--data-dir", p(&data), "--models", "mlp", "--seeds", "1", "--values", "54,400",
        "--epochs", "1", "--out", p(&out),
    ]);
    assert!(!bad.status.success());
}
