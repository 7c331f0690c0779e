use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn magic() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_magic"));
    c.env_remove("MAGIC_SEED");
    c
}

fn bundled(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic").join(file)
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn train(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    let (model, report) = (dir.join(format!("{name}.ckpt")), dir.join(format!("{name}.json")));
    run(magic()
        .arg("train")
        .arg("--data")
        .arg(bundled("data.jsonl"))
        .arg("--embeddings")
        .arg(bundled("embeddings.meb"))
        .arg("--config")
        .arg(bundled("config.txt"))
        .arg("--out")
        .arg(&model)
        .arg("--report")
        .arg(&report));
    (model, report)
}

#[test]
fn metrics_on_a_raw_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, "[[415,3],[5,203]]").unwrap();
    let out = run(magic().arg("metrics").arg("--confusion").arg(&m));
    assert!(stdout(&out).contains("accuracy: 0.9872\n"));
}

#[test]
fn unknown_flag_prints_usage() {
    let out = magic().args(["train", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn failures_are_one_parsable_line() {
    let out = magic().args(["metrics", "--confusion", "/nonexistent/m.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind=io message="), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "learning_rat = 0.1\n").unwrap();
    let out = magic()
        .arg("train")
        .arg("--data")
        .arg(bundled("data.jsonl"))
        .arg("--embeddings")
        .arg(bundled("embeddings.meb"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: kind=config"));
}

#[test]
fn train_evaluate_predict_info() {
    let dir = tempfile::tempdir().unwrap();
    let (model, report) = train(dir.path(), "a");
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["dataset", "split_sizes", "best_n", "history", "confusion", "metrics"] {
        assert!(rep.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(rep["split_sizes"]["test"], 40);

    let eval_report = dir.path().join("eval.json");
    let out = run(magic()
        .arg("evaluate")
        .arg("--data")
        .arg(bundled("data.jsonl"))
        .arg("--embeddings")
        .arg(bundled("embeddings.meb"))
        .arg("--model")
        .arg(&model)
        .arg("--report")
        .arg(&eval_report));
    assert!(stdout(&out).starts_with("accuracy: "));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval_report).unwrap()).unwrap();
    assert_eq!(rep["partition"], "test");
    let total: u64 = rep["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 40);

    let input = dir.path().join("one.jsonl");
    let first = std::fs::read_to_string(bundled("data.jsonl")).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&input, first).unwrap();
    let out = run(magic()
        .arg("predict")
        .arg("--model")
        .arg(&model)
        .arg("--embeddings")
        .arg(bundled("embeddings.meb"))
        .arg("--input")
        .arg(&input));
    let line = stdout(&out);
    let fields: Vec<&str> = line.trim_end().split('\t').collect();
    assert_eq!(fields[0], "sep0000");
    assert!(["real", "fake"].contains(&fields[1]));
    let p: f64 = fields[2..].iter().map(|f| f.split('=').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-3);

    let out = run(magic().arg("info").arg("--model").arg(&model));
    let best_n = rep["best_n"].as_u64().unwrap();
    assert!(stdout(&out).contains(&format!("best_n: {best_n}\n")));
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (m1, r1) = train(dir.path(), "one");
    let (m2, r2) = train(dir.path(), "two");
    assert_eq!(std::fs::read(m1).unwrap(), std::fs::read(m2).unwrap());
    assert_eq!(std::fs::read(r1).unwrap(), std::fs::read(r2).unwrap());
}

#[test]
fn seed_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train(dir.path(), "base");
    let other = dir.path().join("seeded.ckpt");
    run(magic()
        .env("MAGIC_SEED", "99")
        .arg("train")
        .arg("--data")
        .arg(bundled("data.jsonl"))
        .arg("--embeddings")
        .arg(bundled("embeddings.meb"))
        .arg("--config")
        .arg(bundled("config.txt"))
        .arg("--out")
        .arg(&other));
    let info = stdout(&run(magic().arg("info").arg("--model").arg(&other)));
    assert!(info.contains("best_n: "));
    assert_ne!(std::fs::read(model).unwrap(), std::fs::read(&other).unwrap());
    let text = String::from_utf8_lossy(&std::fs::read(&other).unwrap()).to_string();
    assert!(text.contains("seed = 99\n"));
}

#[test]
fn fallback_embedding_covers_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(
        &data,
        "{\"id\":\"a\",\"label\":\"real\",\"text\":\"hello world\",\"comments\":[\"hi\",\"yo\"]}\n\
         {\"id\":\"b\",\"text\":\"no label needed\",\"image\":\"image:b\"}\n",
    )
    .unwrap();
    let meb = dir.path().join("e.meb");
    run(magic().arg("embed-fallback").arg("--data").arg(&data).arg("--out").arg(&meb).args(["--dim", "16", "--seed", "3"]));
    let store = magic_core::io::read_meb(&meb).unwrap();
    for key in ["post:a", "comment:a:0", "comment:a:1", "image:a", "post:b", "image:b"] {
        assert!(store.contains(key), "missing {key}");
    }
    assert!(store.get("image:a").unwrap().iter().all(|&x| x == 0.0));
    assert_eq!(store.dim(), 16);

    let jsonl = dir.path().join("e.jsonl");
    run(magic().arg("embed-fallback").arg("--data").arg(&data).arg("--out").arg(&jsonl).args(["--dim", "16", "--seed", "3", "--jsonl"]));
    assert_eq!(magic_core::io::read_store(&jsonl).unwrap(), store);
}

#[test]
fn synth_writes_a_runnable_set() {
    let dir = tempfile::tempdir().unwrap();
    run(magic().args(["synth", "--kind", "image", "--count", "24", "--dim", "8", "--out"]).arg(dir.path()));
    for f in ["data.jsonl", "embeddings.meb", "config.txt"] {
        assert!(dir.path().join(f).exists());
    }
}
