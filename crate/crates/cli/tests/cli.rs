use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chatgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chatgnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    let out = chatgnn(&[
        "synthetic",
        "--kind",
        "two-class",
        "--seed",
        "2",
        "--out",
        s(&path),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    s(&path).to_string()
}

const TRAIN_FLAGS: &[&str] = &[
    "--layers",
    "2",
    "--hidden",
    "16",
    "--split",
    "0",
    "--seed",
    "1",
    "--max-epochs",
    "120",
    "--warmup",
    "20",
    "--patience",
    "40",
];

#[test]
fn train_is_reproducible_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny(dir.path());
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let mut args = vec!["train", "--dataset", &data];
        args.extend_from_slice(TRAIN_FLAGS);
        args.extend_from_slice(&["--out", s(&out_dir)]);
        let out = chatgnn(&args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = fs::read(dir.path().join("a/metrics_split0.csv")).unwrap();
    let b = fs::read(dir.path().join("b/metrics_split0.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# chatgnn train --dataset"));
    assert!(text.contains("--seed 1"));
    assert!(text.contains("epoch,train_loss,val_acc,test_metric\n"));
    let summary = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert!(summary.contains(" ± "));

    let ckpt = dir.path().join("a/checkpoint_split0.json");
    let out = chatgnn(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        &data,
        "--part",
        "val",
    ]);
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("val accuracy split 0: "), "{line}");

    let out = chatgnn(&[
        "attention",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        &data,
        "--layers",
        "2",
    ]);
    assert!(out.status.success());
    let dump = String::from_utf8(out.stdout).unwrap();
    assert!(dump.lines().any(|l| l.starts_with("node ")));
}

#[test]
fn dirichlet_writes_one_row_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    let out = chatgnn(&[
        "dirichlet",
        "--model",
        "gcn",
        "--rows",
        "10",
        "--cols",
        "10",
        "--depth",
        "1000",
        "--seed",
        "7",
        "--out",
        s(&path),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "layer,energy");
    assert_eq!(rows.len() - 1, 1001);
    let energy = |i: usize| -> f64 { rows[i + 1].split(',').nth(1).unwrap().parse().unwrap() };
    assert!(energy(1000) < energy(1));
}

#[test]
fn gradcheck_passes() {
    let out = chatgnn(&["gradcheck", "--instances", "2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(!String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}

#[test]
fn exit_codes() {
    assert_eq!(chatgnn(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(chatgnn(&[]).status.code(), Some(2));
    assert_eq!(
        chatgnn(&["dirichlet", "--depth", "20000"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let data = tiny(dir.path());
    assert_eq!(
        chatgnn(&["train", "--dataset", &data, "--lr=-1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        chatgnn(&["train", "--dataset", &data, "--split", "9"])
            .status
            .code(),
        Some(2)
    );

    let missing = dir.path().join("missing.json");
    let out = chatgnn(&["train", "--dataset", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n \"name\": 3\n}").unwrap();
    let out = chatgnn(&["train", "--dataset", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
