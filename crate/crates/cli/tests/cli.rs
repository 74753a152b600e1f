use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fcdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcdd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fcdd(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fcdd(args).status.code().unwrap()
}

const TINY: &str = r#"{
  "backbone": {
    "name": "tiny",
    "input_size": [32, 32],
    "layers": [
      {"kind": "conv2d", "out_channels": 4, "kernel": 3, "padding": 1},
      {"kind": "leaky_relu"},
      {"kind": "max_pool2d", "kernel": 2, "stride": 2},
      {"kind": "conv2d", "out_channels": 8, "kernel": 3, "padding": 1},
      {"kind": "leaky_relu"},
      {"kind": "max_pool2d", "kernel": 2, "stride": 2},
      {"kind": "conv2d", "out_channels": 1, "kernel": 1}
    ],
    "out_channels": 1
  },
  "input_size": [32, 32],
  "batch_size": 8,
  "epochs": 2,
  "seed": 5
}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth → train → evaluate → heatmap → score into `dir`.
fn pipeline(dir: &Path, config: &Path) {
    let corpus = dir.join("corpus");
    let run = dir.join("run");
    ok(&[
        "synth",
        "-o",
        s(&corpus),
        "--n-normal",
        "16",
        "--n-anomalous",
        "8",
        "--size",
        "32",
        "--seed",
        "3",
    ]);
    ok(&[
        "train",
        "--config",
        s(config),
        "--manifest",
        s(&corpus.join("manifest.csv")),
        "-o",
        s(&run),
        "--deterministic",
    ]);
    let report = ok(&["evaluate", "--run", s(&run), "--deterministic"]);
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["seed"], 5);
    assert_eq!(json["selection"], "best_cal_auc");
    ok(&[
        "heatmap",
        "--run",
        s(&run),
        "--report",
        s(&run.join("report.json")),
        "--deterministic",
    ]);
    ok(&["score", "--run", s(&run), "--split", "test", "--deterministic"]);
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn deterministic_runs_produce_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.json");
    std::fs::write(&config, TINY).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, &config);
    pipeline(&b, &config);
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    for expected in [
        "run/config.resolved.json",
        "run/manifest.csv",
        "run/report.json",
        "run/scores.csv",
        "run/heatmaps/histogram.csv",
    ] {
        assert!(fa.contains(&PathBuf::from(expected)), "missing {expected}");
    }
    assert!(fa.iter().any(|p| p.to_string_lossy().ends_with("_overlay.png")));
    for f in &fa {
        // Wall-clock times and the echoed output path are the only expected differences.
        if f.ends_with("history.csv") || f.ends_with("config.resolved.json") {
            continue;
        }
        assert!(
            std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
            "{} differs",
            f.display()
        );
    }
    let resolved = |dir: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("run/config.resolved.json")).unwrap()).unwrap();
        v["paths"] = serde_json::Value::Null;
        v
    };
    assert_eq!(resolved(&a), resolved(&b));
    assert_eq!(resolved(&a)["epochs"], 2);
    assert_eq!(resolved(&a)["deterministic"], true);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    ok(&[
        "synth",
        "-o",
        s(&corpus),
        "--n-normal",
        "10",
        "--n-anomalous",
        "5",
        "--size",
        "32",
    ]);
    let manifest = corpus.join("manifest.csv");
    let config = tmp.path().join("tiny.json");
    std::fs::write(&config, TINY).unwrap();

    assert_eq!(code(&["bogus"]), 2);
    assert_eq!(code(&["train", "--set", "epochz=3", "--manifest", s(&manifest)]), 2);
    assert_eq!(
        code(&[
            "train",
            "--preset",
            "desk",
            "--batch-size",
            "0",
            "--manifest",
            s(&manifest)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--preset",
            "desk",
            "--manifest",
            s(&tmp.path().join("missing.csv"))
        ]),
        3
    );
    std::fs::write(tmp.path().join("broken.csv"), "image_id,path\nx,y\n").unwrap();
    assert_eq!(
        code(&[
            "train",
            "--preset",
            "desk",
            "--manifest",
            s(&tmp.path().join("broken.csv"))
        ]),
        3
    );
    let run = tmp.path().join("nan");
    let args = [
        "train",
        "--config",
        s(&config),
        "--lr",
        "1e300",
        "--manifest",
        s(&manifest),
        "-o",
        s(&run),
    ];
    assert_eq!(code(&args), 4);
    assert_eq!(
        code(&[
            "evaluate",
            "--config",
            s(&config),
            "--checkpoint",
            s(&tmp.path().join("none.ckpt")),
            "--manifest",
            s(&manifest)
        ]),
        3
    );
}

#[test]
fn scan_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    ok(&[
        "synth",
        "-o",
        s(&corpus),
        "--classes",
        "fire,flood",
        "--n-normal",
        "4",
        "--n-anomalous",
        "2",
        "--size",
        "16",
    ]);
    let out = tmp.path().join("scanned.csv");
    let msg = ok(&[
        "scan",
        "--root",
        s(&corpus.join("data")),
        "-o",
        s(&out),
        "--split-seed",
        "1",
    ]);
    assert!(msg.starts_with("12 images (4 anomalous)"), "{msg}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("fire/anomalous/"));
    assert!(text.contains(",train,") || text.contains(",test,"));
}
