use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ntf::config::{RunConfig, KEYS};
use tempfile::TempDir;

fn ntf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ntf")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ntf(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--dims",
    "10x8x6",
    "--density",
    "0.3",
    "--L",
    "4",
    "--s",
    "2",
    "--d_s",
    "4",
    "--hidden_layers",
    "1",
    "--batch_size",
    "16",
    "--max_epochs",
    "3",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn synth_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    for out in ["a.ntfx", "b.ntfx"] {
        ok(
            dir.path(),
            &[
                "synth",
                "--seed",
                "7",
                "--dims",
                "50x40x12",
                "--density",
                "0.05",
                "--out",
                out,
            ],
        );
    }
    for ext in ["ntfx", "synth.json", "factors.json"] {
        let a = fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(
        ntf(
            d,
            &[
                "train",
                "--config",
                "missing.cfg",
                "--data",
                "t.ntfx",
                "--out-dir",
                "r"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        ntf(d, &["config", "--no_such_key", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(ntf(d, &["config", "--L", "four"]).status.code(), Some(2));
    assert_eq!(ntf(d, &["frobnicate"]).status.code(), Some(2));
    fs::write(d.join("bad.cfg"), "L = 4\nwidth = 3\n").unwrap();
    let out = ntf(d, &["config", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
    // missing input data is a runtime failure
    assert_eq!(
        ntf(d, &["train", "--data", "nope.ntfx", "--out-dir", "r"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn gradcheck_passes() {
    let dir = TempDir::new().unwrap();
    let out = ok(
        dir.path(),
        &["gradcheck", "--seed", "1", "--L", "4", "--s", "3"],
    );
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(report["passed"], true);
}

/// (key, file value, flag value); the flag value differs from the file value
/// and, where the key has more than two settings, from the default.
const OVERRIDES: &[(&str, &str, &str)] = &[
    ("seed", "3", "4"),
    ("task", "link", "rating"),
    ("dims", "2x3x4", "5x6x7"),
    ("rank", "2", "3"),
    ("density", "0.2", "0.3"),
    ("drift", "0.1", "0.2"),
    ("noise", "0.1", "0.2"),
    ("rating_min", "0", "-1"),
    ("rating_max", "10", "7"),
    ("granularity", "week", "seconds:60"),
    ("split", "window", "ratio"),
    ("train_fraction", "0.6", "0.7"),
    ("validation_fraction", "0.2", "0.15"),
    ("train_window", "0..3", "1..4"),
    ("test_window", "3..4", "4..5"),
    ("L", "8", "16"),
    ("s", "2", "3"),
    ("d_s", "8", "16"),
    ("hidden_layers", "2", "4"),
    ("hidden_width", "10", "20"),
    ("activation", "sigmoid", "tanh"),
    ("projection_activation", "relu", "sigmoid"),
    ("output_activation", "sigmoid", "identity"),
    ("variant", "dot", "mlp"),
    ("encoder", "last_row", "lstm"),
    ("batch_norm", "false", "true"),
    ("bn_momentum", "0.9", "0.5"),
    ("bn_epsilon", "0.01", "0.1"),
    ("lr", "0.01", "0.1"),
    ("beta1", "0.8", "0.7"),
    ("beta2", "0.99", "0.9"),
    ("adam_epsilon", "0.001", "0.01"),
    ("batch_size", "32", "64"),
    ("max_epochs", "20", "30"),
    ("patience", "0", "5"),
    ("negative_ratio", "3", "4"),
    ("test_negative_ratio", "3", "4"),
    ("threshold", "0.3", "0.7"),
    ("probes", "100", "200"),
];

fn effective(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from:\n{text}"))
        .to_owned()
}

#[test]
fn flag_beats_file_beats_default_for_every_key() {
    assert_eq!(OVERRIDES.len(), KEYS.len());
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let defaults = RunConfig::default();
    for (key, file_value, flag_value) in OVERRIDES {
        let cfg = d.join(format!("{key}.cfg"));
        fs::write(&cfg, format!("# override one key\n{key} = {file_value}\n")).unwrap();
        let cfg = cfg.to_str().unwrap();
        let flag = format!("--{key}");

        assert_eq!(
            effective(&ok(d, &["config"]), key),
            defaults.get(key).unwrap(),
            "{key}: default"
        );
        assert_eq!(
            effective(&ok(d, &["config", "--config", cfg]), key),
            *file_value,
            "{key}: file"
        );
        assert_eq!(
            effective(&ok(d, &["config", "--config", cfg, &flag, flag_value]), key),
            *flag_value,
            "{key}: flag over file"
        );
        assert_eq!(
            effective(&ok(d, &[&flag, flag_value, "config", "--config", cfg]), key),
            *flag_value,
            "{key}: flag before subcommand"
        );
    }
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &with_small(&["synth", "--out", "t.ntfx"]));
    ok(
        d,
        &with_small(&[
            "train",
            "--data",
            "t.ntfx",
            "--out-dir",
            "run",
            "--factors",
            "t.factors.json",
        ]),
    );
    for f in [
        "model.ntfm",
        "last.ntfm",
        "history.csv",
        "timing.csv",
        "metrics.json",
        "run.json",
        "config.txt",
    ] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    assert!(run["oracle_error"].as_f64().unwrap().is_finite());

    let metrics = ok(
        d,
        &[
            "eval",
            "--config",
            "run/config.txt",
            "--model",
            "run/model.ntfm",
            "--data",
            "t.ntfx",
        ],
    );
    assert_eq!(
        metrics.trim(),
        fs::read_to_string(d.join("run/metrics.json"))
            .unwrap()
            .trim()
    );

    fs::write(d.join("q.csv"), "i,j,k\n0,0,0\n9,7,5\n").unwrap();
    let preds = ok(
        d,
        &["predict", "--model", "run/model.ntfm", "--input", "q.csv"],
    );
    let lines: Vec<&str> = preds.lines().collect();
    assert_eq!(lines[0], "i,j,k,prediction");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("9,7,5,"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &with_small(&["synth", "--out", "t.ntfx"]));
    ok(
        d,
        &with_small(&[
            "train",
            "--data",
            "t.ntfx",
            "--out-dir",
            "full",
            "--max_epochs",
            "6",
        ]),
    );
    ok(
        d,
        &with_small(&["train", "--data", "t.ntfx", "--out-dir", "part"]),
    );
    ok(
        d,
        &with_small(&[
            "train",
            "--data",
            "t.ntfx",
            "--out-dir",
            "part",
            "--max_epochs",
            "6",
            "--resume",
            "part/last.ntfm",
        ]),
    );
    for f in ["last.ntfm", "history.csv"] {
        assert_eq!(
            fs::read(d.join("full").join(f)).unwrap(),
            fs::read(d.join("part").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn ingest_and_split_write_files() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("r.csv"),
        "user,item,time,value\nann,x,2021-01-05,4\nbob,y,2021-02-11,3\nann,y,2021-03-02,5\n",
    )
    .unwrap();
    ok(d, &["ingest", "--input", "r.csv", "--out", "r.ntfx"]);
    let vocab: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("r.vocab.json")).unwrap()).unwrap();
    assert_eq!(vocab["vocab"]["users"], serde_json::json!(["ann", "bob"]));
    assert_eq!(
        ntf::tensor::read_tensor(d.join("r.ntfx"))
            .unwrap()
            .dims()
            .slots,
        3
    );

    ok(d, &with_small(&["synth", "--out", "t.ntfx"]));
    ok(
        d,
        &with_small(&["split", "--data", "t.ntfx", "--out-dir", "parts"]),
    );
    let total: usize = ["train", "validation", "test"]
        .iter()
        .map(|p| {
            ntf::tensor::read_tensor(d.join(format!("parts/{p}.ntfx")))
                .unwrap()
                .len()
        })
        .sum();
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("parts/split.json")).unwrap()).unwrap();
    let filtered =
        split["filtered_validation"].as_u64().unwrap() + split["filtered_test"].as_u64().unwrap();
    assert_eq!(total as u64 + filtered, 144);
}

#[test]
fn sweep_and_report_counts() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &with_small(&["synth", "--out", "t.ntfx"]));
    ok(
        d,
        &with_small(&[
            "sweep",
            "--param",
            "L",
            "--values",
            "8,16,32",
            "--data",
            "t.ntfx",
            "--out-dir",
            "sw",
        ]),
    );
    let sweep = fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    assert!(sweep.lines().nth(1).unwrap().starts_with("L=8,mlp,0,L,8,"));

    ok(
        d,
        &[
            "report",
            "--inputs",
            "sw/L=8",
            "sw/L=16",
            "sw/L=32",
            "--out-dir",
            "rep",
        ],
    );
    let summary = fs::read_to_string(d.join("rep/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let values: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(values, ["8", "16", "32"]);

    ok(
        d,
        &[
            "report",
            "--inputs",
            "sw/L=8",
            "sw/L=16",
            "--out-dir",
            "two",
        ],
    );
    let histories = fs::read_to_string(d.join("two/histories.csv")).unwrap();
    // 3 epochs each, two rows per epoch
    assert_eq!(histories.lines().count(), 1 + 2 * 3);
    assert_eq!(
        fs::read_to_string(d.join("two/runs.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    assert_eq!(
        ntf(
            d,
            &with_small(&[
                "sweep",
                "--param",
                "width",
                "--values",
                "1,2",
                "--data",
                "t.ntfx",
                "--out-dir",
                "bad"
            ])
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn report_rejects_mismatched_columns() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &with_small(&["synth", "--out", "t.ntfx"]));
    ok(
        d,
        &with_small(&["train", "--data", "t.ntfx", "--out-dir", "a"]),
    );
    fs::create_dir(d.join("b")).unwrap();
    for f in ["run.json", "metrics.json"] {
        fs::copy(d.join("a").join(f), d.join("b").join(f)).unwrap();
    }
    fs::write(d.join("b/history.csv"), "epoch,loss\n0,1.5\n").unwrap();
    let out = ntf(d, &["report", "--inputs", "a", "b", "--out-dir", "rep"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}
