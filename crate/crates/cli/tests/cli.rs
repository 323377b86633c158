//! End-to-end checks of the command-line surface: exit codes, file
//! round-trips, and byte-level reproducibility of outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adapt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adapt"))
        .args(args)
        .env("ADAPT_RUN_DIR", dir.join("runs"))
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn missing_input_file_exits_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = adapt(
        &["prepare", "--input", "/definitely/not/here.tsv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/definitely/not/here.tsv"), "{err}");
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = adapt(
        &[
            "finetune",
            "--checkpoint",
            "x.ckpt",
            "--manifest",
            "y.manifest",
            "--strategy",
            "sideways",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_then_props_reports_full_density() {
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = tmp.path().join("k23.tsv");
    let out = adapt(
        &[
            "synth", "--users", "2", "--items", "3", "--density", "1.0", "--out",
            graph_path.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = adapt(&["props", "--graph", graph_path.to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("density 1.0"), "{text}");
    assert!(text.contains("node_count 5"), "{text}");
}

#[test]
fn props_corpus_writes_eight_means_and_stds() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    for (k, density) in [(0usize, "0.3"), (1, "0.5")] {
        let path = corpus.join(format!("g{k}.tsv"));
        let out = adapt(
            &[
                "synth", "--users", "10", "--items", "10", "--density", density, "--seed",
                &k.to_string(), "--out", path.to_str().unwrap(),
            ],
            tmp.path(),
        );
        assert!(out.status.success());
    }
    let stats = tmp.path().join("norm.kv");
    let out = adapt(
        &[
            "props", "--corpus", corpus.to_str().unwrap(), "--out",
            stats.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let text = fs::read_to_string(&stats).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("mean.")).count(), 8);
    assert_eq!(text.lines().filter(|l| l.starts_with("std.")).count(), 8);
}

#[test]
fn prepare_is_byte_reproducible_and_honors_keep_frac() {
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = tmp.path().join("graph.tsv");
    assert!(adapt(
        &[
            "synth", "--users", "30", "--items", "30", "--density", "0.2", "--seed", "5",
            "--out", graph_path.to_str().unwrap(),
        ],
        tmp.path(),
    )
    .status
    .success());

    let run = |out_name: &str| -> (String, String) {
        let manifest = tmp.path().join(out_name);
        let out = adapt(
            &[
                "prepare", "--input", graph_path.to_str().unwrap(), "--val-frac", "0.05",
                "--test-frac", "0.05", "--keep-frac", "0.6", "--seed", "9", "--out",
                manifest.to_str().unwrap(),
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read_to_string(&manifest).unwrap(), stdout(&out))
    };
    let (a, summary) = run("a.manifest");
    let (b, _) = run("b.manifest");
    assert_eq!(a, b, "same seed must give identical manifests");
    // 180 edges -> 9/9 hold-out -> 162 train -> ceil(0.6 * 162) = 98 kept.
    assert!(summary.contains("train 98"), "{summary}");
    assert!(summary.contains("val 9"), "{summary}");
    assert!(summary.contains("test 9"), "{summary}");
}

#[test]
fn props_requires_exactly_one_source() {
    let tmp = tempfile::tempdir().unwrap();
    let out = adapt(&["props"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
