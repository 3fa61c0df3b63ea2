//! Black-box tests of the `textspot` binary: exit codes, determinism,
//! and the matching-mode comparison.

use std::path::Path;
use std::process::{Command, Output};

fn textspot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textspot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.toml");
    write(
        &path,
        r#"
train_scenes = 12
test_scenes = 4
seeds = [1]

[world]
grid_size = 3
words_per_scene = [1, 2]
word_len = [1, 3]
alphabet = "abcd"
feature_noise = 0.01
num_queries = 4
feature_dim = 14
max_word_len = 4
shift_seed = 9
shift_bias = 0.3

[pretrain]
learning_rate = 0.01
epochs = 2

[finetune]
learning_rate = 0.005
epochs = 2
"#,
    );
    path.display().to_string()
}

#[test]
fn gen_writes_four_files_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out1 = dir.path().join("d1");
    let out2 = dir.path().join("d2");
    for out in [&out1, &out2] {
        let r = textspot(&[
            "--config",
            &config,
            "gen",
            "--out",
            &out.display().to_string(),
            "--seed",
            "7",
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let names = ["a_full.jsonl", "a_weak.jsonl", "b_full.jsonl", "b_weak.jsonl"];
    for name in names {
        let f1 = std::fs::read(out1.join(name)).unwrap();
        let f2 = std::fs::read(out2.join(name)).unwrap();
        assert!(!f1.is_empty());
        assert_eq!(f1, f2, "{name} differs between identical runs");
    }
}

#[test]
fn gen_rejects_invalid_noise_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    write(
        &config_path,
        "[world]\nfeature_noise = -0.5\n",
    );
    let r = textspot(&[
        "--config",
        &config_path.display().to_string(),
        "gen",
        "--out",
        &dir.path().join("x").display().to_string(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("feature_noise"), "{msg}");
}

#[test]
fn unknown_experiment_name_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let r = textspot(&[
        "experiment",
        "--name",
        "nonsense",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

/// The recognition-aware criteria and the detection-only criteria pick
/// different predictions on a fixture where the better box carries the
/// worse transcription.
#[test]
fn match_command_shows_criteria_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let gt = dir.path().join("gt.jsonl");
    write(
        &gt,
        r#"{"scene_id":"s0","gt":[{"cls":"text","box":[0.5,0.5,0.2,0.2],"text":"ab"}],"supervision":"full"}"#,
    );
    let preds = dir.path().join("preds.jsonl");
    write(
        &preds,
        concat!(
            r#"{"scene_id":"s0","preds":[{"score_text":0.7,"box":[0.52,0.5,0.2,0.2],"text":"dc"},"#,
            r#"{"score_text":0.7,"box":[0.58,0.54,0.24,0.2],"text":"ab"}]}"#,
            "\n"
        ),
    );
    let full = textspot(&[
        "--config", &config,
        "match",
        "--preds", &preds.display().to_string(),
        "--gt", &gt.display().to_string(),
        "--mode", "full",
    ]);
    assert!(full.status.success(), "{}", String::from_utf8_lossy(&full.stderr));
    let full_out = String::from_utf8_lossy(&full.stdout).to_string();
    assert!(full_out.contains("-> pred1"), "{full_out}");

    let detcls = textspot(&[
        "--config", &config,
        "match",
        "--preds", &preds.display().to_string(),
        "--gt", &gt.display().to_string(),
        "--mode", "detcls",
    ]);
    let detcls_out = String::from_utf8_lossy(&detcls.stdout).to_string();
    assert!(detcls_out.contains("-> pred0"), "{detcls_out}");
}

#[test]
fn match_with_empty_ground_truth_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let gt = dir.path().join("gt.jsonl");
    write(&gt, r#"{"scene_id":"s0","gt":[]}"#);
    let preds = dir.path().join("preds.jsonl");
    write(
        &preds,
        r#"{"scene_id":"s0","preds":[{"score_text":0.7,"box":[0.5,0.5,0.2,0.2],"text":"a"}]}"#,
    );
    let r = textspot(&[
        "--config", &config,
        "match",
        "--preds", &preds.display().to_string(),
        "--gt", &gt.display().to_string(),
    ]);
    assert!(r.status.success());
}

#[test]
fn match_with_more_gts_than_predictions_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let gt = dir.path().join("gt.jsonl");
    write(
        &gt,
        concat!(
            r#"{"scene_id":"s0","gt":[{"cls":"text","box":[0.2,0.2,0.1,0.1],"text":"a"},"#,
            r#"{"cls":"text","box":[0.7,0.7,0.1,0.1],"text":"b"}]}"#
        ),
    );
    let preds = dir.path().join("preds.jsonl");
    write(
        &preds,
        r#"{"scene_id":"s0","preds":[{"score_text":0.7,"box":[0.5,0.5,0.2,0.2],"text":"a"}]}"#,
    );
    let r = textspot(&[
        "--config", &config,
        "match",
        "--preds", &preds.display().to_string(),
        "--gt", &gt.display().to_string(),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn eval_on_ground_truth_as_predictions_prints_perfect_f() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let gt = dir.path().join("gt.jsonl");
    write(
        &gt,
        r#"{"scene_id":"s0","gt":[{"cls":"text","box":[0.5,0.5,0.2,0.2],"text":"abc"}]}"#,
    );
    let preds = dir.path().join("preds.jsonl");
    write(
        &preds,
        r#"{"scene_id":"s0","preds":[{"score_text":1.0,"box":[0.5,0.5,0.2,0.2],"text":"abc"}]}"#,
    );
    let r = textspot(&[
        "--config", &config,
        "eval",
        "--preds", &preds.display().to_string(),
        "--gt", &gt.display().to_string(),
    ]);
    assert!(r.status.success());
    let out = String::from_utf8_lossy(&r.stdout);
    assert!(out.contains("f_measure 1.000"), "{out}");
}

#[test]
fn train_then_weak_train_preserves_detection_head() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let data_dir = dir.path().join("data");
    let r = textspot(&[
        "--config", &config,
        "gen",
        "--out", &data_dir.display().to_string(),
        "--seed", "3",
        "--count", "10",
    ]);
    assert!(r.status.success());

    let ckpt = dir.path().join("model.jsonl");
    let r = textspot(&[
        "--config", &config,
        "train",
        "--data", &data_dir.join("a_full.jsonl").display().to_string(),
        "--mode", "full",
        "--epochs", "2",
        "--out", &ckpt.display().to_string(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let ckpt_weak = dir.path().join("model_weak.jsonl");
    let r = textspot(&[
        "--config", &config,
        "train",
        "--data", &data_dir.join("b_weak.jsonl").display().to_string(),
        "--mode", "weak",
        "--epochs", "3",
        "--init", &ckpt.display().to_string(),
        "--out", &ckpt_weak.display().to_string(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    // detection parameters are bitwise identical between the checkpoints
    let before = std::fs::read_to_string(&ckpt).unwrap();
    let after = std::fs::read_to_string(&ckpt_weak).unwrap();
    let det_lines = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| l.contains("\"det."))
            .map(|l| l.to_string())
            .collect()
    };
    let det_before = det_lines(&before);
    let det_after = det_lines(&after);
    assert!(!det_before.is_empty());
    assert_eq!(det_before, det_after);
    // but the encoder moved
    let enc = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| l.contains("encoder."))
            .map(|l| l.to_string())
            .collect()
    };
    assert_ne!(enc(&before), enc(&after));
}

#[test]
fn report_renders_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    write(
        &report,
        r#"{"experiment":"weak_vs_synthetic","arms":[
            {"arm":"synthetic_only","seed":1,"precision":0.1,"recall":0.1,"f_measure":0.1,"epochs":5,"wall_secs":1.5}
        ]}"#,
    );
    let r = textspot(&["report", "--file", &report.display().to_string()]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("synthetic_only"));
    let r = textspot(&["report", "--file", &report.display().to_string(), "--csv"]);
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("experiment,arm,seed"));
}

#[test]
fn missing_file_is_a_runtime_error_exit_1() {
    let r = textspot(&["report", "--file", "/nonexistent/report.json"]);
    assert_eq!(r.status.code(), Some(1));
}
