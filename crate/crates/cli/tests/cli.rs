use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cmaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmaf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path, channels: &str) -> PathBuf {
    let data = dir.join(format!("data{channels}"));
    let out = cmaf(&[
        "synth", "--out", s(&data), "--tracks", "10", "--segments", "5", "--channels", channels, "--music-dim", "12",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.join("manifest.csv")
}

fn train_small(manifest: &Path, run: &Path) {
    let out = cmaf(&[
        "train", "--manifest", s(manifest), "--out", s(run), "--dimension", "valence", "--max-epochs", "2",
        "--learning-rate", "1e-3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmaf(&["train", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.manifest"));

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nlearnin_rate = 0.1\n").unwrap();
    let out = cmaf(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));

    let out = cmaf(&["synth", "--out", s(dir.path()), "--tracks", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cmaf(&["train", "--bogus"]).status.code(), Some(2));
    let out = cmaf(&["train", "--manifest", s(&dir.path().join("nope.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path(), "3");
    let first: Vec<Vec<u8>> = ["manifest.csv", "eeg/s01_t04.eegx", "music/track07.memb"]
        .iter()
        .map(|f| fs::read(a.parent().unwrap().join(f)).unwrap())
        .collect();
    small_dataset(dir.path(), "3");
    for (f, bytes) in ["manifest.csv", "eeg/s01_t04.eegx", "music/track07.memb"].iter().zip(first) {
        assert_eq!(fs::read(a.parent().unwrap().join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn reports_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), "3");
    let run = dir.path().join("run");
    train_small(&manifest, &run);
    for cmd in ["eval", "temporal", "export", "retrieve"] {
        let out = cmaf(&[cmd, "--manifest", s(&manifest), "--out", s(&run), "--dimension", "valence"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let reports = run.join("reports");
    let metrics = fs::read_to_string(reports.join("metrics_valence_full.tsv")).unwrap();
    for col in ["Acc_agg_eeg", "P@10", "mAP"] {
        assert!(metrics.contains(col));
    }
    let curve = fs::read_to_string(reports.join("temporal_valence_full/track01.tsv")).unwrap();
    // Comment line, header, one row per segment.
    assert_eq!(curve.lines().count(), 2 + 5);
    let export = fs::read_to_string(reports.join("embeddings_valence_full.tsv")).unwrap();
    let mut lines = export.lines();
    assert_eq!(lines.next().unwrap().split('\t').count(), 70);
    assert_eq!(lines.count(), 2 * 10 * 5);
    let ckpts = fs::read_dir(run.join("checkpoints/valence/full")).unwrap().count();
    assert_eq!(ckpts, 5);
}

#[test]
fn checkpoint_data_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m3 = small_dataset(dir.path(), "3");
    let m4 = small_dataset(dir.path(), "4");
    let run = dir.path().join("run");
    train_small(&m3, &run);
    let out = cmaf(&["eval", "--manifest", s(&m4), "--out", s(&run), "--dimension", "valence"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels"));
}

#[test]
fn ablation_flags_select_checkpoint_sets() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), "3");
    let run = dir.path().join("run");
    let out = cmaf(&[
        "train", "--manifest", s(&manifest), "--out", s(&run), "--dimension", "arousal", "--no-grl", "--max-epochs", "1",
    ]);
    assert!(out.status.success());
    assert!(run.join("checkpoints/arousal/no_ell_dd").is_dir());
    let log = fs::read_to_string(run.join("logs/train_arousal_no_ell_dd.tsv")).unwrap();
    let row: Vec<&str> = log.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[5], "0.000000");
    assert_eq!(row[8], "na");
    let out = cmaf(&["eval", "--manifest", s(&manifest), "--out", s(&run), "--dimension", "arousal", "--no-music"]);
    assert_eq!(out.status.code(), Some(1));
}
