use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use salad::dataprep::{read_manifest, split_grouped, GroupId, Image, Label, Sample, SplitConfig};
use salad::eval::{roc_auc, LabeledScores};
use tempfile::TempDir;

const TINY: &str = r#"
encoder_hidden = [16]
latent_dim = 4
batch_size = 8
pretrain_epochs = 2
rounds = 2
epochs_per_round = 2
k_max = 6
k_score = 5
learning_rate = 1e-3
"#;

fn salad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salad"))
        .current_dir(dir)
        .env_remove("SALAD_OUTPUT_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = salad(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    salad(dir, args).status.code().unwrap()
}

/// Small benchmark plus the tiny config, in a fresh directory.
fn workspace() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &[
            "synth",
            "--out",
            "d",
            "--count",
            "48",
            "--size",
            "8",
            "--benchmark",
            "--held-out",
            "24",
            "--seed",
            "5",
        ],
    );
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    tmp
}

fn train(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--train",
        "d/train/manifest.csv",
        "--config",
        "tiny.toml",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), read(&p)));
            }
        }
    }
    out.sort();
    out
}

fn loss_columns(path: &Path) -> Vec<Vec<f64>> {
    let text = String::from_utf8(read(path)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,mse,ss,agg,total,k"));
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn synth_zero_count_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "z", "--count", "0"]);
    assert_eq!(
        read(tmp.path().join("z/manifest.csv")),
        b"path,label,patient_id,body_part\n"
    );
}

#[test]
fn synth_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(
            tmp.path(),
            &["synth", "--out", out, "--count", "20", "--size", "8", "--seed", "3"],
        );
    }
    let a = tree(&tmp.path().join("a"));
    assert_eq!(a.len(), 21);
    assert_eq!(a, tree(&tmp.path().join("b")));
}

#[test]
fn split_matches_library_on_hundred_group_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("path,label,patient_id,body_part\n");
    let mut samples = Vec::new();
    for g in 0..100 {
        let part = if g % 2 == 0 { "hand" } else { "elbow" };
        for m in 0..4 {
            let label = match g {
                0..80 => Label::Normal,
                80..90 => Label::Anomalous,
                _ if m == 0 => Label::Anomalous,
                _ => Label::Normal,
            };
            csv.push_str(&format!("img/{g}_{m}.png,{label},p{g:03},{part}\n"));
            samples.push(Sample {
                image: Image::<f64>::zeros(1, 1).unwrap(),
                label,
                group: Some(GroupId::new(format!("p{g:03}"), part)),
            });
        }
    }
    fs::write(tmp.path().join("m.csv"), csv).unwrap();
    let args = ["split", "--manifest", "m.csv", "--out", "s", "--seed", "7"];
    ok(tmp.path(), &args);
    let expected = split_grouped(&samples, &SplitConfig::default(), 7).unwrap();
    let sets = [
        ("train", &expected.train_samples),
        ("validation", &expected.validation_samples),
        ("test", &expected.test_samples),
    ];
    for (name, idx) in sets {
        let rows = read_manifest(&tmp.path().join(format!("s/{name}.csv"))).unwrap();
        assert_eq!(rows.len(), idx.len(), "{name}");
        for (row, &i) in rows.iter().zip(idx.iter()) {
            assert_eq!(row.label, samples[i].label);
            assert_eq!(Some(row.group()), samples[i].group);
        }
    }
    let first = tree(&tmp.path().join("s"));
    ok(tmp.path(), &args);
    assert_eq!(first, tree(&tmp.path().join("s")));
}

#[test]
fn segment_writes_masks_and_resized_images() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "d", "--count", "4", "--size", "16"]);
    let out = ok(
        tmp.path(),
        &[
            "segment",
            "--manifest",
            "d/manifest.csv",
            "--out",
            "seg",
            "--size",
            "12",
        ],
    );
    assert!(out.starts_with("segment: 4 images"));
    let rows = read_manifest(&tmp.path().join("seg/manifest.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let img: Image<f64> = salad::dataprep::load_image(&tmp.path().join("seg").join(&rows[0].path)).unwrap();
    assert_eq!((img.height(), img.width()), (12, 12));
    let mask: Image<f64> = salad::dataprep::load_image(&tmp.path().join("seg/masks/00000.pgm")).unwrap();
    assert_eq!((mask.height(), mask.width()), (16, 16));
    assert!(mask.pixels().iter().all(|&p| p == 0.0 || p == 1.0));
}

#[test]
fn training_is_byte_deterministic() {
    let ws = workspace();
    let dir = ws.path();
    train(dir, "a", &["--seed", "4"]);
    train(dir, "b", &["--seed", "4"]);
    let a = tree(&dir.join("a"));
    assert!(a.iter().any(|(p, _)| p == Path::new("checkpoints/round-002.ckpt")));
    assert_eq!(a, tree(&dir.join("b")));
    for run in ["a", "b"] {
        ok(
            dir,
            &[
                "score",
                "--checkpoint",
                &format!("{run}/model.ckpt"),
                "--manifest",
                "d/test/manifest.csv",
                "--out",
                &format!("{run}.csv"),
            ],
        );
    }
    assert_eq!(read(dir.join("a.csv")), read(dir.join("b.csv")));
    train(dir, "c", &["--seed", "5"]);
    assert_ne!(read(dir.join("a/losses.csv")), read(dir.join("c/losses.csv")));
}

#[test]
fn dae_ablation_equals_manual_lambda_zero() {
    let ws = workspace();
    let dir = ws.path();
    train(dir, "dae", &["--ablate", "dae", "--seed", "2"]);
    train(
        dir,
        "manual",
        &[
            "--seed",
            "2",
            "--lambda",
            "0",
            "--set",
            "aug_flip_prob=0",
            "--set",
            "aug_min_crop_area=1",
            "--set",
            "aug_noise_sigma=0",
        ],
    );
    assert_eq!(tree(&dir.join("dae")), tree(&dir.join("manual")));
}

#[test]
fn memdae_latent_columns_are_zero() {
    let ws = workspace();
    let dir = ws.path();
    train(dir, "m", &["--ablate", "memdae"]);
    let rows = loss_columns(&dir.join("m/losses.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[2] == 0.0 && r[3] == 0.0 && r[1] > 0.0));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let ws = workspace();
    let dir = ws.path();
    train(dir, "full", &["--seed", "1"]);
    train(dir, "cut", &["--seed", "1"]);
    // Simulate a crash in the last round: its checkpoint and the final
    // artifacts are missing and the log holds a partial epoch.
    let cut = dir.join("cut");
    for f in ["checkpoints/round-002.ckpt", "model.ckpt", "bank.bin", "rounds.csv"] {
        fs::remove_file(cut.join(f)).unwrap();
    }
    let mut log = read(cut.join("losses.csv"));
    log.extend_from_slice(b"99,1,1,1,1,1\n");
    fs::write(cut.join("losses.csv"), log).unwrap();
    train(dir, "cut", &["--seed", "1", "--resume"]);
    assert_eq!(tree(&dir.join("full")), tree(&cut));

    // Resuming under a different configuration is refused.
    let out = salad(
        dir,
        &[
            "train",
            "--train",
            "d/train/manifest.csv",
            "--config",
            "tiny.toml",
            "--out",
            "cut",
            "--seed",
            "9",
            "--resume",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_auc_matches_score_file() {
    let ws = workspace();
    let dir = ws.path();
    train(dir, "r", &[]);
    ok(
        dir,
        &[
            "score",
            "--checkpoint",
            "r/model.ckpt",
            "--manifest",
            "d/test/manifest.csv",
            "--out",
            "s.csv",
        ],
    );
    ok(dir, &["eval", "--scores", "s.csv", "--out", "e"]);

    let mut rdr = csv::Reader::from_path(dir.join("s.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["sample_id", "raw", "normalized", "label"]);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for r in rdr.records() {
        let r = r.unwrap();
        let raw: f64 = r[1].parse().unwrap();
        let norm: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&raw) && (0.0..=1.0).contains(&norm));
        scores.push(raw);
        labels.push(&r[3] == "anomalous");
    }
    assert_eq!(scores.len(), 24);
    let auc = roc_auc(&LabeledScores::new(scores, labels).unwrap());
    let metrics = String::from_utf8(read(dir.join("e/metrics.csv"))).unwrap();
    let reported: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("auc,"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(reported, auc);
    let roc = String::from_utf8(read(dir.join("e/roc.csv"))).unwrap();
    assert!(roc.starts_with("fpr,tpr\n0,0\n") && roc.ends_with("1,1\n"));
    assert!(read(dir.join("e/pr.csv")).starts_with(b"recall,precision\n"));
}

#[test]
fn report_summarizes_replicates() {
    let ws = workspace();
    let dir = ws.path();
    train(dir, "one", &["--seed", "0"]);
    ok(
        dir,
        &[
            "report",
            "--runs",
            "one",
            "--manifest",
            "d/test/manifest.csv",
            "--out",
            "rep1",
        ],
    );
    let summary = String::from_utf8(read(dir.join("rep1/summary.csv"))).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[0], row[2], row[4]), ("1", "0", "0"));

    train(dir, "four", &["--replicates", "4", "--seed", "10", "--parallel"]);
    ok(
        dir,
        &[
            "report",
            "--runs",
            "four",
            "--manifest",
            "d/test/manifest.csv",
            "--out",
            "rep4",
        ],
    );
    for i in 0..4 {
        assert!(dir.join(format!("rep4/scores-{i}.csv")).is_file());
    }
    assert!(!dir.join("rep4/scores-4.csv").exists());
    let summary = String::from_utf8(read(dir.join("rep4/summary.csv"))).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("4,"));

    // Parallel replicates match sequential ones.
    train(dir, "seq", &["--replicates", "4", "--seed", "10"]);
    assert_eq!(tree(&dir.join("four")), tree(&dir.join("seq")));
}

#[test]
fn output_root_applies_to_relative_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_salad"))
        .current_dir(tmp.path())
        .env("SALAD_OUTPUT_ROOT", &root)
        .args(["synth", "--out", "d", "--count", "4", "--size", "8"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("d/manifest.csv").is_file());
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn exit_codes() {
    let ws = workspace();
    let dir = ws.path();
    assert_eq!(code(dir, &["frobnicate"]), 1);
    assert_eq!(
        code(
            dir,
            &[
                "train",
                "--train",
                "d/train/manifest.csv",
                "--out",
                "x",
                "--set",
                "bogus=1"
            ]
        ),
        1
    );
    assert_eq!(
        code(
            dir,
            &[
                "train",
                "--train",
                "d/train/manifest.csv",
                "--out",
                "x",
                "--temperature",
                "0"
            ]
        ),
        1
    );
    assert_eq!(
        code(
            dir,
            &[
                "train",
                "--train",
                "d/train/manifest.csv",
                "--out",
                "x",
                "--replicates",
                "0"
            ]
        ),
        1
    );
    assert_eq!(code(dir, &["train", "--train", "missing.csv", "--out", "x"]), 2);
    assert_eq!(
        code(
            dir,
            &[
                "score",
                "--checkpoint",
                "none.ckpt",
                "--manifest",
                "d/test/manifest.csv",
                "--out",
                "s.csv"
            ]
        ),
        2
    );
    let args = [
        "train",
        "--train",
        "d/train/manifest.csv",
        "--config",
        "tiny.toml",
        "--out",
        "nan",
        "--lr",
        "1e300",
    ];
    assert_eq!(code(dir, &args), 3);
}

#[test]
fn eval_rejects_single_class_scores() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("s.csv"),
        "sample_id,raw,normalized,label\na,0.1,0,normal\nb,0.2,1,normal\n",
    )
    .unwrap();
    assert_eq!(code(tmp.path(), &["eval", "--scores", "s.csv", "--out", "e"]), 2);
}
