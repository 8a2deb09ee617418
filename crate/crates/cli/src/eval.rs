use std::fs;
use std::path::{Path, PathBuf};

use salad::checkpoint::load_checkpoint;
use salad::dataprep::Label;
use salad::eval::{auprc, mean_ci95, pr_points, roc_auc, roc_points, LabeledScores};
use salad::scorer::score_dataset;
use salad::Trainer;
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, ReportArgs, ScoreArgs, ScoreColumn};
use crate::data::{out_path, Manifest};
use crate::error::{CliError, Result};
use crate::train::FINAL_CHECKPOINT;

/// One line of a score file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: String,
    pub raw: f64,
    pub normalized: f64,
    pub label: Label,
}

fn score_rows(checkpoint: &Path, manifest: &Manifest, k: Option<usize>) -> Result<Vec<ScoreRow>> {
    if !checkpoint.is_file() {
        return Err(CliError::Data(format!("checkpoint {} not found", checkpoint.display())));
    }
    let t: Trainer = load_checkpoint(checkpoint)?;
    let samples = manifest.load_samples()?;
    let images: Vec<&[f64]> = samples.iter().map(|s| s.image.pixels()).collect();
    let k = k.unwrap_or(t.config().k_score);
    let scores = score_dataset(&images, t.params(), t.bank(), k)?;
    Ok(manifest
        .rows
        .iter()
        .zip(scores)
        .map(|(r, s)| ScoreRow {
            sample_id: r.path.clone(),
            raw: s.raw,
            normalized: s.normalized,
            label: r.label,
        })
        .collect())
}

fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    if !path.is_file() {
        return Err(CliError::Data(format!("score file {} not found", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Labeled scores from rows with a known label.
fn labeled(rows: &[ScoreRow], column: ScoreColumn) -> Result<LabeledScores> {
    let known: Vec<&ScoreRow> = rows.iter().filter(|r| r.label != Label::Unknown).collect();
    let scores = known
        .iter()
        .map(|r| match column {
            ScoreColumn::Raw => r.raw,
            ScoreColumn::Normalized => r.normalized,
        })
        .collect();
    Ok(LabeledScores::new(
        scores,
        known.iter().map(|r| r.label.is_anomalous()).collect(),
    )?)
}

struct Metrics {
    auc: f64,
    auprc: f64,
}

fn write_points(path: &Path, header: &str, pts: &[(f64, f64)]) -> Result<()> {
    let mut s = format!("{header}\n");
    for (x, y) in pts {
        s.push_str(&format!("{x},{y}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes metrics.csv, roc.csv and pr.csv into `dir`.
fn evaluate_into(ls: &LabeledScores, dir: &Path) -> Result<Metrics> {
    fs::create_dir_all(dir)?;
    let m = Metrics {
        auc: roc_auc(ls),
        auprc: auprc(ls),
    };
    fs::write(
        dir.join("metrics.csv"),
        format!(
            "metric,value\nauc,{}\nauprc,{}\nsamples,{}\npositives,{}\n",
            m.auc,
            m.auprc,
            ls.len(),
            ls.positives()
        ),
    )?;
    write_points(&dir.join("roc.csv"), "fpr,tpr", &roc_points(ls))?;
    write_points(&dir.join("pr.csv"), "recall,precision", &pr_points(ls))?;
    Ok(m)
}

pub fn score(a: &ScoreArgs, root: &Option<PathBuf>) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let rows = score_rows(&a.checkpoint, &m, a.k)?;
    let out = out_path(root, &a.out);
    write_scores(&out, &rows)?;
    println!("score: {} samples -> {}", rows.len(), out.display());
    Ok(())
}

pub fn evaluate(a: &EvalArgs, root: &Option<PathBuf>) -> Result<()> {
    let ls = labeled(&read_scores(&a.scores)?, a.column)?;
    let m = evaluate_into(&ls, &out_path(root, &a.out))?;
    println!("eval: auc {:.4}, auprc {:.4} over {} samples", m.auc, m.auprc, ls.len());
    Ok(())
}

/// Run directories under `runs`: `rep0`, `rep1`, ... if present, else
/// `runs` itself.
fn replicate_dirs(runs: &Path) -> Vec<PathBuf> {
    let reps: Vec<PathBuf> = (0..)
        .map(|i| runs.join(format!("rep{i}")))
        .take_while(|d| d.is_dir())
        .collect();
    if reps.is_empty() {
        vec![runs.to_path_buf()]
    } else {
        reps
    }
}

pub fn report(a: &ReportArgs, root: &Option<PathBuf>) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let out = out_path(root, &a.out);
    fs::create_dir_all(&out)?;
    let mut per_run = String::from("replicate,auc,auprc\n");
    let (mut aucs, mut aps) = (Vec::new(), Vec::new());
    for (i, dir) in replicate_dirs(&a.runs).iter().enumerate() {
        let rows = score_rows(&dir.join(FINAL_CHECKPOINT), &manifest, a.k)?;
        write_scores(&out.join(format!("scores-{i}.csv")), &rows)?;
        let m = evaluate_into(&labeled(&rows, a.column)?, &out.join(format!("eval-{i}")))?;
        per_run.push_str(&format!("{i},{},{}\n", m.auc, m.auprc));
        aucs.push(m.auc);
        aps.push(m.auprc);
    }
    fs::write(out.join("replicates.csv"), per_run)?;
    let (auc, auc_ci) = mean_ci95(&aucs)?;
    let (ap, ap_ci) = mean_ci95(&aps)?;
    fs::write(
        out.join("summary.csv"),
        format!(
            "replicates,auc_mean,auc_ci95,auprc_mean,auprc_ci95\n{},{auc},{auc_ci},{ap},{ap_ci}\n",
            aucs.len()
        ),
    )?;
    println!(
        "report: {} replicates, auc {auc:.4} ± {auc_ci:.4}, auprc {ap:.4} ± {ap_ci:.4}",
        aucs.len()
    );
    Ok(())
}
