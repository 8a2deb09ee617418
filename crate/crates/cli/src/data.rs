use std::fs;
use std::path::{Path, PathBuf};

use salad::dataprep::{
    hysteresis_segment_with, load_image, read_manifest, resize_pad, save_image, save_mask, split_grouped,
    synth_benchmark, synth_generate, Connectivity, HysteresisConfig, Label, ManifestRow, SplitConfig, SynthConfig,
};
use salad::{Image, Sample};

use crate::args::{ConnectivityArg, SegmentArgs, SplitArgs, SynthArgs};
use crate::error::{CliError, Result};

/// Joins a relative output path onto the output root, if one is set.
pub fn out_path(root: &Option<PathBuf>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

/// A manifest with its rows' image paths resolved against the manifest's
/// own directory.
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::Data(format!("manifest {} not found", path.display())));
        }
        let rows = read_manifest(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let files = rows.iter().map(|r| base.join(&r.path)).collect();
        Ok(Manifest { rows, files })
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.rows
            .iter()
            .zip(&self.files)
            .map(|(r, f)| {
                Ok(Sample {
                    image: load_image(f)?,
                    label: r.label,
                    group: Some(r.group()),
                })
            })
            .collect()
    }
}

fn write_set(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:05}.pgm");
        save_image(&dir.join(&rel), &s.image)?;
        let (patient_id, body_part) = s.group.clone().map(|g| (g.patient, g.body_part)).unwrap_or_default();
        rows.push(ManifestRow {
            path: rel,
            label: s.label,
            patient_id,
            body_part,
        });
    }
    salad::dataprep::write_manifest(&dir.join("manifest.csv"), &rows)?;
    Ok(())
}

fn summary(name: &str, samples: &[Sample]) -> String {
    let anomalous = samples.iter().filter(|s| s.label.is_anomalous()).count();
    format!(
        "{name}: {} images ({} normal, {anomalous} anomalous)",
        samples.len(),
        samples.len() - anomalous
    )
}

pub fn synth(a: &SynthArgs, root: &Option<PathBuf>) -> Result<()> {
    let out = out_path(root, &a.out);
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        count: a.count,
        size: a.size,
        anomaly_fraction: a.anomaly_fraction.unwrap_or(d.anomaly_fraction),
        images_per_group: a.images_per_group.unwrap_or(d.images_per_group),
        body_parts: a.body_parts.unwrap_or(d.body_parts),
        noise: a.noise.unwrap_or(d.noise),
        ..d
    };
    if a.benchmark {
        let b = synth_benchmark::<f64>(&cfg, a.count, a.held_out, a.seed)?;
        let sets = [("train", &b.train), ("validation", &b.validation), ("test", &b.test)];
        let mut lines = Vec::new();
        for (name, s) in sets {
            write_set(&out.join(name), s)?;
            lines.push(summary(name, s));
        }
        println!("{}", lines.join("; "));
    } else {
        let samples = synth_generate::<f64>(&cfg, a.seed)?;
        write_set(&out, &samples)?;
        println!("{}", summary("synth", &samples));
    }
    Ok(())
}

pub fn segment(a: &SegmentArgs, root: &Option<PathBuf>) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let out = out_path(root, &a.out);
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let cfg = HysteresisConfig {
        lo: a.lo,
        hi: a.hi,
        connectivity: match a.connectivity {
            ConnectivityArg::Four => Connectivity::Four,
            ConnectivityArg::Eight => Connectivity::Eight,
        },
        largest_only: !a.all_components,
    };
    let mut rows = Vec::with_capacity(m.rows.len());
    let mut covered = 0usize;
    for (i, (row, file)) in m.rows.iter().zip(&m.files).enumerate() {
        let img: Image = load_image(file)?;
        let mask = hysteresis_segment_with(&img, &cfg)?;
        covered += mask.count();
        let mut seg = img.masked(&mask)?;
        if a.size > 0 {
            seg = resize_pad(&seg, a.size)?;
        }
        let rel = format!("images/{i:05}.pgm");
        save_image(&out.join(&rel), &seg)?;
        save_mask(&out.join(format!("masks/{i:05}.pgm")), &mask)?;
        rows.push(ManifestRow {
            path: rel,
            ..row.clone()
        });
    }
    salad::dataprep::write_manifest(&out.join("manifest.csv"), &rows)?;
    println!("segment: {} images, {covered} foreground pixels", rows.len());
    Ok(())
}

pub fn split(a: &SplitArgs, root: &Option<PathBuf>) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let out = out_path(root, &a.out);
    fs::create_dir_all(&out)?;
    // Only labels and groups matter for the split, so images are not read.
    let blank = Image::zeros(1, 1)?;
    let samples: Vec<Sample> = m
        .rows
        .iter()
        .map(|r| Sample {
            image: blank.clone(),
            label: r.label,
            group: Some(r.group()),
        })
        .collect();
    let cfg = SplitConfig {
        train_groups: a.train_groups,
        train_anomalous: a.train_anomalous,
        tolerance: a.tolerance,
    };
    let s = split_grouped(&samples, &cfg, a.seed)?;
    let sets = [
        ("train", &s.train_samples, s.train.len()),
        ("validation", &s.validation_samples, s.validation.len()),
        ("test", &s.test_samples, s.test.len()),
    ];
    let mut lines = Vec::new();
    for (name, idx, groups) in sets {
        let rows: Vec<ManifestRow> = idx
            .iter()
            .map(|&i| {
                let path = std::path::absolute(&m.files[i])?;
                Ok(ManifestRow {
                    path: path.to_string_lossy().into_owned(),
                    ..m.rows[i].clone()
                })
            })
            .collect::<Result<_>>()?;
        salad::dataprep::write_manifest(&out.join(format!("{name}.csv")), &rows)?;
        let anomalous = rows.iter().filter(|r| r.label == Label::Anomalous).count();
        lines.push(format!(
            "{name}: {groups} groups, {} images, {anomalous} anomalous",
            rows.len()
        ));
    }
    println!("{}", lines.join("; "));
    Ok(())
}
