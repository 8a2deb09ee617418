use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataprep::{GroupId, Image, Label, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const BODY_PARTS: [&str; 7] = ["elbow", "finger", "forearm", "hand", "humerus", "shoulder", "wrist"];
const TEMPLATE_SEED: u64 = 0x5a1ad;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub anomaly_fraction: f64,
    pub images_per_group: usize,
    /// Number of body-part templates in use (at most 7).
    pub body_parts: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Range of the defect's added intensity.
    pub defect_intensity: (f64, f64),
    /// Prefix for pseudo-patient ids, keeping separately generated sets
    /// group-disjoint.
    pub patient_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 512,
            size: 32,
            anomaly_fraction: 0.05,
            images_per_group: 4,
            body_parts: 4,
            noise: 0.03,
            defect_intensity: (0.4, 0.6),
            patient_prefix: "p".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::Config("synthetic images need at least 4x4 pixels".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return Err(Error::Config("anomaly fraction must lie in [0, 1]".into()));
        }
        if self.images_per_group == 0 || self.body_parts == 0 || self.body_parts > BODY_PARTS.len() {
            return Err(Error::Config(format!(
                "need at least one image per group and 1..={} body parts",
                BODY_PARTS.len()
            )));
        }
        if self.noise < 0.0 || self.defect_intensity.0 > self.defect_intensity.1 {
            return Err(Error::Config("invalid noise or defect intensity range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    row: f64,
    col: f64,
    sigma: f64,
    amplitude: f64,
}

/// Three blobs per body part, fixed across seeds so independently
/// generated sets share one generative family.
fn template(part: usize) -> [Blob; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED + part as u64);
    std::array::from_fn(|_| Blob {
        row: rng.random_range(0.25..0.75),
        col: rng.random_range(0.25..0.75),
        sigma: rng.random_range(0.10..0.20),
        amplitude: rng.random_range(0.45..0.8),
    })
}

fn render_normal(rng: &mut ChaCha8Rng, part: usize, size: usize, noise: f64) -> Vec<f64> {
    let n = size as f64;
    let jitter = Normal::new(0.0, 0.04).expect("valid normal");
    let blobs: Vec<Blob> = template(part)
        .iter()
        .map(|b| Blob {
            row: (b.row + jitter.sample(rng)) * n,
            col: (b.col + jitter.sample(rng)) * n,
            sigma: b.sigma * rng.random_range(0.85..1.15) * n,
            amplitude: b.amplitude * rng.random_range(0.8..1.2),
        })
        .collect();
    let mut px = vec![0.0; size * size];
    for (i, p) in px.iter_mut().enumerate() {
        let (r, c) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        *p = blobs
            .iter()
            .map(|b| b.amplitude * (-((r - b.row).powi(2) + (c - b.col).powi(2)) / (2.0 * b.sigma * b.sigma)).exp())
            .sum();
    }
    if noise > 0.0 {
        let nd = Normal::new(0.0, noise).expect("valid normal");
        for p in &mut px {
            *p += nd.sample(rng);
        }
    }
    px
}

/// Adds a thin bright bar or ring at a random pose.
fn add_defect(rng: &mut ChaCha8Rng, px: &mut [f64], size: usize, intensity: (f64, f64)) {
    let n = size as f64;
    let gain = if intensity.0 < intensity.1 {
        rng.random_range(intensity.0..intensity.1)
    } else {
        intensity.0
    };
    let (cr, cc) = (rng.random_range(0.25..0.75) * n, rng.random_range(0.25..0.75) * n);
    let width = 0.9;
    let bar = rng.random_bool(0.5);
    let (theta, half_len, radius) = (
        rng.random_range(0.0..std::f64::consts::PI),
        rng.random_range(0.15..0.3) * n,
        rng.random_range(0.1..0.22) * n,
    );
    for (i, p) in px.iter_mut().enumerate() {
        let (r, c) = ((i / size) as f64 + 0.5 - cr, (i % size) as f64 + 0.5 - cc);
        let dist = if bar {
            let along = r * theta.sin() + c * theta.cos();
            let across = -r * theta.cos() + c * theta.sin();
            if along.abs() > half_len {
                f64::INFINITY
            } else {
                across.abs()
            }
        } else {
            ((r * r + c * c).sqrt() - radius).abs()
        };
        *p += gain * (-(dist * dist) / (2.0 * width * width)).exp();
    }
}

/// Grouped synthetic dataset: each pseudo-patient contributes
/// `images_per_group` images of one body part; a random
/// `anomaly_fraction` of all images carry a defect.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<Vec<Sample<T>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_anom = (cfg.anomaly_fraction * cfg.count as f64).round() as usize;
    let mut anomalous = vec![false; cfg.count];
    anomalous[..n_anom].iter_mut().for_each(|a| *a = true);
    anomalous.shuffle(&mut rng);
    let mut out = Vec::with_capacity(cfg.count);
    let mut part = 0;
    for (i, &bad) in anomalous.iter().enumerate() {
        let g = i / cfg.images_per_group;
        if i % cfg.images_per_group == 0 {
            part = rng.random_range(0..cfg.body_parts);
        }
        let mut px = render_normal(&mut rng, part, cfg.size, cfg.noise);
        if bad {
            add_defect(&mut rng, &mut px, cfg.size, cfg.defect_intensity);
        }
        let image = Image::new(
            cfg.size,
            cfg.size,
            px.into_iter().map(|p| T::lit(p.clamp(0.0, 1.0))).collect(),
        )?;
        out.push(Sample {
            image,
            label: if bad { Label::Anomalous } else { Label::Normal },
            group: Some(GroupId::new(format!("{}{g:05}", cfg.patient_prefix), BODY_PARTS[part])),
        });
    }
    Ok(out)
}

/// Group-disjoint train/validation/test sets drawn from one family.
#[derive(Clone, Debug)]
pub struct SynthBenchmark<T> {
    pub train: Vec<Sample<T>>,
    pub validation: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
}

/// Train: `train` images at `base.anomaly_fraction`; validation and test:
/// `held_out` images each, half anomalous.
pub fn synth_benchmark<T: Scalar>(
    base: &SynthConfig,
    train: usize,
    held_out: usize,
    seed: u64,
) -> Result<SynthBenchmark<T>> {
    let part = |count, fraction, prefix: &str, offset| {
        let cfg = SynthConfig {
            count,
            anomaly_fraction: fraction,
            patient_prefix: format!("{}{prefix}", base.patient_prefix),
            ..base.clone()
        };
        synth_generate(&cfg, seed.wrapping_mul(3).wrapping_add(offset))
    };
    Ok(SynthBenchmark {
        train: part(train, base.anomaly_fraction, "tr", 0)?,
        validation: part(held_out, 0.5, "va", 1)?,
        test: part(held_out, 0.5, "te", 2)?,
    })
}
