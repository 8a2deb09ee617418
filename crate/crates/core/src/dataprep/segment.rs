use std::collections::VecDeque;

use crate::dataprep::{BinaryMask, Image};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HysteresisConfig {
    pub lo: f64,
    pub hi: f64,
    pub connectivity: Connectivity,
    pub largest_only: bool,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        HysteresisConfig {
            lo: 0.1,
            hi: 0.3,
            connectivity: Connectivity::Eight,
            largest_only: true,
        }
    }
}

/// Hysteresis thresholding with 8-connectivity, keeping only the largest
/// resulting component.
pub fn hysteresis_segment<T: Scalar>(image: &Image<T>, lo: f64, hi: f64) -> Result<BinaryMask> {
    hysteresis_segment_with(
        image,
        &HysteresisConfig {
            lo,
            hi,
            ..HysteresisConfig::default()
        },
    )
}

/// Pixels `>= hi` seed the mask; it grows through connected pixels `>= lo`.
/// With `largest_only`, only the biggest component survives (ties keep the
/// one reached first in raster order).
pub fn hysteresis_segment_with<T: Scalar>(image: &Image<T>, cfg: &HysteresisConfig) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&cfg.lo) || !(0.0..=1.0).contains(&cfg.hi) || cfg.lo >= cfg.hi {
        return Err(Error::Config(format!(
            "hysteresis needs 0 <= lo < hi <= 1, got lo={} hi={}",
            cfg.lo, cfg.hi
        )));
    }
    let (h, w) = (image.height(), image.width());
    let lo = T::lit(cfg.lo);
    let hi = T::lit(cfg.hi);
    let candidate: Vec<bool> = image.pixels().iter().map(|&p| p >= lo).collect();
    let mut label = vec![usize::MAX; h * w];
    let mut best: Option<(usize, usize)> = None;
    let mut kept = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !candidate[start] || label[start] != usize::MAX {
            continue;
        }
        let id = start;
        label[start] = id;
        queue.push_back(start);
        let mut size = 0;
        let mut seeded = false;
        while let Some(i) = queue.pop_front() {
            size += 1;
            seeded |= image.pixels()[i] >= hi;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in cfg.connectivity.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if candidate[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        if seeded {
            kept.push(id);
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((id, size));
            }
        }
    }
    let bits = label
        .iter()
        .map(|&l| {
            l != usize::MAX
                && if cfg.largest_only {
                    best.is_some_and(|(id, _)| id == l)
                } else {
                    kept.contains(&l)
                }
        })
        .collect();
    BinaryMask::new(h, w, bits)
}
