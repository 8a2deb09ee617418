use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataprep::{resize_bilinear, Image};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Random view generation: horizontal flip, square crop-and-resize keeping
/// at least `min_crop_area` of the image, additive Gaussian noise, clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip_prob: f64,
    pub min_crop_area: f64,
    pub noise_sigma: f64,
    /// Views per image.
    pub count: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flip_prob: 0.5,
            min_crop_area: 0.8,
            noise_sigma: 0.02,
            count: 2,
        }
    }
}

impl AugmentSpec {
    /// Views equal to the input.
    pub fn identity(count: usize) -> Self {
        AugmentSpec {
            flip_prob: 0.0,
            min_crop_area: 1.0,
            noise_sigma: 0.0,
            count,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob == 0.0 && self.min_crop_area >= 1.0 && self.noise_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("augmentation count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob)
            || !(self.min_crop_area > 0.0 && self.min_crop_area <= 1.0)
            || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
        {
            return Err(Error::Config(format!("invalid augmentation spec {self:?}")));
        }
        Ok(())
    }
}

/// `spec.count` augmented views of `image`, reproducible from `seed`.
pub fn augment<T: Scalar>(image: &Image<T>, spec: &AugmentSpec, seed: u64) -> Result<Vec<Image<T>>> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(vec![image.clone(); spec.count]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (image.height(), image.width());
    (0..spec.count)
        .map(|_| {
            let mut view = image.clone();
            if spec.min_crop_area < 1.0 {
                let area = rng.random_range(spec.min_crop_area..=1.0);
                let side = area.sqrt();
                let ch = ((h as f64 * side).round() as usize).clamp(1, h);
                let cw = ((w as f64 * side).round() as usize).clamp(1, w);
                let r0 = rng.random_range(0..=h - ch);
                let c0 = rng.random_range(0..=w - cw);
                view = resize_bilinear(&view.crop(r0, c0, ch, cw)?, h, w)?;
            }
            let flip = rng.random_bool(spec.flip_prob);
            let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("valid sigma"));
            let mut px = view.into_pixels();
            if flip {
                px.chunks_mut(w).for_each(<[T]>::reverse);
            }
            if let Some(nd) = noise {
                for p in &mut px {
                    *p = T::lit((p.as_f64() + nd.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            Image::new(h, w, px)
        })
        .collect()
}
