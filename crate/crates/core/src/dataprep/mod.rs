//! Input pipeline: images, segmentation, resizing, grouped splits,
//! synthetic data and on-disk formats.

mod io;
mod resize;
mod segment;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use io::{load_image, read_manifest, save_image, save_mask, write_manifest, ManifestRow};
pub use resize::{resize_bilinear, resize_pad, PadLayout};
pub use segment::{hysteresis_segment, hysteresis_segment_with, Connectivity, HysteresisConfig};
pub use split::{split_grouped, GroupCategory, GroupedSplit, SplitConfig};
pub use synth::{synth_benchmark, synth_generate, SynthBenchmark, SynthConfig};

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("degenerate image {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(
                "Image::new",
                format!("{} pixels for {height}x{width}", pixels.len()),
            ));
        }
        if let Some(p) = pixels.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(Error::Data(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Image { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![T::zero(); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.pixels[r * self.width + c]
    }

    /// Copy of the `h×w` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || r0 + h > self.height || c0 + w > self.width {
            return Err(Error::Data(format!(
                "crop {h}x{w} at ({r0},{c0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let pixels = (r0..r0 + h)
            .flat_map(|r| {
                self.pixels[r * self.width + c0..r * self.width + c0 + w]
                    .iter()
                    .copied()
            })
            .collect();
        Ok(Image {
            height: h,
            width: w,
            pixels,
        })
    }

    /// Zeroes every pixel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::shape(
                "Image::masked",
                format!(
                    "mask {}x{} vs image {}x{}",
                    mask.height(),
                    mask.width(),
                    self.height,
                    self.width
                ),
            ));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(mask.bits())
            .map(|(&p, &m)| if m { p } else { T::zero() })
            .collect();
        Ok(Image { pixels, ..*self })
    }
}

/// Same-shape boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(
                "BinaryMask::new",
                format!("{} bits for {height}x{width}", bits.len()),
            ));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
    Unknown,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" | "0" => Ok(Label::Normal),
            "anomalous" | "abnormal" | "1" => Ok(Label::Anomalous),
            "unknown" | "" => Ok(Label::Unknown),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

/// Split unit: all images of one body part of one patient.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupId {
    pub patient: String,
    pub body_part: String,
}

impl GroupId {
    pub fn new(patient: impl Into<String>, body_part: impl Into<String>) -> Self {
        GroupId {
            patient: patient.into(),
            body_part: body_part.into(),
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.patient, self.body_part)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: Image<T>,
    pub label: Label,
    pub group: Option<GroupId>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_validation() {
        assert!(Image::<f64>::new(2, 2, vec![0.0, 0.5, 1.0, 0.2]).is_ok());
        assert!(Image::<f64>::new(2, 2, vec![0.0, 0.5, 1.1, 0.2]).is_err());
        assert!(Image::<f64>::new(2, 2, vec![0.0, f64::NAN, 1.0, 0.2]).is_err());
        assert!(Image::<f64>::new(0, 2, vec![]).is_err());
        assert!(Image::<f64>::new(2, 2, vec![0.0]).is_err());
    }

    #[test]
    fn crop_and_mask() {
        let img = Image::<f64>::new(3, 3, (0..9).map(|i| i as f64 / 10.0).collect()).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[0.4, 0.5, 0.7, 0.8]);
        assert!(img.crop(2, 2, 2, 2).is_err());
        let m = BinaryMask::new(3, 3, (0..9).map(|i| i % 2 == 0).collect()).unwrap();
        assert_eq!(img.masked(&m).unwrap().pixels()[1], 0.0);
        assert_eq!(img.masked(&m).unwrap().pixels()[2], 0.2);
    }

    #[test]
    fn label_round_trip() {
        for l in [Label::Normal, Label::Anomalous, Label::Unknown] {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
        assert!("sick".parse::<Label>().is_err());
    }
}
