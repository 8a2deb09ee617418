use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::dataprep::{BinaryMask, GroupId, Image, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One manifest line: `path,label,patient_id,body_part`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: Label,
    pub patient_id: String,
    pub body_part: String,
}

impl ManifestRow {
    pub fn group(&self) -> GroupId {
        GroupId::new(self.patient_id.clone(), self.body_part.clone())
    }
}

/// Reads an 8-bit grayscale PGM or PNG into `[0, 1]` pixels. Color inputs
/// are converted to luma.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let gray = image::open(path)?.into_luma8();
    let (w, h) = gray.dimensions();
    let px = gray
        .into_raw()
        .into_iter()
        .map(|v| T::lit(f64::from(v) / 255.0))
        .collect();
    Image::new(h as usize, w as usize, px)
}

fn quantize<T: Scalar>(p: T) -> u8 {
    (p.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_gray(path: &Path, gray: &GrayImage) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    let (w, h) = gray.dimensions();
    match format {
        ImageFormat::Pnm => {
            let out = BufWriter::new(File::create(path)?);
            PnmEncoder::new(out)
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(gray.as_raw(), w, h, ExtendedColorType::L8)?;
        }
        ImageFormat::Png => gray.save_with_format(path, ImageFormat::Png)?,
        other => return Err(Error::Format(format!("unsupported image format {other:?}"))),
    }
    Ok(())
}

/// Writes an image as 8-bit grayscale; the extension picks PGM or PNG.
pub fn save_image<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    let raw = img.pixels().iter().map(|&p| quantize(p)).collect();
    let gray = GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::Format("image buffer size mismatch".into()))?;
    write_gray(path, &gray)
}

/// Writes a mask as 0/255 grayscale.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let gray = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::Format("mask buffer size mismatch".into()))?;
    write_gray(path, &gray)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        wtr.write_record(["path", "label", "patient_id", "body_part"])?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
