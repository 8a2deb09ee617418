use crate::dataprep::Image;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Placement of resized content inside the padded square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadLayout {
    pub content_height: usize,
    pub content_width: usize,
    pub top: usize,
    pub left: usize,
}

impl PadLayout {
    /// Major axis becomes `target`, minor axis keeps the aspect ratio
    /// (rounded, at least one pixel), centered with the odd pixel of padding
    /// on the bottom/right.
    pub fn for_shape(height: usize, width: usize, target: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("degenerate image {height}x{width}")));
        }
        if target == 0 {
            return Err(Error::Config("resize target must be at least 1".into()));
        }
        let major = height.max(width);
        let scaled = |n: usize| ((n * target) as f64 / major as f64).round().max(1.0) as usize;
        let (ch, cw) = if height >= width {
            (target, scaled(width))
        } else {
            (scaled(height), target)
        };
        Ok(PadLayout {
            content_height: ch,
            content_width: cw,
            top: (target - ch) / 2,
            left: (target - cw) / 2,
        })
    }
}

/// Bilinear resampling with pixel centers aligned (half-pixel convention)
/// and edge clamping.
pub fn resize_bilinear<T: Scalar>(image: &Image<T>, height: usize, width: usize) -> Result<Image<T>> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!("resize target {height}x{width} is degenerate")));
    }
    let (sh, sw) = (image.height(), image.width());
    let axis = |dst: usize, src: usize, n: usize| -> (usize, usize, f64) {
        let pos = ((n as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut px = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fr) = axis(height, sh, r);
        for c in 0..width {
            let (c0, c1, fc) = axis(width, sw, c);
            let top = image.get(r0, c0).as_f64() * (1.0 - fc) + image.get(r0, c1).as_f64() * fc;
            let bot = image.get(r1, c0).as_f64() * (1.0 - fc) + image.get(r1, c1).as_f64() * fc;
            px.push(T::lit((top * (1.0 - fr) + bot * fr).clamp(0.0, 1.0)));
        }
    }
    Image::new(height, width, px)
}

/// Aspect-preserving resize to a `target`-sided square with zero padding.
pub fn resize_pad<T: Scalar>(image: &Image<T>, target: usize) -> Result<Image<T>> {
    let layout = PadLayout::for_shape(image.height(), image.width(), target)?;
    let content = resize_bilinear(image, layout.content_height, layout.content_width)?;
    let mut px = vec![T::zero(); target * target];
    for r in 0..layout.content_height {
        let dst = (r + layout.top) * target + layout.left;
        px[dst..dst + layout.content_width]
            .copy_from_slice(&content.pixels()[r * layout.content_width..(r + 1) * layout.content_width]);
    }
    Image::new(target, target, px)
}
