use super::{BorderPolicy, Image};
use crate::error::{Error, Result};

/// Bilinear sample of one channel. Pixel centers sit on integer coordinates.
#[inline]
pub fn sample_channel(img: &Image, c: usize, x: f32, y: f32, policy: BorderPolicy) -> f32 {
    sample_plane(img.plane(c), img.width(), img.height(), x, y, policy)
}

#[inline]
pub(crate) fn sample_plane(
    plane: &[f32],
    w: usize,
    h: usize,
    x: f32,
    y: f32,
    policy: BorderPolicy,
) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);

    // Fast path: all four taps inside.
    if xi >= 0 && yi >= 0 && xi + 1 < w as isize && yi + 1 < h as isize {
        let i = yi as usize * w + xi as usize;
        let (a, b) = (plane[i], plane[i + 1]);
        let (c, d) = (plane[i + w], plane[i + w + 1]);
        let top = (1.0 - fx) * a + fx * b;
        let bottom = (1.0 - fx) * c + fx * d;
        return (1.0 - fy) * top + fy * bottom;
    }

    let at = |px: isize, py: isize| match (policy.resolve(px, w), policy.resolve(py, h)) {
        (Some(px), Some(py)) => plane[py * w + px],
        _ => 0.0,
    };
    let top = (1.0 - fx) * at(xi, yi) + fx * at(xi + 1, yi);
    let bottom = (1.0 - fx) * at(xi, yi + 1) + fx * at(xi + 1, yi + 1);
    (1.0 - fy) * top + fy * bottom
}

/// Bilinear sample of every channel at a subpixel position.
pub fn sample_bilinear(img: &Image, x: f32, y: f32, policy: BorderPolicy) -> Result<Vec<f32>> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite sample coordinate ({x}, {y})"
        )));
    }
    Ok((0..img.channels())
        .map(|c| sample_channel(img, c, x, y, policy))
        .collect())
}

/// Resamples a plane to a new size with pixel-center alignment and
/// replicate borders.
pub(crate) fn resize_plane(src: &[f32], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f32> {
    let sx = w as f32 / nw as f32;
    let sy = h as f32 / nh as f32;
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..nw {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            out.push(sample_plane(src, w, h, fx, fy, BorderPolicy::Replicate));
        }
    }
    out
}

/// Bilinear resize of every channel.
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("resize to zero size".into()));
    }
    let mut data = Vec::with_capacity(width * height * img.channels());
    for c in 0..img.channels() {
        data.extend(resize_plane(
            img.plane(c),
            img.width(),
            img.height(),
            width,
            height,
        ));
    }
    Ok(Image::from_vec_unchecked(width, height, img.channels(), data))
}
