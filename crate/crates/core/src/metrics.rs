//! Image quality metrics on the 0–255 scale.
//!
//! PSNR and SSIM compare luma (single-channel inputs are used as is);
//! interpolation error averages over every sample of every channel.

use crate::error::{Error, Result};
use crate::image::Image;

const PEAK: f64 = 255.0;

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn luma_255(img: &Image) -> Result<Vec<f64>> {
    let g = if img.channels() == 1 {
        img.clone()
    } else {
        img.to_grayscale()?
    };
    Ok(g.data().iter().map(|&v| v as f64 * PEAK).collect())
}

/// Peak signal-to-noise ratio in dB. Identical images give
/// `f64::INFINITY`.
pub fn psnr(i: &Image, j: &Image) -> Result<f64> {
    i.check_same_shape(j)?;
    let (a, b) = (luma_255(i)?, luma_255(j)?);
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Normalized Gaussian weights of a `side × side` window, row-major.
fn gaussian_window(side: usize, sigma: f64) -> Vec<f64> {
    let r = (side / 2) as f64;
    let mut w: Vec<f64> = (0..side * side)
        .map(|k| {
            let (dx, dy) = ((k % side) as f64 - r, (k / side) as f64 - r);
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Window side used for a `width × height` image: 11, or the largest odd
/// size that fits when the image is smaller.
pub fn ssim_window_side(width: usize, height: usize) -> Result<usize> {
    let fit = width.min(height);
    if fit < 3 {
        return Err(Error::InvalidParameter(format!(
            "image {width}x{height} is too small for SSIM (needs at least 3x3)"
        )));
    }
    Ok(SSIM_WINDOW.min(if fit % 2 == 1 { fit } else { fit - 1 }))
}

/// Mean structural similarity over all window positions that fit inside
/// the image.
pub fn ssim(i: &Image, j: &Image) -> Result<f64> {
    i.check_same_shape(j)?;
    let (w, h) = i.dims();
    let side = ssim_window_side(w, h)?;
    let win = gaussian_window(side, SSIM_SIGMA);
    let (a, b) = (luma_255(i)?, luma_255(j)?);
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - side {
        for x0 in 0..=w - side {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..side {
                let row = (y0 + wy) * w + x0;
                let wrow = &win[wy * side..(wy + 1) * side];
                for (wx, &g) in wrow.iter().enumerate() {
                    let (p, q) = (a[row + wx], b[row + wx]);
                    ma += g * p;
                    mb += g * q;
                    saa += g * p * p;
                    sbb += g * q * q;
                    sab += g * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean absolute difference over all samples.
pub fn interpolation_error(i: &Image, j: &Image) -> Result<f64> {
    i.check_same_shape(j)?;
    let sum: f64 = i
        .data()
        .iter()
        .zip(j.data())
        .map(|(&x, &y)| (x as f64 * PEAK - y as f64 * PEAK).abs())
        .sum();
    Ok(sum / i.data().len() as f64)
}
