use std::path::Path;

use image::{DynamicImage, ImageReader};

use super::Image;
use crate::error::{Error, Result};

/// Reads a PNG or binary PPM/PGM file into a `[0, 1]` float image.
///
/// 8-bit samples are divided by 255 and 16-bit samples by 65535. Only gray
/// and RGB sources are accepted.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "zero-sized image".into(),
        });
    }

    let (channels, interleaved): (usize, Vec<f32>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, scale8(buf.as_raw())),
        DynamicImage::ImageRgb8(buf) => (3, scale8(buf.as_raw())),
        DynamicImage::ImageLuma16(buf) => (1, scale16(buf.as_raw())),
        DynamicImage::ImageRgb16(buf) => (3, scale16(buf.as_raw())),
        other => {
            return Err(Error::Unsupported(format!(
                "{}: color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };

    let n = width * height;
    let mut planar = vec![0.0f32; n * channels];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * n + i] = v;
        }
    }
    Image::from_vec(width, height, channels, planar)
}

fn scale8(raw: &[u8]) -> Vec<f32> {
    raw.iter().map(|&v| v as f32 / 255.0).collect()
}

fn scale16(raw: &[u16]) -> Vec<f32> {
    raw.iter().map(|&v| v as f32 / 65535.0).collect()
}

/// Quantizes one intensity: clamp to `[0, 1]`, then round half up on the
/// 0..255 grid.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit gray or RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, channels) = (img.width(), img.height(), img.channels());
    let n = w * h;
    let mut interleaved = vec![0u8; n * channels];
    for c in 0..channels {
        for (i, &v) in img.plane(c).iter().enumerate() {
            interleaved[i * channels + c] = to_u8(v);
        }
    }
    let color = if channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &interleaved,
        w as u32,
        h as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}
