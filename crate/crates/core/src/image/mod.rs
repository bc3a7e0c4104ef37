//! Planar float images and the low-level raster operations everything else
//! is built on: file I/O, separable filtering, pyramids and bilinear
//! sampling.

pub(crate) mod filter;
mod io;
mod pyramid;
pub(crate) mod sample;

pub use filter::{box_filter, convolve_separable, gaussian_blur, gaussian_kernel};
pub use io::{load_image, save_image, to_u8};
pub use pyramid::{build_pyramid, pyramid_level_dims, Pyramid, MIN_LEVEL_SIZE};
pub use sample::{resize_bilinear, sample_bilinear, sample_channel};

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// How out-of-range pixel coordinates are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderPolicy {
    /// Clamp to the nearest edge pixel.
    #[default]
    Replicate,
    /// Mirror around the edge pixel without repeating it (`-1 -> 1`).
    Reflect,
    /// Out-of-range pixels read as zero.
    Zero,
}

impl BorderPolicy {
    /// Maps a possibly out-of-range index into `0..len`, or `None` when the
    /// policy says the sample is zero.
    #[inline]
    pub fn resolve(self, i: isize, len: usize) -> Option<usize> {
        let n = len as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            BorderPolicy::Replicate => Some(i.clamp(0, n - 1) as usize),
            BorderPolicy::Zero => None,
            BorderPolicy::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n - 1);
                let mut j = i.rem_euclid(period);
                if j >= n {
                    j = period - j;
                }
                Some(j as usize)
            }
        }
    }
}

/// Planar multi-channel raster of `f32` intensities.
///
/// Sample `(x, y)` of channel `c` lives at `data[c * w * h + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// All-zero image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        check_shape(width, height, channels)?;
        if !value.is_finite() {
            return Err(Error::InvalidParameter("fill value must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    /// Wraps planar data. Fails when the length does not match the shape or
    /// any sample is non-finite.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, channels)?;
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::dims(
                format!("{expected} samples"),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_vec(width, height, channels, data)
    }

    /// Stacks single-channel planes.
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f32>>) -> Result<Self> {
        let channels = planes.len();
        let data = planes.into_iter().flatten().collect();
        Self::from_vec(width, height, channels, data)
    }

    pub(crate) fn from_vec_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    /// Sets one sample. Non-finite values are rejected.
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite sample".into()));
        }
        let i = c * self.plane_len() + y * self.width + x;
        self.data[i] = value;
        Ok(())
    }

    /// Pixel lookup with out-of-range coordinates resolved by `policy`.
    #[inline]
    pub fn get_border(&self, x: isize, y: isize, c: usize, policy: BorderPolicy) -> f32 {
        match (
            policy.resolve(x, self.width),
            policy.resolve(y, self.height),
        ) {
            (Some(xi), Some(yi)) => self.get(xi, yi, c),
            _ => 0.0,
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    /// Elementwise map; results must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Image> {
        Image::from_vec(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp01(&self) -> Image {
        Image::from_vec_unchecked(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Single-channel luma view. One-channel input is returned unchanged.
    pub fn to_grayscale(&self) -> Result<Image> {
        match self.channels {
            1 => Ok(self.clone()),
            3 => {
                let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
                let [wr, wg, wb] = LUMA_WEIGHTS;
                let data = r
                    .iter()
                    .zip(g)
                    .zip(b)
                    .map(|((&r, &g), &b)| wr * r + wg * g + wb * b)
                    .collect();
                Ok(Image::from_vec_unchecked(self.width, self.height, 1, data))
            }
            n => Err(Error::Unsupported(format!(
                "grayscale conversion of a {n}-channel image"
            ))),
        }
    }

    /// Extracts a sub-rectangle.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            let p = self.plane(c);
            for y in y0..y0 + height {
                data.extend_from_slice(&p[y * self.width + x0..y * self.width + x0 + width]);
            }
        }
        Ok(Image::from_vec_unchecked(width, height, self.channels, data))
    }
}

/// Free-function form of [`Image::to_grayscale`].
pub fn to_grayscale(img: &Image) -> Result<Image> {
    img.to_grayscale()
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Unsupported(format!("{channels}-channel image")));
    }
    Ok(())
}
