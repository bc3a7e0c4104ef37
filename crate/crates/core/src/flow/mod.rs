//! Optical flow fields and the two analytical estimators.

pub mod farneback;
pub mod lk;

use crate::error::{Error, Result};
use crate::image::sample::resize_plane;
use crate::image::Image;

/// Per-pixel displacement field. The pixel at `(x, y)` in the first frame
/// appears at `(x + u, y + v)` in the second.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlow {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl DenseFlow {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
        }
    }

    pub fn from_planes(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let flow = Self::from_planes_unchecked(width, height, u, v)?;
        if let Some(i) = flow.first_non_finite() {
            return Err(Error::Numeric(format!("non-finite flow at index {i}")));
        }
        Ok(flow)
    }

    /// Shape-checked but accepts non-finite values. Used by readers that
    /// decide on their own how to treat them.
    pub(crate) fn from_planes_unchecked(
        width: usize,
        height: usize,
        u: Vec<f32>,
        v: Vec<f32>,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::dims(
                format!("{n} flow vectors"),
                format!("{} / {}", u.len(), v.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    /// Evaluates `f(x, y) -> (u, v)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::from_planes(width, height, u, v)
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [f32] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [f32] {
        &mut self.v
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub(crate) fn first_non_finite(&self) -> Option<usize> {
        self.u
            .iter()
            .zip(&self.v)
            .position(|(a, b)| !a.is_finite() || !b.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.dims() == (width, height) {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{width}x{height} flow"),
                format!("{}x{} flow", self.width, self.height),
            ))
        }
    }

    /// Multiplies every vector by `s`.
    pub fn scaled(&self, s: f32) -> DenseFlow {
        DenseFlow {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|a| a * s).collect(),
            v: self.v.iter().map(|a| a * s).collect(),
        }
    }

    /// Bilinear resample to a new grid. Vectors are rescaled by the per-axis
    /// size ratio so they stay in pixels of the new grid.
    pub fn resize(&self, width: usize, height: usize) -> DenseFlow {
        let rx = width as f32 / self.width as f32;
        let ry = height as f32 / self.height as f32;
        let mut u = resize_plane(&self.u, self.width, self.height, width, height);
        let mut v = resize_plane(&self.v, self.width, self.height, width, height);
        u.iter_mut().for_each(|a| *a *= rx);
        v.iter_mut().for_each(|a| *a *= ry);
        DenseFlow {
            width,
            height,
            u,
            v,
        }
    }

    /// Flow magnitudes, row-major.
    pub fn magnitudes(&self) -> Vec<f32> {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect()
    }
}

/// Mean endpoint error between two fields, optionally restricted to a
/// central fraction of the frame (e.g. `0.8` keeps the central 80% in each
/// axis).
pub fn mean_endpoint_error(a: &DenseFlow, b: &DenseFlow, central: f32) -> Result<f64> {
    b.check_dims(a.width, a.height)?;
    let (x0, x1) = central_range(a.width, central);
    let (y0, y1) = central_range(a.height, central);
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let (ua, va) = a.get(x, y);
            let (ub, vb) = b.get(x, y);
            acc += ((ua - ub) as f64).hypot((va - vb) as f64);
            n += 1;
        }
    }
    Ok(acc / n.max(1) as f64)
}

fn central_range(len: usize, fraction: f32) -> (usize, usize) {
    let keep = ((len as f32 * fraction.clamp(0.0, 1.0)).round() as usize).clamp(1, len);
    let start = (len - keep) / 2;
    (start, start + keep)
}

pub(crate) fn gray(img: &Image) -> Result<Image> {
    img.to_grayscale()
}
