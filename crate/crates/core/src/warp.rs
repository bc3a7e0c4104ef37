//! Intermediate flows, backward warping and the non-learned blend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DenseFlow;
use crate::image::sample::sample_plane;
use crate::image::{BorderPolicy, Image};

/// Position of the synthesized frame between frame 0 (`t = 0`) and frame 1
/// (`t = 1`). Always strictly inside the interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f32", into = "f32")]
pub struct Timestep(f32);

impl Timestep {
    pub const MIDDLE: Timestep = Timestep(0.5);

    pub fn new(t: f32) -> Result<Self> {
        if t > 0.0 && t < 1.0 {
            Ok(Timestep(t))
        } else {
            Err(Error::InvalidParameter(format!(
                "timestep must lie strictly between 0 and 1, got {t}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f32 {
        self.0
    }
}

impl Default for Timestep {
    fn default() -> Self {
        Timestep::MIDDLE
    }
}

impl TryFrom<f32> for Timestep {
    type Error = Error;
    fn try_from(t: f32) -> Result<Self> {
        Timestep::new(t)
    }
}

impl From<Timestep> for f32 {
    fn from(t: Timestep) -> f32 {
        t.0
    }
}

/// Flows from the target time back to each input frame, under a linear
/// motion model evaluated at the target pixel: `flow_t0 = −t·f01`,
/// `flow_t1 = −(1−t)·f10`.
pub fn intermediate_flows(
    f01: &DenseFlow,
    f10: &DenseFlow,
    t: Timestep,
) -> Result<(DenseFlow, DenseFlow)> {
    f10.check_dims(f01.width(), f01.height())?;
    let t = t.value();
    Ok((f01.scaled(-t), f10.scaled(-(1.0 - t))))
}

/// `out(p) = img(p + flow(p))`, bilinear, replicate border.
pub fn backward_warp(img: &Image, flow: &DenseFlow) -> Result<Image> {
    flow.check_dims(img.width(), img.height())?;
    let (w, h) = img.dims();
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f32 + flow.u()[i];
                let sy = y as f32 + flow.v()[i];
                data.push(sample_plane(plane, w, h, sx, sy, BorderPolicy::Replicate));
            }
        }
    }
    Image::from_vec(w, h, img.channels(), data)
}

/// Both inputs warped to the target time, plus the flows used to do it.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPair {
    pub warped0: Image,
    pub warped1: Image,
    pub flow_t0: DenseFlow,
    pub flow_t1: DenseFlow,
}

impl WarpPair {
    /// Derives intermediate flows from bidirectional flow and warps both
    /// frames with them.
    pub fn build(
        frame0: &Image,
        frame1: &Image,
        f01: &DenseFlow,
        f10: &DenseFlow,
        t: Timestep,
    ) -> Result<WarpPair> {
        frame0.check_same_shape(frame1)?;
        f01.check_dims(frame0.width(), frame0.height())?;
        let (flow_t0, flow_t1) = intermediate_flows(f01, f10, t)?;
        Ok(WarpPair {
            warped0: backward_warp(frame0, &flow_t0)?,
            warped1: backward_warp(frame1, &flow_t1)?,
            flow_t0,
            flow_t1,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.warped0.dims()
    }
}

/// `(1−t)·warped0 + t·warped1`, clamped to `[0, 1]`.
pub fn fuse_blend(pair: &WarpPair, t: Timestep) -> Image {
    let t = t.value();
    let data = pair
        .warped0
        .data()
        .iter()
        .zip(pair.warped1.data())
        .map(|(&a, &b)| {
            // Exact when both sides agree.
            let v = if a == b { a } else { (1.0 - t) * a + t * b };
            v.clamp(0.0, 1.0)
        })
        .collect();
    let (w, h) = pair.dims();
    Image::from_vec_unchecked(w, h, pair.warped0.channels(), data)
}
