use super::sample::resize_plane;
use super::{gaussian_blur, Image};
use crate::error::{Error, Result};

/// Coarser levels must keep both dimensions at least this large.
pub const MIN_LEVEL_SIZE: usize = 8;

/// Multi-resolution stack, level 0 at full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Image>,
    pub scale: f32,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coarsest(&self) -> &Image {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// `max(1, floor(dim * scale))`, with a tiny tolerance so products that are
/// integral in exact arithmetic are not floored one below.
fn shrink(dim: usize, scale: f32) -> usize {
    ((dim as f64 * scale as f64 + 1e-9).floor() as usize).max(1)
}

/// Level dimensions `build_pyramid` would produce, without doing the work.
pub fn pyramid_level_dims(
    width: usize,
    height: usize,
    levels: usize,
    scale: f32,
) -> Vec<(usize, usize)> {
    let mut dims = vec![(width, height)];
    while dims.len() < levels {
        let &(w, h) = dims.last().unwrap();
        let next = (shrink(w, scale), shrink(h, scale));
        if next.0 < MIN_LEVEL_SIZE || next.1 < MIN_LEVEL_SIZE {
            break;
        }
        dims.push(next);
    }
    dims
}

/// Blur-then-resample pyramid. Each level is the previous one smoothed with
/// `sigma = 0.5 * (1/scale - 1)` and bilinearly resampled to
/// `floor(dim * scale)`. Levels that would drop below [`MIN_LEVEL_SIZE`]
/// are not built.
pub fn build_pyramid(img: &Image, levels: usize, scale: f32) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidParameter("pyramid needs at least one level".into()));
    }
    if !(scale > 0.0 && scale < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pyramid scale must be in (0, 1), got {scale}"
        )));
    }
    let dims = pyramid_level_dims(img.width(), img.height(), levels, scale);
    let sigma = 0.5 * (1.0 / scale - 1.0);
    let mut out = vec![img.clone()];
    for &(nw, nh) in &dims[1..] {
        let prev = out.last().unwrap();
        let smooth = gaussian_blur(prev, sigma)?;
        let mut data = Vec::with_capacity(nw * nh * prev.channels());
        for c in 0..prev.channels() {
            data.extend(resize_plane(
                smooth.plane(c),
                prev.width(),
                prev.height(),
                nw,
                nh,
            ));
        }
        out.push(Image::from_vec_unchecked(nw, nh, prev.channels(), data));
    }
    Ok(Pyramid { levels: out, scale })
}
