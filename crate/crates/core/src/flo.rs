//! Middlebury `.flo` files and color-wheel flow visualization.
//!
//! File layout, little-endian: `f32` magic 202021.25, `i32` width, `i32`
//! height, then `height × width` interleaved `(u, v)` `f32` pairs.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::DenseFlow;
use crate::image::Image;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER: usize = 12;

/// Encodes a flow field. Non-finite components are rejected unless
/// `allow_non_finite` is set.
pub fn encode_flo(flow: &DenseFlow, allow_non_finite: bool) -> Result<Vec<u8>> {
    if !allow_non_finite && !flow.is_finite() {
        return Err(Error::Numeric("flow contains non-finite values".into()));
    }
    let (w, h) = flow.dims();
    let dim = |d: usize| {
        i32::try_from(d).map_err(|_| Error::InvalidParameter(format!("flow dimension {d} too large")))
    };
    let mut out = Vec::with_capacity(HEADER + w * h * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&dim(w)?.to_le_bytes());
    out.extend_from_slice(&dim(h)?.to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a flow field; the payload must be exactly `width × height`
/// pairs.
pub fn decode_flo(bytes: &[u8]) -> Result<DenseFlow> {
    if bytes.len() < HEADER {
        return Err(Error::Format(format!("flow file truncated: {} byte header", bytes.len())));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("bad flow magic {magic}")));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!("invalid flow size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::Format(format!("flow size {w}x{h} overflows")))?;
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "flow payload is {} bytes, expected {} for {w}x{h}",
            bytes.len() - HEADER,
            need - HEADER
        )));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for pair in bytes[HEADER..].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[..4].try_into().expect("4 bytes")));
        v.push(f32::from_le_bytes(pair[4..].try_into().expect("4 bytes")));
    }
    if u.iter().chain(&v).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("flow file contains non-finite values".into()));
    }
    DenseFlow::from_planes(w, h, u, v)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<DenseFlow> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_flo(flow: &DenseFlow, path: impl AsRef<Path>) -> Result<()> {
    write_flo_with(flow, path, false)
}

pub fn write_flo_with(flow: &DenseFlow, path: impl AsRef<Path>, allow_non_finite: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_flo(flow, allow_non_finite)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Segment lengths of the Middlebury color wheel: red→yellow, yellow→green,
/// green→cyan, cyan→blue, blue→magenta, magenta→red.
const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f32; 3]> {
    let mut wheel = Vec::with_capacity(55);
    // (channel that ramps, direction) per segment; the others are fixed.
    let starts: [[f32; 3]; 6] = [
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 1.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
    ];
    let ramps: [(usize, f32); 6] = [(1, 1.0), (0, -1.0), (2, 1.0), (1, -1.0), (0, 1.0), (2, -1.0)];
    for ((&n, start), (ch, dir)) in WHEEL_SEGMENTS.iter().zip(starts).zip(ramps) {
        for i in 0..n {
            let mut c = start;
            c[ch] += dir * i as f32 / n as f32;
            wheel.push(c);
        }
    }
    wheel
}

/// 99th percentile of the flow magnitudes.
fn percentile_99(flow: &DenseFlow) -> f32 {
    let mut m = flow.magnitudes();
    if m.is_empty() {
        return 0.0;
    }
    let k = ((m.len() - 1) as f64 * 0.99).round() as usize;
    let (_, v, _) = m.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *v
}

/// Renders flow as RGB with the Middlebury color wheel: hue from the
/// direction, saturation from the magnitude relative to `max_magnitude`
/// (default: 99th percentile of the field). Zero motion is white;
/// magnitudes beyond the maximum are darkened.
pub fn flow_to_color(flow: &DenseFlow, max_magnitude: Option<f32>) -> Image {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let max = max_magnitude.unwrap_or_else(|| percentile_99(flow));
    let (w, h) = flow.dims();
    let mut planes = vec![vec![1.0f32; w * h]; 3];
    if max > 0.0 && max.is_finite() {
        for (i, (&u, &v)) in flow.u().iter().zip(flow.v()).enumerate() {
            let rad = (u * u + v * v).sqrt() / max;
            if !(rad > 0.0) {
                continue;
            }
            let a = (-v).atan2(-u) / std::f32::consts::PI;
            let fk = (a + 1.0) / 2.0 * (ncols - 1) as f32;
            let k0 = (fk.floor() as usize).min(ncols - 1);
            let k1 = (k0 + 1) % ncols;
            let f = fk - k0 as f32;
            for (c, plane) in planes.iter_mut().enumerate() {
                let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
                plane[i] = if rad <= 1.0 {
                    1.0 - rad * (1.0 - col)
                } else {
                    col * 0.75
                };
            }
        }
    }
    Image::from_planes(w, h, planes).expect("consistent planes")
}
