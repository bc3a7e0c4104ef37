//! Layer kernels with hand-written backward passes.
//!
//! Every forward function is pure. Its `_backward` partner takes the
//! forward inputs plus the gradient of the loss with respect to the output
//! and returns gradients with respect to the inputs and parameters.

use super::Tensor4;
use crate::error::{Error, Result};
use crate::flow::DenseFlow;

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor4,
    /// Same shape as the kernel, `(out, in, kh, kw)`.
    pub weight: Tensor4,
    pub bias: Vec<f32>,
}

/// Output side of a strided, zero-padded correlation.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (stride > 0 && padded >= k).then(|| (padded - k) / stride + 1)
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv_geom(x: &Tensor4, weight: &Tensor4, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [_, ci, h, w] = x.dims();
    let [_, wci, kh, kw] = weight.dims();
    if wci != ci {
        return Err(Error::dims(
            format!("kernel with {ci} input channels"),
            format!("{wci}"),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvGeom {
            ci,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        }),
        _ => Err(Error::dims(
            format!("input of at least {kw}x{kh} after padding"),
            format!("{w}x{h} with pad {pad}"),
        )),
    }
}

/// Unrolls one batch item into `(ci·kh·kw) × (oh·ow)` patch columns.
fn im2col(src: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.ci {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let line = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            line[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
fn col2im(cols: &[f32], g: &ConvGeom, dst: &mut [f32]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.ci {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c = a · b + beta · c` for row-major `a: m × k` (or its transpose when
/// `ta`), `b: k × n` (or transposed when `tb`) and `c: m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides address exactly the checked extents above.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// 2-D cross-correlation with zero padding:
/// `y[n,o,i,j] = b[o] + Σ x[n,c,i·s+ky−p, j·s+kx−p] · w[o,c,ky,kx]`.
pub fn conv2d(
    x: &Tensor4,
    weight: &Tensor4,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4> {
    let g = conv_geom(x, weight, stride, pad)?;
    let co = weight.dims()[0];
    if let Some(b) = bias {
        if b.len() != co {
            return Err(Error::dims(format!("{co} biases"), b.len()));
        }
    }
    let k = g.ci * g.kh * g.kw;
    let p = g.oh * g.ow;
    let mut out = Tensor4::zeros([x.batch(), co, g.oh, g.ow]);
    let mut cols = vec![0.0f32; k * p];
    let wd = weight.data();
    for n in 0..x.batch() {
        im2col(x.item(n), &g, &mut cols);
        let dst = out.item_mut(n);
        for o in 0..co {
            dst[o * p..(o + 1) * p].fill(bias.map_or(0.0, |b| b[o]));
        }
        // out[co × p] += w[co × k] · cols[k × p]
        gemm(co, k, p, wd, false, &cols, false, dst, 1.0);
    }
    Ok(out)
}

pub fn conv2d_backward(
    x: &Tensor4,
    weight: &Tensor4,
    grad_out: &Tensor4,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let g = conv_geom(x, weight, stride, pad)?;
    let co = weight.dims()[0];
    grad_out.check_dims([x.batch(), co, g.oh, g.ow], "conv output gradient")?;
    let k = g.ci * g.kh * g.kw;
    let p = g.oh * g.ow;
    let mut gx = Tensor4::zeros(x.dims());
    let mut gw = Tensor4::zeros(weight.dims());
    let mut gb = vec![0.0f32; co];
    let mut cols = vec![0.0f32; k * p];
    let mut gcols = vec![0.0f32; k * p];
    let wd = weight.data();
    for n in 0..x.batch() {
        im2col(x.item(n), &g, &mut cols);
        let gy = grad_out.item(n);
        for (o, b) in gb.iter_mut().enumerate() {
            *b += gy[o * p..(o + 1) * p].iter().sum::<f32>();
        }
        // gw[co × k] += gy[co × p] · colsᵀ
        gemm(co, p, k, gy, false, &cols, true, gw.data_mut(), 1.0);
        // gcols[k × p] = wᵀ · gy
        gemm(k, co, p, wd, true, gy, false, &mut gcols, 0.0);
        col2im(&gcols, &g, gx.item_mut(n));
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// Parametric ReLU with one slope per channel: `x` if positive, else `a·x`.
pub fn prelu(x: &Tensor4, alpha: &[f32]) -> Result<Tensor4> {
    check_alpha(x, alpha)?;
    let mut out = x.clone();
    for n in 0..x.batch() {
        for (c, &a) in alpha.iter().enumerate() {
            out.plane_mut(n, c)
                .iter_mut()
                .for_each(|v| *v = if *v > 0.0 { *v } else { a * *v });
        }
    }
    Ok(out)
}

/// Returns `(∂L/∂x, ∂L/∂alpha)`.
pub fn prelu_backward(x: &Tensor4, alpha: &[f32], grad_out: &Tensor4) -> Result<(Tensor4, Vec<f32>)> {
    check_alpha(x, alpha)?;
    grad_out.check_dims(x.dims(), "prelu output gradient")?;
    let mut gx = grad_out.clone();
    let mut ga = vec![0.0f32; alpha.len()];
    for n in 0..x.batch() {
        for (c, &a) in alpha.iter().enumerate() {
            let xs = x.plane(n, c);
            let gy = grad_out.plane(n, c);
            for ((g, &xv), &d) in gx.plane_mut(n, c).iter_mut().zip(xs).zip(gy) {
                if xv <= 0.0 {
                    *g = a * d;
                    ga[c] += xv * d;
                }
            }
        }
    }
    Ok((gx, ga))
}

fn check_alpha(x: &Tensor4, alpha: &[f32]) -> Result<()> {
    if alpha.len() == x.channels() {
        Ok(())
    } else {
        Err(Error::dims(
            format!("{} slopes", x.channels()),
            alpha.len(),
        ))
    }
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub fn upsample2_backward(grad_out: &Tensor4) -> Result<Tensor4> {
    let [n, c, h2, w2] = grad_out.dims();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::dims("even gradient dimensions", format!("{w2}x{h2}")));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                }
            }
        }
    }
    Ok(out)
}

/// Four bilinear taps with replicate borders: indices and weights.
#[inline]
fn taps(x: f32, y: f32, w: usize, h: usize) -> ([usize; 4], [f32; 4]) {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let clamp = |v: f32, len: usize| (v.max(0.0) as usize).min(len - 1);
    let (xa, xb) = (clamp(x0, w), clamp(x0 + 1.0, w));
    let (ya, yb) = (clamp(y0, h), clamp(y0 + 1.0, h));
    (
        [ya * w + xa, ya * w + xb, yb * w + xa, yb * w + xb],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    )
}

fn check_flows(x: &Tensor4, flows: &[&DenseFlow]) -> Result<()> {
    if flows.len() != x.batch() {
        return Err(Error::dims(format!("{} flows", x.batch()), flows.len()));
    }
    for f in flows {
        f.check_dims(x.width(), x.height())?;
    }
    Ok(())
}

/// Backward warp of every channel of batch item `n` by `flows[n]`
/// (bilinear, replicate border). The flow is treated as a constant.
pub fn warp_features(x: &Tensor4, flows: &[&DenseFlow]) -> Result<Tensor4> {
    check_flows(x, flows)?;
    let [n, c, h, w] = x.dims();
    let mut out = Tensor4::zeros(x.dims());
    for b in 0..n {
        let f = flows[b];
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for xx in 0..w {
                    let i = y * w + xx;
                    let (idx, wt) = taps(xx as f32 + f.u()[i], y as f32 + f.v()[i], w, h);
                    let top = wt_pair(src[idx[0]], src[idx[1]], wt[0], wt[1]);
                    let bottom = wt_pair(src[idx[2]], src[idx[3]], wt[2], wt[3]);
                    dst[i] = top + bottom;
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn wt_pair(a: f32, b: f32, wa: f32, wb: f32) -> f32 {
    wa * a + wb * b
}

/// Adjoint of [`warp_features`] with respect to the features.
pub fn warp_features_backward(grad_out: &Tensor4, flows: &[&DenseFlow]) -> Result<Tensor4> {
    check_flows(grad_out, flows)?;
    let [n, c, h, w] = grad_out.dims();
    let mut gx = Tensor4::zeros(grad_out.dims());
    for b in 0..n {
        let f = flows[b];
        for ch in 0..c {
            let gy = grad_out.plane(b, ch);
            let dst = gx.plane_mut(b, ch);
            for y in 0..h {
                for xx in 0..w {
                    let i = y * w + xx;
                    let (idx, wt) = taps(xx as f32 + f.u()[i], y as f32 + f.v()[i], w, h);
                    for k in 0..4 {
                        dst[idx[k]] += wt[k] * gy[i];
                    }
                }
            }
        }
    }
    Ok(gx)
}
