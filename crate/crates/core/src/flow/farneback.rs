//! Dense flow by polynomial expansion.
//!
//! Every neighbourhood of both frames is approximated by a quadratic
//! `f(p) ≈ pᵀ A p + bᵀ p + c`. If the second frame is the first translated
//! by `d`, the linear coefficients satisfy `b₂ = b₁ − 2 A d`, so `d` can be
//! read off by solving a 2×2 system. The system is accumulated over a box
//! window and solved coarse-to-fine over an image pyramid, each level
//! seeded with the upsampled flow of the coarser one.

use serde::{Deserialize, Serialize};

use super::{gray, DenseFlow};
use crate::error::{Error, Result};
use crate::image::filter::{box_sum_plane, correlate_cols, correlate_rows};
use crate::image::{build_pyramid, BorderPolicy, Image};

/// Parameters of the dense estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfParams {
    /// Per-level shrink factor.
    pub pyr_scale: f32,
    pub levels: usize,
    /// Side of the polynomial fitting neighbourhood.
    pub poly_n: usize,
    /// Side of the box window the normal equations are summed over.
    pub win_size: usize,
    /// Refinement rounds per pyramid level.
    pub iterations: usize,
    /// Standard deviation of the Gaussian applicability.
    pub poly_sigma: f32,
}

impl Default for GfParams {
    fn default() -> Self {
        Self {
            pyr_scale: 0.2,
            levels: 3,
            poly_n: 5,
            win_size: 15,
            iterations: 3,
            poly_sigma: 1.1,
        }
    }
}

impl GfParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.pyr_scale > 0.0 && self.pyr_scale < 1.0) {
            return bad(format!("pyr_scale must be in (0, 1), got {}", self.pyr_scale));
        }
        if self.poly_n < 3 || self.poly_n % 2 == 0 {
            return bad(format!("poly_n must be odd and >= 3, got {}", self.poly_n));
        }
        if self.win_size < 3 || self.win_size % 2 == 0 {
            return bad(format!("win_size must be odd and >= 3, got {}", self.win_size));
        }
        if self.levels == 0 || self.iterations == 0 {
            return bad("levels and iterations must be >= 1".into());
        }
        if !(self.poly_sigma > 0.0 && self.poly_sigma.is_finite()) {
            return bad(format!("poly_sigma must be positive, got {}", self.poly_sigma));
        }
        Ok(())
    }
}

/// Per-pixel quadratic model coefficients.
#[derive(Debug, Clone)]
pub struct PolyExpansion {
    pub width: usize,
    pub height: usize,
    pub a11: Vec<f32>,
    /// Off-diagonal of the symmetric `A`, i.e. half the `xy` coefficient.
    pub a12: Vec<f32>,
    pub a22: Vec<f32>,
    pub b1: Vec<f32>,
    pub b2: Vec<f32>,
    pub c: Vec<f32>,
}

/// Basis exponents `(i, j)` for `xⁱ yʲ`: 1, x, y, x², y², xy.
const BASIS: [(usize, usize); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)];

/// Weighted least-squares fit of the 6-term quadratic basis over each
/// `poly_n × poly_n` neighbourhood with Gaussian applicability.
///
/// The fit is a fixed linear filter: the weighted moments
/// `Σ a(p) xⁱ yʲ f(p)` are separable correlations, and the coefficients are
/// those moments multiplied by the inverse Gram matrix of the basis.
pub fn polynomial_expansion(img: &Image, poly_n: usize, poly_sigma: f32) -> Result<PolyExpansion> {
    if img.channels() != 1 {
        return Err(Error::Unsupported(format!(
            "polynomial expansion needs a single-channel image, got {} channels",
            img.channels()
        )));
    }
    if poly_n < 3 || poly_n % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "poly_n must be odd and >= 3, got {poly_n}"
        )));
    }
    let r = (poly_n / 2) as i32;
    let sigma = poly_sigma as f64;
    let g: Vec<f64> = (-r..=r)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pow = |t: i32, e: usize| (t as f64).powi(e as i32);

    let mut gram = [[0.0f64; 6]; 6];
    for (yi, y) in (-r..=r).enumerate() {
        for (xi, x) in (-r..=r).enumerate() {
            let a = g[xi] * g[yi];
            for (k, &(ik, jk)) in BASIS.iter().enumerate() {
                for (l, &(il, jl)) in BASIS.iter().enumerate() {
                    gram[k][l] += a * pow(x, ik + il) * pow(y, jk + jl);
                }
            }
        }
    }
    let ginv = invert6(gram).ok_or_else(|| {
        Error::Numeric("singular polynomial basis Gram matrix".into())
    })?;

    let kernels: Vec<Vec<f32>> = (0..3)
        .map(|e| {
            (-r..=r)
                .zip(&g)
                .map(|(t, &gv)| (gv * pow(t, e)) as f32)
                .collect()
        })
        .collect();

    let (w, h) = img.dims();
    let n = w * h;
    let src = img.plane(0);
    let mut rows = vec![vec![0.0f32; n]; 3];
    for (e, k) in kernels.iter().enumerate() {
        correlate_rows(src, w, h, k, BorderPolicy::Replicate, &mut rows[e]);
    }
    let mut moments = vec![vec![0.0f32; n]; 6];
    for (m, &(i, j)) in BASIS.iter().enumerate() {
        correlate_cols(&rows[i], w, h, &kernels[j], BorderPolicy::Replicate, &mut moments[m]);
    }

    let mut coeffs = vec![vec![0.0f32; n]; 6];
    for p in 0..n {
        for (k, out) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (l, m) in moments.iter().enumerate() {
                acc += ginv[k][l] * m[p] as f64;
            }
            out[p] = acc as f32;
        }
    }
    let [c, b1, b2, a11, a22, axy] = <[Vec<f32>; 6]>::try_from(coeffs).unwrap();
    Ok(PolyExpansion {
        width: w,
        height: h,
        a11,
        a12: axy.into_iter().map(|v| 0.5 * v).collect(),
        a22,
        b1,
        b2,
        c,
    })
}

fn invert6(m: [[f64; 6]; 6]) -> Option<[[f64; 6]; 6]> {
    let mut a = m;
    let mut inv = [[0.0f64; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..6 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..6 {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for j in 0..6 {
                        a[row][j] -= f * a[col][j];
                        inv[row][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Bilinear sample of `(a11, a12, a22, b1, b2)` at a fractional position,
/// or `None` outside the frame.
fn sample_expansion(e: &PolyExpansion, x: f32, y: f32) -> Option<[f32; 5]> {
    let (w, h) = (e.width, e.height);
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f32 && y <= (h - 1) as f32) {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let taps = [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ];
    let mut out = [0.0f32; 5];
    for (k, plane) in [&e.a11, &e.a12, &e.a22, &e.b1, &e.b2].into_iter().enumerate() {
        out[k] = taps.iter().map(|&(j, wt)| wt * plane[j]).sum();
    }
    Some(out)
}

/// Determinant floor below which the windowed system is treated as
/// singular and the prior displacement is kept.
pub const SINGULAR_DET: f64 = 1e-9;

/// One refinement round: solves the windowed normal equations for the
/// displacement at every pixel given a prior field.
pub fn gf_displacement(
    exp1: &PolyExpansion,
    exp2: &PolyExpansion,
    prior: &DenseFlow,
    win_size: usize,
) -> Result<DenseFlow> {
    let (w, h) = (exp1.width, exp1.height);
    if (exp2.width, exp2.height) != (w, h) {
        return Err(Error::dims(
            format!("{w}x{h} expansion"),
            format!("{}x{} expansion", exp2.width, exp2.height),
        ));
    }
    prior.check_dims(w, h)?;
    if win_size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "win_size must be odd, got {win_size}"
        )));
    }

    let n = w * h;
    // Per-pixel contributions: G = AᵀA (3 unique entries), h = AᵀΔb.
    let mut planes = vec![vec![0.0f32; n]; 5];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (du, dv) = (prior.u()[i], prior.v()[i]);
            // Targets outside the frame contribute nothing to the window.
            let Some(e2) = sample_expansion(exp2, x as f32 + du, y as f32 + dv) else {
                continue;
            };

            let a11 = 0.5 * (exp1.a11[i] + e2[0]);
            let a12 = 0.5 * (exp1.a12[i] + e2[1]);
            let a22 = 0.5 * (exp1.a22[i] + e2[2]);
            let db1 = -0.5 * (e2[3] - exp1.b1[i]) + a11 * du + a12 * dv;
            let db2 = -0.5 * (e2[4] - exp1.b2[i]) + a12 * du + a22 * dv;

            planes[0][i] = a11 * a11 + a12 * a12;
            planes[1][i] = a12 * (a11 + a22);
            planes[2][i] = a12 * a12 + a22 * a22;
            planes[3][i] = a11 * db1 + a12 * db2;
            planes[4][i] = a12 * db1 + a22 * db2;
        }
    }
    let mut sums = vec![vec![0.0f32; n]; 5];
    for (src, dst) in planes.iter().zip(sums.iter_mut()) {
        box_sum_plane(src, w, h, win_size, dst);
    }

    let mut u = prior.u().to_vec();
    let mut v = prior.v().to_vec();
    for i in 0..n {
        let (g11, g12, g22) = (sums[0][i] as f64, sums[1][i] as f64, sums[2][i] as f64);
        let (h1, h2) = (sums[3][i] as f64, sums[4][i] as f64);
        let det = g11 * g22 - g12 * g12;
        if det >= SINGULAR_DET {
            u[i] = ((g22 * h1 - g12 * h2) / det) as f32;
            v[i] = ((g11 * h2 - g12 * h1) / det) as f32;
        }
    }
    DenseFlow::from_planes(w, h, u, v)
}

/// Coarse-to-fine dense flow from `img1` to `img2`.
pub fn estimate_flow_gf(img1: &Image, img2: &Image, params: &GfParams) -> Result<DenseFlow> {
    params.validate()?;
    if img1.dims() != img2.dims() {
        return Err(Error::dims(
            format!("{}x{}", img1.width(), img1.height()),
            format!("{}x{}", img2.width(), img2.height()),
        ));
    }
    let g1 = gray(img1)?;
    let g2 = gray(img2)?;
    let p1 = build_pyramid(&g1, params.levels, params.pyr_scale)?;
    let p2 = build_pyramid(&g2, params.levels, params.pyr_scale)?;

    let mut flow: Option<DenseFlow> = None;
    for (l1, l2) in p1.levels.iter().zip(&p2.levels).rev() {
        let (w, h) = l1.dims();
        let mut current = match flow.take() {
            None => DenseFlow::zeros(w, h),
            Some(coarse) => coarse.resize(w, h),
        };
        let e1 = polynomial_expansion(l1, params.poly_n, params.poly_sigma)?;
        let e2 = polynomial_expansion(l2, params.poly_n, params.poly_sigma)?;
        for _ in 0..params.iterations {
            current = gf_displacement(&e1, &e2, &current, params.win_size)?;
        }
        flow = Some(current);
    }
    Ok(flow.expect("pyramid has at least one level"))
}
