//! Sparse flow: minimum-eigenvalue corners, iterative Lucas-Kanade
//! tracking, and inverse-distance densification of the tracks.

use serde::{Deserialize, Serialize};

use super::{gray, DenseFlow};
use crate::error::{Error, Result};
use crate::image::filter::{box_sum_plane, correlate_cols, correlate_rows};
use crate::image::sample::sample_plane;
use crate::image::{BorderPolicy, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f32,
    pub y: f32,
    /// Smaller eigenvalue of the structure tensor.
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiTomasiParams {
    pub max_corners: usize,
    /// Fraction of the strongest response a candidate must reach.
    pub quality_level: f32,
    /// Minimum Euclidean distance between accepted corners.
    pub min_distance: f32,
    /// Side of the structure-tensor window.
    pub block_size: usize,
}

impl Default for ShiTomasiParams {
    fn default() -> Self {
        Self {
            max_corners: 100,
            quality_level: 0.1,
            min_distance: 10.0,
            block_size: 7,
        }
    }
}

impl ShiTomasiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.quality_level > 0.0 && self.quality_level <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quality_level must be in (0, 1], got {}",
                self.quality_level
            )));
        }
        if !(self.min_distance >= 0.0) {
            return Err(Error::InvalidParameter("min_distance must be >= 0".into()));
        }
        if self.block_size % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "block_size must be odd, got {}",
                self.block_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkParams {
    /// Side of the tracking window.
    pub win_size: usize,
    /// Pyramid levels; 1 tracks at full resolution only.
    pub levels: usize,
    pub max_iterations: usize,
    /// Stop once an update is shorter than this many pixels.
    pub epsilon: f32,
    /// Minimum of `λmin(G) / window area` for a track to be valid.
    pub min_eig_threshold: f32,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            win_size: 15,
            levels: 1,
            max_iterations: 30,
            epsilon: 0.03,
            min_eig_threshold: 1e-4,
        }
    }
}

impl LkParams {
    pub fn validate(&self) -> Result<()> {
        if self.win_size % 2 == 0 || self.win_size < 3 {
            return Err(Error::InvalidParameter(format!(
                "win_size must be odd and >= 3, got {}",
                self.win_size
            )));
        }
        if self.levels == 0 {
            return Err(Error::InvalidParameter("levels must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// One tracked feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub x: f32,
    pub y: f32,
    pub u: f32,
    pub v: f32,
    pub valid: bool,
    /// Iterations used at the finest level.
    pub iterations: usize,
    /// Length of the last update at the finest level.
    pub last_step: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseFlow {
    pub matches: Vec<Match>,
}

impl SparseFlow {
    pub fn valid(&self) -> impl Iterator<Item = &Match> {
        self.matches.iter().filter(|m| m.valid)
    }
}

/// Central-difference gradients, replicate borders.
fn gradients(plane: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let d = [-0.5f32, 0.0, 0.5];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    correlate_rows(plane, w, h, &d, BorderPolicy::Replicate, &mut gx);
    correlate_cols(plane, w, h, &d, BorderPolicy::Replicate, &mut gy);
    (gx, gy)
}

#[inline]
fn min_eigenvalue(p: f32, r: f32, q: f32) -> f32 {
    let half_diff = 0.5 * (p - q);
    0.5 * (p + q) - (half_diff * half_diff + r * r).sqrt()
}

/// Minimum-eigenvalue response of the structure tensor summed over a
/// `block_size` window at every pixel.
pub fn min_eigen_response(img: &Image, block_size: usize) -> Result<Vec<f32>> {
    if img.channels() != 1 {
        return Err(Error::Unsupported("corner response needs one channel".into()));
    }
    let (w, h) = img.dims();
    let (gx, gy) = gradients(img.plane(0), w, h);
    let n = w * h;
    let xx: Vec<f32> = gx.iter().map(|a| a * a).collect();
    let xy: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let yy: Vec<f32> = gy.iter().map(|a| a * a).collect();
    let mut sxx = vec![0.0; n];
    let mut sxy = vec![0.0; n];
    let mut syy = vec![0.0; n];
    box_sum_plane(&xx, w, h, block_size, &mut sxx);
    box_sum_plane(&xy, w, h, block_size, &mut sxy);
    box_sum_plane(&yy, w, h, block_size, &mut syy);
    Ok((0..n)
        .map(|i| min_eigenvalue(sxx[i], sxy[i], syy[i]))
        .collect())
}

/// Greedy Shi-Tomasi selection: strongest responses first, rejecting any
/// candidate closer than `min_distance` to an accepted corner.
pub fn detect_corners(img: &Image, params: &ShiTomasiParams) -> Result<Vec<Corner>> {
    params.validate()?;
    let (w, h) = img.dims();
    if w < params.block_size || h < params.block_size {
        return Err(Error::InvalidParameter(format!(
            "image {w}x{h} smaller than the {0}x{0} corner block",
            params.block_size
        )));
    }
    let response = min_eigen_response(img, params.block_size)?;
    let max = response.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 || params.max_corners == 0 {
        return Ok(Vec::new());
    }
    let threshold = params.quality_level * max;
    let mut candidates: Vec<(usize, f32)> = response
        .iter()
        .enumerate()
        .filter(|&(_, &r)| r >= threshold && r > 0.0)
        .map(|(i, &r)| (i, r))
        .collect();
    // Descending response; ties resolved in raster order. The key is a
    // total order, so the unstable sort is deterministic.
    candidates.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    // Accepted corners are bucketed on a grid of `min_distance` cells, so a
    // crowding test only looks at the 3×3 neighbouring cells.
    let min_d2 = params.min_distance * params.min_distance;
    let cell = params.min_distance.max(1.0);
    let gw = (w as f32 / cell).ceil() as usize + 1;
    let gh = (h as f32 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    let mut accepted: Vec<Corner> = Vec::new();
    for (i, score) in candidates {
        let (x, y) = ((i % w) as f32, (i / w) as f32);
        let (cx, cy) = ((x / cell) as usize, (y / cell) as usize);
        let crowded = (cy.saturating_sub(1)..=(cy + 1).min(gh - 1)).any(|gy| {
            (cx.saturating_sub(1)..=(cx + 1).min(gw - 1)).any(|gx| {
                grid[gy * gw + gx].iter().any(|&k| {
                    let c = &accepted[k];
                    let (dx, dy) = (c.x - x, c.y - y);
                    dx * dx + dy * dy < min_d2
                })
            })
        });
        if !crowded {
            grid[cy * gw + cx].push(accepted.len());
            accepted.push(Corner { x, y, score });
            if accepted.len() == params.max_corners {
                break;
            }
        }
    }
    Ok(accepted)
}

/// Single-level iterative Lucas-Kanade for one point. `guess` is the
/// starting displacement in this level's pixels.
#[allow(clippy::too_many_arguments)]
fn track_point(
    i1: &[f32],
    gx: &[f32],
    gy: &[f32],
    i2: &[f32],
    w: usize,
    h: usize,
    px: f32,
    py: f32,
    guess: (f32, f32),
    params: &LkParams,
) -> Match {
    let half = (params.win_size / 2) as isize;
    let area = (params.win_size * params.win_size) as f32;
    let policy = BorderPolicy::Replicate;
    let mut patch = Vec::with_capacity(params.win_size * params.win_size);
    let (mut g11, mut g12, mut g22) = (0.0f64, 0.0f64, 0.0f64);
    for oy in -half..=half {
        for ox in -half..=half {
            let (sx, sy) = (px + ox as f32, py + oy as f32);
            let v = sample_plane(i1, w, h, sx, sy, policy);
            let dx = sample_plane(gx, w, h, sx, sy, policy);
            let dy = sample_plane(gy, w, h, sx, sy, policy);
            g11 += (dx * dx) as f64;
            g12 += (dx * dy) as f64;
            g22 += (dy * dy) as f64;
            patch.push((ox as f32, oy as f32, v, dx, dy));
        }
    }
    let mut m = Match {
        x: px,
        y: py,
        u: guess.0,
        v: guess.1,
        valid: false,
        iterations: 0,
        last_step: f32::INFINITY,
    };
    let lambda = min_eigenvalue(g11 as f32, g12 as f32, g22 as f32);
    let det = g11 * g22 - g12 * g12;
    if lambda / area < params.min_eig_threshold || det <= f64::MIN_POSITIVE {
        return m;
    }

    let margin = half as f32;
    let inside = |x: f32, y: f32| {
        x >= margin && y >= margin && x <= (w - 1) as f32 - margin && y <= (h - 1) as f32 - margin
    };
    let (mut u, mut v) = guess;
    for it in 1..=params.max_iterations {
        let (cx, cy) = (px + u, py + v);
        if !inside(cx, cy) {
            m.u = u;
            m.v = v;
            m.iterations = it - 1;
            return m;
        }
        let (mut b1, mut b2) = (0.0f64, 0.0f64);
        for &(ox, oy, val, dx, dy) in &patch {
            let diff = val - sample_plane(i2, w, h, cx + ox, cy + oy, policy);
            b1 += (diff * dx) as f64;
            b2 += (diff * dy) as f64;
        }
        let su = ((g22 * b1 - g12 * b2) / det) as f32;
        let sv = ((g11 * b2 - g12 * b1) / det) as f32;
        u += su;
        v += sv;
        m.iterations = it;
        m.last_step = su.hypot(sv);
        if m.last_step < params.epsilon {
            break;
        }
    }
    m.u = u;
    m.v = v;
    m.valid = u.is_finite() && v.is_finite() && inside(px + u, py + v);
    m
}

/// Tracks each point from `img1` into `img2`. The output keeps input order.
pub fn lk_track(
    img1: &Image,
    img2: &Image,
    points: &[Corner],
    params: &LkParams,
) -> Result<SparseFlow> {
    params.validate()?;
    if img1.dims() != img2.dims() {
        return Err(Error::dims(
            format!("{}x{}", img1.width(), img1.height()),
            format!("{}x{}", img2.width(), img2.height()),
        ));
    }
    let g1 = gray(img1)?;
    let g2 = gray(img2)?;
    let dims = crate::image::pyramid_level_dims(g1.width(), g1.height(), params.levels, 0.5);
    let p1 = crate::image::build_pyramid(&g1, dims.len(), 0.5)?;
    let p2 = crate::image::build_pyramid(&g2, dims.len(), 0.5)?;
    let grads: Vec<(Vec<f32>, Vec<f32>)> = p1
        .levels
        .iter()
        .map(|l| gradients(l.plane(0), l.width(), l.height()))
        .collect();

    let matches = points
        .iter()
        .map(|pt| {
            let mut guess = (0.0f32, 0.0f32);
            let mut result = None;
            for lvl in (0..p1.len()).rev() {
                let (w, h) = p1.levels[lvl].dims();
                let sx = w as f32 / g1.width() as f32;
                let sy = h as f32 / g1.height() as f32;
                if lvl + 1 < p1.len() {
                    let (cw, ch) = p1.levels[lvl + 1].dims();
                    guess.0 *= w as f32 / cw as f32;
                    guess.1 *= h as f32 / ch as f32;
                }
                let m = track_point(
                    p1.levels[lvl].plane(0),
                    &grads[lvl].0,
                    &grads[lvl].1,
                    p2.levels[lvl].plane(0),
                    w,
                    h,
                    (pt.x + 0.5) * sx - 0.5,
                    (pt.y + 0.5) * sy - 0.5,
                    guess,
                    params,
                );
                guess = (m.u, m.v);
                result = Some(m);
            }
            let mut m = result.expect("at least one level");
            m.x = pt.x;
            m.y = pt.y;
            m
        })
        .collect();
    Ok(SparseFlow { matches })
}

/// Inverse-distance weighting of the valid matches over a full grid:
/// `flow(p) = Σ wᵢ dᵢ / Σ wᵢ` with `wᵢ = 1 / (‖p − pᵢ‖² + 1)`.
pub fn densify(sparse: &SparseFlow, width: usize, height: usize) -> DenseFlow {
    let pts: Vec<&Match> = sparse.valid().collect();
    if pts.is_empty() {
        return DenseFlow::zeros(width, height);
    }
    let xs: Vec<f32> = (0..width).map(|x| x as f32).collect();
    let mut u = vec![0.0f32; width * height];
    let mut v = vec![0.0f32; width * height];
    let mut wsum = vec![0.0f32; width];
    let mut usum = vec![0.0f32; width];
    let mut vsum = vec![0.0f32; width];
    for y in 0..height {
        wsum.fill(0.0);
        usum.fill(0.0);
        vsum.fill(0.0);
        for m in &pts {
            let dy = y as f32 - m.y;
            let base = dy * dy + 1.0;
            let (mx, mu, mv) = (m.x, m.u, m.v);
            // Plain zipped slices so the row loop vectorizes.
            for (((ws, us), vs), &xf) in wsum.iter_mut().zip(&mut usum).zip(&mut vsum).zip(&xs) {
                let dx = xf - mx;
                let wt = 1.0 / (dx * dx + base);
                *ws += wt;
                *us += wt * mu;
                *vs += wt * mv;
            }
        }
        let row = y * width;
        for (((ou, ov), (&us, &vs)), &ws) in u[row..row + width]
            .iter_mut()
            .zip(&mut v[row..row + width])
            .zip(usum.iter().zip(&vsum))
            .zip(&wsum)
        {
            *ou = us / ws;
            *ov = vs / ws;
        }
    }
    DenseFlow { width, height, u, v }
}

/// Corners on `img1`, tracked into `img2`, densified to the frame grid.
pub fn estimate_flow_lk(
    img1: &Image,
    img2: &Image,
    st: &ShiTomasiParams,
    lk: &LkParams,
) -> Result<DenseFlow> {
    if img1.dims() != img2.dims() {
        return Err(Error::dims(
            format!("{}x{}", img1.width(), img1.height()),
            format!("{}x{}", img2.width(), img2.height()),
        ));
    }
    let g1 = gray(img1)?;
    let corners = detect_corners(&g1, st)?;
    let sparse = lk_track(&g1, img2, &corners, lk)?;
    Ok(densify(&sparse, img1.width(), img1.height()))
}
