//! Training losses: L1 reconstruction, soft census, flow distillation and
//! their weighted sum.

use serde::{Deserialize, Serialize};

use super::Tensor4;
use crate::error::{Error, Result};
use crate::flow::{mean_endpoint_error, DenseFlow};
use crate::image::{Image, LUMA_WEIGHTS};

/// Default weight of the distillation term.
pub const DISTILLATION_WEIGHT: f64 = 0.1;

/// The individual terms and their weighted sum
/// `total = l_rec + l_cen + lambda · l_dis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_cen: f64,
    pub l_dis: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_rec: f64, l_cen: f64, l_dis: f64, lambda: f64) -> Self {
        Self {
            l_rec,
            l_cen,
            l_dis,
            lambda,
            total: l_rec + l_cen + lambda * l_dis,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_cen, self.l_dis, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Ternary census settings. Differences to the centre pixel are squashed
/// by `d / sqrt(threshold² + d²)`, a smooth stand-in for the three-way
/// comparison at `±threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusParams {
    /// Neighbourhood half-width; 3 gives a 7×7 patch.
    pub radius: usize,
    pub threshold: f32,
    /// `ε` of the soft Hamming distance `Δ² / (ε + Δ²)`.
    pub hamming_eps: f32,
}

impl Default for CensusParams {
    fn default() -> Self {
        Self {
            radius: 3,
            threshold: 0.04,
            hamming_eps: 0.1,
        }
    }
}

/// Mean absolute error over all samples.
pub fn reconstruction_loss(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_same_shape(gt)?;
    Ok(l1_with_grad(&Tensor4::from_image(pred), &Tensor4::from_image(gt), false)?.0)
}

/// Soft ternary census distance with default settings.
pub fn census_loss(pred: &Image, gt: &Image) -> Result<f64> {
    census_loss_with(pred, gt, &CensusParams::default())
}

pub fn census_loss_with(pred: &Image, gt: &Image, params: &CensusParams) -> Result<f64> {
    pred.check_same_shape(gt)?;
    Ok(census_with_grad(&Tensor4::from_image(pred), &Tensor4::from_image(gt), params, false)?.0)
}

/// Mean endpoint error against a reference flow.
pub fn distillation_loss(flow: &DenseFlow, label: &DenseFlow) -> Result<f64> {
    mean_endpoint_error(flow, label, 1.0)
}

/// All terms with the default distillation weight. Without a label the
/// distillation term is zero.
pub fn total_loss(
    pred: &Image,
    gt: &Image,
    flow: &DenseFlow,
    label: Option<&DenseFlow>,
) -> Result<LossBreakdown> {
    let l_rec = reconstruction_loss(pred, gt)?;
    let l_cen = census_loss(pred, gt)?;
    let l_dis = match label {
        Some(l) => distillation_loss(flow, l)?,
        None => 0.0,
    };
    Ok(LossBreakdown::new(l_rec, l_cen, l_dis, DISTILLATION_WEIGHT))
}

/// L1 loss over a batch and, when asked, its gradient.
pub(crate) fn l1_with_grad(pred: &Tensor4, gt: &Tensor4, grad: bool) -> Result<(f64, Option<Tensor4>)> {
    gt.check_dims(pred.dims(), "target")?;
    let n = pred.data().len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / n;
    let g = grad.then(|| {
        let scale = (1.0 / n) as f32;
        let data = pred
            .data()
            .iter()
            .zip(gt.data())
            .map(|(&a, &b)| {
                if a > b {
                    scale
                } else if a < b {
                    -scale
                } else {
                    0.0
                }
            })
            .collect();
        Tensor4::from_vec(pred.dims(), data).expect("same dims")
    });
    Ok((loss, g))
}

fn luma_planes(t: &Tensor4, n: usize) -> Result<Vec<f32>> {
    match t.channels() {
        1 => Ok(t.plane(n, 0).to_vec()),
        3 => {
            let [wr, wg, wb] = LUMA_WEIGHTS;
            Ok(t.plane(n, 0)
                .iter()
                .zip(t.plane(n, 1))
                .zip(t.plane(n, 2))
                .map(|((&r, &g), &b)| wr * r + wg * g + wb * b)
                .collect())
        }
        c => Err(Error::Unsupported(format!("census of a {c}-channel map"))),
    }
}

/// Census loss over a batch and, when asked, its gradient with respect to
/// `pred`. Only pixels whose full neighbourhood is inside the frame count.
pub(crate) fn census_with_grad(
    pred: &Tensor4,
    gt: &Tensor4,
    params: &CensusParams,
    grad: bool,
) -> Result<(f64, Option<Tensor4>)> {
    gt.check_dims(pred.dims(), "target")?;
    if !(params.threshold > 0.0 && params.hamming_eps > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid census settings {params:?}")));
    }
    let [batch, ch, h, w] = pred.dims();
    let r = params.radius;
    let mut gpred = grad.then(|| Tensor4::zeros(pred.dims()));
    if w <= 2 * r || h <= 2 * r {
        return Ok((0.0, gpred));
    }
    let tau2 = (params.threshold as f64).powi(2);
    let eps = params.hamming_eps as f64;
    let soft = |d: f64| d / (tau2 + d * d).sqrt();
    let dsoft = |d: f64| tau2 / (tau2 + d * d).powf(1.5);
    let offsets: Vec<(isize, isize)> = (-(r as isize)..=r as isize)
        .flat_map(|dy| (-(r as isize)..=r as isize).map(move |dx| (dx, dy)))
        .filter(|&o| o != (0, 0))
        .collect();
    let count = (batch * (w - 2 * r) * (h - 2 * r) * offsets.len()) as f64;

    let mut total = 0.0f64;
    let mut gl = vec![0.0f64; w * h];
    for n in 0..batch {
        let p = luma_planes(pred, n)?;
        let g = luma_planes(gt, n)?;
        gl.fill(0.0);
        for y in r..h - r {
            for x in r..w - r {
                let c = y * w + x;
                for &(dx, dy) in &offsets {
                    let q = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    let dp = (p[q] - p[c]) as f64;
                    let dg = (g[q] - g[c]) as f64;
                    let delta = soft(dp) - soft(dg);
                    let d2 = delta * delta;
                    total += d2 / (eps + d2);
                    if grad {
                        let dh = 2.0 * eps * delta / ((eps + d2) * (eps + d2));
                        let v = dh * dsoft(dp) / count;
                        gl[q] += v;
                        gl[c] -= v;
                    }
                }
            }
        }
        if let Some(gt_) = gpred.as_mut() {
            let weights: &[f32] = if ch == 1 { &[1.0] } else { &LUMA_WEIGHTS };
            for (k, &wk) in weights.iter().enumerate() {
                gt_.plane_mut(n, k)
                    .iter_mut()
                    .zip(&gl)
                    .for_each(|(o, &v)| *o = (wk as f64 * v) as f32);
            }
        }
    }
    Ok((total / count, gpred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::random_tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, hi: f32, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..hi)).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let a = random_image(4, 4, 3, 0.7, 1);
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.25).unwrap();
        assert!((reconstruction_loss(&b, &a).unwrap() - 0.25).abs() < 1e-7);
        let c = random_image(4, 4, 3, 1.0, 2);
        let oracle: f64 = a
            .data()
            .iter()
            .zip(c.data())
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum::<f64>()
            / 48.0;
        assert!((reconstruction_loss(&a, &c).unwrap() - oracle).abs() < 1e-7);
        assert!(reconstruction_loss(&a, &Image::new(4, 3, 3).unwrap()).is_err());
    }

    #[test]
    fn census_examples() {
        let gt = random_image(16, 12, 3, 0.9, 3);
        assert_eq!(census_loss(&gt, &gt).unwrap(), 0.0);
        let brighter = gt.map(|v| v + 0.1).unwrap();
        assert!(census_loss(&brighter, &gt).unwrap() < 1e-6);
        // Reverse the rows and columns: same values, different structure.
        let (w, h) = gt.dims();
        let permuted = Image::from_fn(w, h, 3, |x, y, c| gt.get(w - 1 - x, h - 1 - y, c)).unwrap();
        assert!(census_loss(&permuted, &gt).unwrap() > 0.01);
        // Too small for any full neighbourhood.
        let tiny = random_image(6, 6, 1, 1.0, 4);
        assert_eq!(census_loss(&tiny, &random_image(6, 6, 1, 1.0, 5)).unwrap(), 0.0);
    }

    #[test]
    fn distillation_examples() {
        let z = DenseFlow::zeros(5, 4);
        assert_eq!(distillation_loss(&z, &z).unwrap(), 0.0);
        let f = DenseFlow::constant(5, 4, 3.0, 4.0);
        assert!((distillation_loss(&f, &z).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn total_combines_terms() {
        let b = LossBreakdown::new(1.0, 0.5, 2.0, DISTILLATION_WEIGHT);
        assert!((b.total - 1.7).abs() < 1e-12);
        let img = random_image(10, 10, 3, 1.0, 6);
        let other = random_image(10, 10, 3, 1.0, 7);
        let f = DenseFlow::constant(10, 10, 1.0, 0.0);
        let zero = total_loss(&img, &img, &f, Some(&f)).unwrap();
        assert_eq!(zero.total, 0.0);
        let no_label = total_loss(&other, &img, &f, None).unwrap();
        assert_eq!(no_label.l_dis, 0.0);
        assert_eq!(no_label.total, no_label.l_rec + no_label.l_cen);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for ch in [1, 3] {
            let pred = random_tensor([2, ch, 9, 10], &mut rng);
            let gt = random_tensor([2, ch, 9, 10], &mut rng);
            let params = CensusParams { threshold: 0.3, ..Default::default() };
            let (_, g) = census_with_grad(&pred, &gt, &params, true).unwrap();
            let g = g.unwrap();
            let eps = 1e-3f32;
            for i in (0..pred.data().len()).step_by(7) {
                let f = |d: f32| {
                    let mut t = pred.clone();
                    t.data_mut()[i] += d;
                    census_with_grad(&t, &gt, &params, false).unwrap().0
                };
                let num = (f(eps) - f(-eps)) / (2.0 * eps as f64);
                let ana = g.data()[i] as f64;
                let scale = ana.abs().max(num.abs()).max(1e-3);
                assert!((ana - num).abs() / scale < 1e-2, "{i}: {ana} vs {num}");
            }
        }
    }
}
