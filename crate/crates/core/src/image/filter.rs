use super::{BorderPolicy, Image};
use crate::error::{Error, Result};

/// Normalized sampled Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f32>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| (v / sum) as f32).collect())
}

/// Separable correlation: a horizontal pass with `kx` followed by a vertical
/// pass with `ky`. Equivalent to correlating with the outer product
/// `ky ⊗ kx`. Both kernels must have odd length; they are centered.
pub fn convolve_separable(
    img: &Image,
    kx: &[f32],
    ky: &[f32],
    policy: BorderPolicy,
) -> Result<Image> {
    for (name, k) in [("horizontal", kx), ("vertical", ky)] {
        if k.len() % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "{name} kernel length must be odd, got {}",
                k.len()
            )));
        }
    }
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(img.data().len());
    let mut tmp = vec![0.0f32; w * h];
    let mut plane_out = vec![0.0f32; w * h];
    for c in 0..img.channels() {
        correlate_rows(img.plane(c), w, h, kx, policy, &mut tmp);
        correlate_cols(&tmp, w, h, ky, policy, &mut plane_out);
        out.extend_from_slice(&plane_out);
    }
    Ok(Image::from_vec_unchecked(w, h, img.channels(), out))
}

/// Gaussian smoothing with replicate borders.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Result<Image> {
    let k = gaussian_kernel(sigma)?;
    convolve_separable(img, &k, &k, BorderPolicy::Replicate)
}

/// Mean over a `size x size` window, replicate borders.
pub fn box_filter(img: &Image, size: usize) -> Result<Image> {
    if size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "box window must be odd, got {size}"
        )));
    }
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(img.data().len());
    let mut plane = vec![0.0; w * h];
    for c in 0..img.channels() {
        box_sum_plane(img.plane(c), w, h, size, &mut plane);
        let scale = 1.0 / (size * size) as f32;
        out.extend(plane.iter().map(|v| v * scale));
    }
    Ok(Image::from_vec_unchecked(w, h, img.channels(), out))
}

/// Windowed sums over `size x size` (odd) with replicate borders, computed
/// with running sums in `f64` so the result does not depend on the window
/// size beyond rounding of the final value.
pub(crate) fn box_sum_plane(src: &[f32], w: usize, h: usize, size: usize, dst: &mut [f32]) {
    let r = (size / 2) as isize;
    let mut rows = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let at = |i: isize| row[i.clamp(0, w as isize - 1) as usize] as f64;
        let mut acc: f64 = (-r..=r).map(at).sum();
        for x in 0..w {
            rows[y * w + x] = acc;
            let xi = x as isize;
            acc += at(xi + r + 1) - at(xi - r);
        }
    }
    let mut acc = vec![0.0f64; w];
    for dy in -r..=r {
        let yy = dy.clamp(0, h as isize - 1) as usize;
        for x in 0..w {
            acc[x] += rows[yy * w + x];
        }
    }
    for y in 0..h {
        for x in 0..w {
            dst[y * w + x] = acc[x] as f32;
        }
        let yi = y as isize;
        let add = (yi + r + 1).clamp(0, h as isize - 1) as usize;
        let sub = (yi - r).clamp(0, h as isize - 1) as usize;
        for x in 0..w {
            acc[x] += rows[add * w + x] - rows[sub * w + x];
        }
    }
}

pub(crate) fn correlate_rows(
    src: &[f32],
    w: usize,
    h: usize,
    k: &[f32],
    policy: BorderPolicy,
    dst: &mut [f32],
) {
    let r = (k.len() / 2) as isize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let xi = x as isize;
            let mut acc = 0.0f32;
            if xi >= r && xi + r < w as isize {
                let base = (xi - r) as usize;
                for (kv, sv) in k.iter().zip(&row[base..base + k.len()]) {
                    acc += kv * sv;
                }
            } else {
                for (j, kv) in k.iter().enumerate() {
                    if let Some(i) = policy.resolve(xi + j as isize - r, w) {
                        acc += kv * row[i];
                    }
                }
            }
            *o = acc;
        }
    }
}

pub(crate) fn correlate_cols(
    src: &[f32],
    w: usize,
    h: usize,
    k: &[f32],
    policy: BorderPolicy,
    dst: &mut [f32],
) {
    let r = (k.len() / 2) as isize;
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        out.fill(0.0);
        for (j, &kv) in k.iter().enumerate() {
            let Some(yy) = policy.resolve(y as isize + j as isize - r, h) else {
                continue;
            };
            let row = &src[yy * w..(yy + 1) * w];
            for (o, s) in out.iter_mut().zip(row) {
                *o += kv * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense 2-D correlation with the outer-product kernel, straight from
    /// the definition.
    fn dense_oracle(img: &Image, kx: &[f32], ky: &[f32], policy: BorderPolicy) -> Vec<f64> {
        let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
        let mut out = Vec::new();
        for c in 0..img.channels() {
            for y in 0..img.height() as isize {
                for x in 0..img.width() as isize {
                    let mut acc = 0.0f64;
                    for (j, &kyv) in ky.iter().enumerate() {
                        for (i, &kxv) in kx.iter().enumerate() {
                            let v = img.get_border(
                                x + i as isize - rx,
                                y + j as isize - ry,
                                c,
                                policy,
                            );
                            acc += kxv as f64 * kyv as f64 * v as f64;
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn unit_kernels_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 7, 5, 3);
        let out = convolve_separable(&img, &[1.0], &[1.0], BorderPolicy::Zero).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn binomial_kernel_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 8, 8, 1);
        let k = [0.25, 0.5, 0.25];
        let out = convolve_separable(&img, &k, &k, BorderPolicy::Replicate).unwrap();
        let oracle = dense_oracle(&img, &k, &k, BorderPolicy::Replicate);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_of_ramp_is_one() {
        let img = Image::from_fn(9, 4, 1, |x, _, _| x as f32).unwrap();
        let out =
            convolve_separable(&img, &[-0.5, 0.0, 0.5], &[1.0], BorderPolicy::Replicate).unwrap();
        for y in 0..4 {
            for x in 1..8 {
                assert_eq!(out.get(x, y, 0), 1.0);
            }
        }
    }

    #[test]
    fn even_kernels_are_rejected() {
        let img = Image::new(4, 4, 1).unwrap();
        assert!(convolve_separable(&img, &[0.5, 0.5], &[1.0], BorderPolicy::Zero).is_err());
        assert!(convolve_separable(&img, &[1.0], &[0.5, 0.5], BorderPolicy::Zero).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(12, 9, 3, 0.37).unwrap();
        let out = gaussian_blur(&img, 1.3).unwrap();
        for v in out.data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let img = Image::new(4, 4, 1).unwrap();
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, f32::NAN).is_err());
    }

    #[test]
    fn blurred_impulse_is_a_normalized_gaussian() {
        let mut img = Image::new(31, 31, 1).unwrap();
        img.set(15, 15, 0, 1.0).unwrap();
        let out = gaussian_blur(&img, 1.5).unwrap();
        // Sampled 2-D Gaussian over the same support, normalized to sum 1.
        let radius = 5i32;
        let mut expected = vec![0.0f64; 31 * 31];
        let mut sum = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                expected[((15 + dy) * 31 + 15 + dx) as usize] = v;
                sum += v;
            }
        }
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((*a as f64 - b / sum).abs() < 1e-4);
        }
    }

    #[test]
    fn blur_reduces_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let img = random_image(&mut rng, 20, 17, 1);
            let out = gaussian_blur(&img, 1.0).unwrap();
            let var = |im: &Image| {
                let m = im.mean();
                im.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>()
            };
            assert!(var(&out) <= var(&img));
        }
    }

    #[test]
    fn box_filter_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 11, 6, 1);
        let out = box_filter(&img, 5).unwrap();
        let k = [0.2f32; 5];
        let oracle = dense_oracle(&img, &k, &k, BorderPolicy::Replicate);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn separable_equals_dense(
            w in 1usize..=16, h in 1usize..=16, seed in any::<u64>(),
            tx in prop::bool::ANY, ty in prop::bool::ANY,
            policy in prop::sample::select(vec![BorderPolicy::Replicate, BorderPolicy::Reflect, BorderPolicy::Zero]),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, w, h, 1);
            let kx: Vec<f32> = (0..if tx { 3 } else { 5 }).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ky: Vec<f32> = (0..if ty { 3 } else { 5 }).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = convolve_separable(&img, &kx, &ky, policy).unwrap();
            let oracle = dense_oracle(&img, &kx, &ky, policy);
            for (a, b) in out.data().iter().zip(&oracle) {
                prop_assert!((*a as f64 - b).abs() < 1e-5);
            }
        }

        #[test]
        fn blur_output_is_finite(w in 1usize..24, h in 1usize..24, sigma in 0.1f32..4.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, w, h, 3);
            let out = gaussian_blur(&img, sigma).unwrap();
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
        }
    }
}
