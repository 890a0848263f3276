//! Image quality metrics: PSNR and SSIM.

use crate::error::{Result, TomoError};
use crate::geometry::Image;

/// Cap reported for perfect reconstructions so reports stay finite.
pub const PSNR_CAP_DB: f64 = 200.0;

const SSIM_WINDOW: usize = 7;

fn check_same_shape(x: &Image, gt: &Image, context: &'static str) -> Result<()> {
    if x.width != gt.width || x.height != gt.height {
        return Err(TomoError::shape(
            context,
            format!("{}x{}", gt.width, gt.height),
            format!("{}x{}", x.width, x.height),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with the data range taken from the
/// ground truth. Identical inputs report the finite cap [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, gt: &Image) -> Result<f64> {
    check_same_shape(x, gt, "psnr")?;
    let (lo, hi) = gt.range();
    let range = hi - lo;
    if range <= 0.0 {
        return Err(TomoError::InvalidArgument(
            "psnr: ground truth is constant, data range undefined".into(),
        ));
    }
    let mse = x
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP_DB))
}

/// Structural similarity with a 7x7 uniform window, C1 = (0.01 R)^2,
/// C2 = (0.03 R)^2, R from the ground-truth range, averaged over windows
/// fully inside the image.
pub fn ssim(x: &Image, gt: &Image) -> Result<f64> {
    check_same_shape(x, gt, "ssim")?;
    if x.width < SSIM_WINDOW || x.height < SSIM_WINDOW {
        return Err(TomoError::InvalidArgument(format!(
            "ssim: image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let (lo, hi) = gt.range();
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);

    let w = x.width;
    let h = x.height;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(h - SSIM_WINDOW) {
        for left in 0..=(w - SSIM_WINDOW) {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for r in top..top + SSIM_WINDOW {
                for c in left..left + SSIM_WINDOW {
                    let a = x.data[r * w + c];
                    let b = gt.data[r * w + c];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = (sxx / n - mx * mx).max(0.0);
            let vy = (syy / n - my * my).max(0.0);
            let cxy = sxy / n - mx * my;
            let score = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += score;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gradient_image(size: usize) -> Image {
        // Column ramp with range exactly 1.
        Image::from_vec(
            size,
            size,
            (0..size * size)
                .map(|i| (i % size) as f64 / (size - 1) as f64)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_images_hit_psnr_cap_and_ssim_one() {
        let img = gradient_image(16);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
        assert_relative_eq!(ssim(&img, &img).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn psnr_closed_form() {
        // Range 1, MSE 0.01 -> 20 dB.
        let size = 32;
        let gt = gradient_image(size);
        let x = Image::from_vec(size, size, gt.data.iter().map(|v| v + 0.1).collect()).unwrap();
        assert_relative_eq!(psnr(&x, &gt).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_of_noisy_image_matches_sigma() {
        // N(0, 0.1^2) noise on a range-1 image: 20 dB +- 0.2 at 128x128.
        let size = 128;
        let gt = gradient_image(size);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = Image::from_vec(
            size,
            size,
            gt.data
                .iter()
                .map(|v| {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    v + 0.1 * (-2.0 * u1.ln()).sqrt() * u2.cos()
                })
                .collect(),
        )
        .unwrap();
        let p = psnr(&noisy, &gt).unwrap();
        assert!((p - 20.0).abs() < 0.2, "psnr {p}");
    }

    #[test]
    fn constant_ground_truth_is_an_error() {
        let gt = Image::from_vec(8, 8, vec![0.3; 64]).unwrap();
        assert!(psnr(&gt.clone(), &gt).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = gradient_image(8);
        let b = gradient_image(9);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_is_symmetric() {
        // Equal-range pair, so the range-derived constants match both ways.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut av: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
        av[0] = 0.0;
        av[1] = 1.0;
        let a = Image::from_vec(16, 16, av).unwrap();
        let b = Image::from_vec(16, 16, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s1 = ssim(&b, &a).unwrap();
        let s2 = ssim(&a, &b).unwrap();
        assert_relative_eq!(s1, s2, epsilon = 1e-12);
    }

    #[test]
    fn inverted_checkerboard_scores_low() {
        let size = 16;
        let gt = Image::from_vec(
            size,
            size,
            (0..size * size)
                .map(|i| (((i / size) + (i % size)) % 2) as f64)
                .collect(),
        )
        .unwrap();
        let inv = Image::from_vec(size, size, gt.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&inv, &gt).unwrap();
        assert!(s < 0.2, "ssim {s}");
    }

    #[test]
    fn metrics_invariant_under_joint_permutation() {
        let size = 16;
        let gt = gradient_image(size);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Image::from_vec(
            size,
            size,
            gt.data.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect(),
        )
        .unwrap();
        // Joint transpose of both inputs.
        let t = |img: &Image| {
            let mut out = Image::zeros(size, size);
            for r in 0..size {
                for c in 0..size {
                    out.data[c * size + r] = img.data[r * size + c];
                }
            }
            out
        };
        assert_relative_eq!(
            psnr(&x, &gt).unwrap(),
            psnr(&t(&x), &t(&gt)).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ssim(&x, &gt).unwrap(),
            ssim(&t(&x), &t(&gt)).unwrap(),
            epsilon = 1e-12
        );
    }
}
