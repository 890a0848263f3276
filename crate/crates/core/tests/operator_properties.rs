//! Property tests for the projector pair and metrics.

use proptest::prelude::*;
use tomo_core::geometry::{Image, ParallelGeometry};
use tomo_core::metrics::{psnr, ssim};
use tomo_core::operator::{back_project_into, forward_project_into};

fn geom() -> ParallelGeometry {
    ParallelGeometry::covering(12, 23, 16).unwrap()
}

fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity(
        x in proptest::collection::vec(-1.0f64..1.0, 256),
        y in proptest::collection::vec(-1.0f64..1.0, 12 * 23),
    ) {
        let g = geom();
        let mut ax = vec![0.0; g.sinogram_len()];
        forward_project_into(&x, 16, 16, &g, &mut ax);
        let mut aty = vec![0.0; g.image_len()];
        back_project_into(&y, &g, 16, 16, &mut aty);
        let lhs = dot_slices(&ax, &y);
        let rhs = dot_slices(&x, &aty);
        let scale = dot_slices(&ax, &ax).sqrt() * dot_slices(&y, &y).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * scale.max(1e-12));
    }

    #[test]
    fn forward_linearity(
        x1 in proptest::collection::vec(-1.0f64..1.0, 256),
        x2 in proptest::collection::vec(-1.0f64..1.0, 256),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let g = geom();
        let combo: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let mut s1 = vec![0.0; g.sinogram_len()];
        let mut s2 = vec![0.0; g.sinogram_len()];
        let mut sc = vec![0.0; g.sinogram_len()];
        forward_project_into(&x1, 16, 16, &g, &mut s1);
        forward_project_into(&x2, 16, 16, &g, &mut s2);
        forward_project_into(&combo, 16, 16, &g, &mut sc);
        for i in 0..sc.len() {
            let want = a * s1[i] + b * s2[i];
            prop_assert!((sc[i] - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn metric_symmetries(
        raw in proptest::collection::vec(0.0f64..1.0, 64),
    ) {
        // psnr/ssim invariance under a joint flip of both images.
        let mut gt_data = raw.clone();
        gt_data[0] = 0.0;
        gt_data[1] = 1.0;
        let gt = Image::from_vec(8, 8, gt_data).unwrap();
        let x = Image::from_vec(8, 8, raw.iter().map(|v| (v * 0.9) + 0.05).collect()).unwrap();
        let flip = |img: &Image| {
            Image::from_vec(8, 8, img.data.iter().rev().cloned().collect()).unwrap()
        };
        let p1 = psnr(&x, &gt).unwrap();
        let p2 = psnr(&flip(&x), &flip(&gt)).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
        let s1 = ssim(&x, &gt).unwrap();
        let s2 = ssim(&flip(&x), &flip(&gt)).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-9);
    }
}
