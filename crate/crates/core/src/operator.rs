//! Discrete 2D parallel-beam Radon transform and its exact adjoint.
//!
//! The projector is Joseph's method: every ray is traversed along its driving
//! axis (the axis it crosses fastest), sampling the image by linear
//! interpolation in the other axis and weighting by the path length per step.
//! The backprojector scatters exactly the same weights, so the pair is an
//! exact matrix transpose of each other. Rays that miss the image contribute
//! zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::geometry::{norm2, Image, ParallelGeometry, Sinogram};

/// Fixed chunk width for the adjoint's partial-image accumulation. Constant
/// (not thread-count dependent) so results are bit-identical for any degree
/// of parallelism.
const ADJOINT_ANGLE_CHUNK: usize = 32;

struct RaySampler {
    cos_a: f64,
    sin_a: f64,
    x_driven: bool,
    /// Path length through one pixel step along the driving axis.
    step_len: f64,
}

impl RaySampler {
    fn new(angle: f64, pixel_spacing: f64) -> Self {
        let (sin_a, cos_a) = angle.sin_cos();
        let x_driven = sin_a.abs() >= cos_a.abs();
        let step_len = pixel_spacing / if x_driven { sin_a.abs() } else { cos_a.abs() };
        RaySampler { cos_a, sin_a, x_driven, step_len }
    }
}

#[inline]
fn center(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Visits every (pixel, weight) pair of one ray. `f(index0, w0, index1, w1,
/// has1)` is called once per driving-axis step that intersects the image;
/// weights already include the path length.
#[inline]
fn for_each_ray_sample<F: FnMut(usize, f64, usize, f64)>(
    sampler: &RaySampler,
    offset: f64,
    width: usize,
    height: usize,
    pixel_spacing: f64,
    mut f: F,
) {
    let cx = center(width);
    let cy = center(height);
    if sampler.x_driven {
        // Row coordinate as a function of the column's x position:
        // y(x) = (s - x cos) / sin.
        let inv_sin = 1.0 / sampler.sin_a;
        for c in 0..width {
            let x = (c as f64 - cx) * pixel_spacing;
            let y = (offset - x * sampler.cos_a) * inv_sin;
            let rr = y / pixel_spacing + cy;
            let r0 = rr.floor();
            let w1 = rr - r0;
            let r0i = r0 as isize;
            let w0 = (1.0 - w1) * sampler.step_len;
            let w1 = w1 * sampler.step_len;
            if r0i >= 0 && (r0i as usize) < height {
                let idx0 = r0i as usize * width + c;
                if r0i as usize + 1 < height {
                    f(idx0, w0, idx0 + width, w1);
                } else {
                    f(idx0, w0, idx0, 0.0);
                }
            } else if r0i == -1 {
                f(c, 0.0, c, w1);
            }
        }
    } else {
        let inv_cos = 1.0 / sampler.cos_a;
        for r in 0..height {
            let y = (r as f64 - cy) * pixel_spacing;
            let x = (offset - y * sampler.sin_a) * inv_cos;
            let cc = x / pixel_spacing + cx;
            let c0 = cc.floor();
            let w1 = cc - c0;
            let c0i = c0 as isize;
            let w0 = (1.0 - w1) * sampler.step_len;
            let w1 = w1 * sampler.step_len;
            if c0i >= 0 && (c0i as usize) < width {
                let idx0 = r * width + c0i as usize;
                if c0i as usize + 1 < width {
                    f(idx0, w0, idx0 + 1, w1);
                } else {
                    f(idx0, w0, idx0, 0.0);
                }
            } else if c0i == -1 {
                f(r * width, 0.0, r * width, w1);
            }
        }
    }
}

/// Raw forward projection of a `width x height` grid into `out`
/// (`n_angles * n_detectors`, row-major by angle).
pub fn forward_project_into(
    img: &[f64],
    width: usize,
    height: usize,
    geom: &ParallelGeometry,
    out: &mut [f64],
) {
    debug_assert_eq!(img.len(), width * height);
    debug_assert_eq!(out.len(), geom.sinogram_len());
    out.par_chunks_mut(geom.n_detectors)
        .zip(geom.angles.par_iter())
        .for_each(|(row, &angle)| {
            let sampler = RaySampler::new(angle, geom.pixel_spacing);
            for (i, slot) in row.iter_mut().enumerate() {
                let s = geom.detector_offset(i);
                let mut acc = 0.0;
                for_each_ray_sample(&sampler, s, width, height, geom.pixel_spacing, |i0, w0, i1, w1| {
                    acc += w0 * img[i0] + w1 * img[i1];
                });
                *slot = acc;
            }
        });
}

/// Raw adjoint: scatters `sino` back into a `width x height` grid with the
/// transposed weights of [`forward_project_into`]. Accumulation order is
/// fixed, so the output does not depend on the number of worker threads.
pub fn back_project_into(
    sino: &[f64],
    geom: &ParallelGeometry,
    width: usize,
    height: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(sino.len(), geom.sinogram_len());
    debug_assert_eq!(out.len(), width * height);
    let chunks: Vec<Vec<f64>> = geom
        .angles
        .par_chunks(ADJOINT_ANGLE_CHUNK)
        .enumerate()
        .map(|(chunk_idx, angles)| {
            let mut partial = vec![0.0; width * height];
            let base = chunk_idx * ADJOINT_ANGLE_CHUNK;
            for (k, &angle) in angles.iter().enumerate() {
                let sampler = RaySampler::new(angle, geom.pixel_spacing);
                let row = &sino[(base + k) * geom.n_detectors..(base + k + 1) * geom.n_detectors];
                for (i, &v) in row.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let s = geom.detector_offset(i);
                    for_each_ray_sample(
                        &sampler,
                        s,
                        width,
                        height,
                        geom.pixel_spacing,
                        |i0, w0, i1, w1| {
                            partial[i0] += w0 * v;
                            partial[i1] += w1 * v;
                        },
                    );
                }
            }
            partial
        })
        .collect();
    out.fill(0.0);
    for partial in chunks {
        for (o, p) in out.iter_mut().zip(&partial) {
            *o += p;
        }
    }
}

/// Forward Radon transform `A x`.
pub fn forward_project(image: &Image, geom: &ParallelGeometry) -> Result<Sinogram> {
    if image.width != geom.image_size || image.height != geom.image_size {
        return Err(TomoError::shape(
            "forward_project",
            format!("{0}x{0}", geom.image_size),
            format!("{}x{}", image.width, image.height),
        ));
    }
    let mut out = Sinogram::zeros(geom.n_angles, geom.n_detectors);
    forward_project_into(&image.data, image.width, image.height, geom, &mut out.data);
    Ok(out)
}

/// Exact adjoint `A^T y` of [`forward_project`].
pub fn back_project(sino: &Sinogram, geom: &ParallelGeometry) -> Result<Image> {
    if !sino.matches(geom) {
        return Err(TomoError::shape(
            "back_project",
            format!("{}x{}", geom.n_angles, geom.n_detectors),
            format!("{}x{}", sino.n_angles, sino.n_detectors),
        ));
    }
    let mut out = Image::zeros(geom.image_size, geom.image_size);
    back_project_into(&sino.data, geom, out.width, out.height, &mut out.data);
    Ok(out)
}

/// Power-iteration estimate of the operator 2-norm of `A`.
///
/// Deterministic for a given seed; `iters` iterations of `v <- A^T A v`
/// normalization, returning `||A v||` for the final unit `v`.
pub fn operator_norm(geom: &ParallelGeometry, iters: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..geom.image_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    operator_norm_with_start(geom, iters, v)
}

/// Power iteration from an explicit start vector. The estimate is invariant
/// under rescaling of the start vector (it is normalized every step).
pub fn operator_norm_with_start(
    geom: &ParallelGeometry,
    iters: usize,
    mut v: Vec<f64>,
) -> Result<f64> {
    if iters == 0 {
        return Err(TomoError::InvalidArgument("operator_norm requires iters >= 1".into()));
    }
    if v.len() != geom.image_len() {
        return Err(TomoError::shape("operator_norm", geom.image_len(), v.len()));
    }
    let nv = norm2(&v);
    if nv == 0.0 {
        return Err(TomoError::InvalidArgument("start vector must be nonzero".into()));
    }
    for x in &mut v {
        *x /= nv;
    }
    let mut av = vec![0.0; geom.sinogram_len()];
    let mut atav = vec![0.0; geom.image_len()];
    let mut estimate = 0.0;
    for _ in 0..iters {
        forward_project_into(&v, geom.image_size, geom.image_size, geom, &mut av);
        estimate = norm2(&av);
        back_project_into(&av, geom, geom.image_size, geom.image_size, &mut atav);
        let scale = norm2(&atav);
        if scale == 0.0 {
            return Ok(0.0);
        }
        for (vi, ai) in v.iter_mut().zip(&atav) {
            *vi = ai / scale;
        }
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dot;
    use approx::assert_relative_eq;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Disk with a two-pixel antialiased rim, value 1 inside, half value at
    /// distance `radius`.
    pub(crate) fn soft_disk(size: usize, radius: f64) -> Image {
        let c = center(size);
        let mut img = Image::zeros(size, size);
        for r in 0..size {
            for col in 0..size {
                let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
                img.data[r * size + col] = ((radius - d) / 2.0 + 0.5).clamp(0.0, 1.0);
            }
        }
        img
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let geom = ParallelGeometry::covering(12, 12, 8).unwrap();
        let sino = forward_project(&Image::zeros(8, 8), &geom).unwrap();
        assert!(sino.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sinogram_backprojects_to_zero() {
        let geom = ParallelGeometry::covering(12, 12, 8).unwrap();
        let img = back_project(&Sinogram::zeros(12, 12), &geom).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_ray_through_disk_measures_chord() {
        let size = 64;
        let radius = 20.0;
        let geom = ParallelGeometry::new(4, 91, 1.0, size, 1.0).unwrap();
        let disk = soft_disk(size, radius);
        let sino = forward_project(&disk, &geom).unwrap();
        let center_bin = geom.n_detectors / 2;
        for a in 0..geom.n_angles {
            let v = sino.at(a, center_bin);
            let chord = 2.0 * radius;
            assert!(
                (v - chord).abs() <= 0.02 * chord,
                "angle {a}: chord {v} vs {chord}"
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let geom = ParallelGeometry::covering(12, 12, 8).unwrap();
        assert!(forward_project(&Image::zeros(9, 9), &geom).is_err());
        assert!(back_project(&Sinogram::zeros(12, 11), &geom).is_err());
    }

    #[test]
    fn adjoint_identity_holds() {
        let geom = ParallelGeometry::covering(10, 23, 16).unwrap();
        for seed in 0..20 {
            let x = rand_vec(geom.image_len(), seed);
            let y = rand_vec(geom.sinogram_len(), 1000 + seed);
            let mut ax = vec![0.0; geom.sinogram_len()];
            forward_project_into(&x, 16, 16, &geom, &mut ax);
            let mut aty = vec![0.0; geom.image_len()];
            back_project_into(&y, &geom, 16, 16, &mut aty);
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &aty);
            let scale = norm2(&ax) * norm2(&y);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * scale.max(1e-30),
                "seed {seed}: <Ax,y>={lhs} <x,Aty>={rhs}"
            );
        }
    }

    #[test]
    fn forward_is_linear() {
        let geom = ParallelGeometry::covering(7, 23, 16).unwrap();
        let x1 = rand_vec(geom.image_len(), 1);
        let x2 = rand_vec(geom.image_len(), 2);
        let (a, b) = (1.7, -0.4);
        let combo: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let mut s1 = vec![0.0; geom.sinogram_len()];
        let mut s2 = vec![0.0; geom.sinogram_len()];
        let mut sc = vec![0.0; geom.sinogram_len()];
        forward_project_into(&x1, 16, 16, &geom, &mut s1);
        forward_project_into(&x2, 16, 16, &geom, &mut s2);
        forward_project_into(&combo, 16, 16, &geom, &mut sc);
        for i in 0..sc.len() {
            assert_relative_eq!(sc[i], a * s1[i] + b * s2[i], max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn disk_sinogram_rows_are_rotation_invariant() {
        let size = 64;
        let geom = ParallelGeometry::covering(24, 91, size).unwrap();
        let sino = forward_project(&soft_disk(size, 22.0), &geom).unwrap();
        let peak = sino.data.iter().cloned().fold(0.0, f64::max);
        let row0 = sino.row(0).to_vec();
        for a in 1..geom.n_angles {
            let row = sino.row(a);
            let dev = row
                .iter()
                .zip(&row0)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            assert!(dev <= 0.01 * peak, "angle {a}: deviation {dev} vs peak {peak}");
        }
    }

    #[test]
    fn operator_norm_degenerate_single_pixel() {
        let geom = ParallelGeometry::new(1, 1, 1.0, 1, 1.0).unwrap();
        let n = operator_norm(&geom, 10, 0).unwrap();
        // One ray straight through the single pixel: path length = pixel size.
        assert_relative_eq!(n, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn operator_norm_is_scale_free_and_deterministic() {
        let geom = ParallelGeometry::covering(10, 23, 16).unwrap();
        assert_eq!(
            operator_norm(&geom, 30, 7).unwrap(),
            operator_norm(&geom, 30, 7).unwrap()
        );
        let v = rand_vec(geom.image_len(), 3);
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let n1 = operator_norm_with_start(&geom, 25, v).unwrap();
        let n2 = operator_norm_with_start(&geom, 25, doubled).unwrap();
        assert_relative_eq!(n1, n2, max_relative = 1e-12);
    }
}
