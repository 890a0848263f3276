//! Dense-matrix oracles for the projector pair.
//!
//! The forward operator is assembled column by column from unit-pixel
//! projections into an explicit matrix, which then serves as an independent
//! reference for the forward map, the adjoint, and the operator norm.

use nalgebra::DMatrix;
use tomo_core::geometry::{Image, ParallelGeometry, Sinogram};
use tomo_core::operator::{
    back_project, forward_project, forward_project_into, operator_norm,
};

fn oracle_geometry() -> ParallelGeometry {
    ParallelGeometry::covering(10, 23, 16).unwrap()
}

/// Assemble the dense operator matrix (rows: sinogram bins, cols: pixels).
fn assemble_dense(geom: &ParallelGeometry) -> DMatrix<f64> {
    let n = geom.image_len();
    let m = geom.sinogram_len();
    let mut a = DMatrix::zeros(m, n);
    let size = geom.image_size;
    let mut unit = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        unit[j] = 1.0;
        forward_project_into(&unit, size, size, geom, &mut col);
        for i in 0..m {
            a[(i, j)] = col[i];
        }
        unit[j] = 0.0;
    }
    a
}

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn forward_matches_dense_matrix_product() {
    let geom = oracle_geometry();
    let a = assemble_dense(&geom);
    for seed in 0..5 {
        let x = rand_vec(geom.image_len(), seed);
        let img = Image::from_vec(16, 16, x.clone()).unwrap();
        let sino = forward_project(&img, &geom).unwrap();
        let xv = nalgebra::DVector::from_vec(x);
        let expected = &a * &xv;
        let max_diff = sino
            .data
            .iter()
            .zip(expected.iter())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-10, "seed {seed}: max diff {max_diff}");
    }
}

#[test]
fn adjoint_matches_dense_transpose_product() {
    let geom = oracle_geometry();
    let a = assemble_dense(&geom);
    for seed in 0..5 {
        let y = rand_vec(geom.sinogram_len(), 100 + seed);
        let sino = Sinogram::from_vec(geom.n_angles, geom.n_detectors, y.clone()).unwrap();
        let img = back_project(&sino, &geom).unwrap();
        let yv = nalgebra::DVector::from_vec(y);
        let expected = a.transpose() * &yv;
        let max_diff = img
            .data
            .iter()
            .zip(expected.iter())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-10, "seed {seed}: max diff {max_diff}");
    }
}

#[test]
fn operator_norm_matches_dense_svd() {
    let geom = oracle_geometry();
    let a = assemble_dense(&geom);
    let svd = a.svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let estimate = operator_norm(&geom, 60, 1).unwrap();
    assert!(
        (estimate - sigma_max).abs() <= 0.01 * sigma_max,
        "power iteration {estimate} vs svd {sigma_max}"
    );
}
