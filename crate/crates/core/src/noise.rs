//! Observation simulation: forward projection plus measurement noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::{Image, ParallelGeometry, Sinogram};
use crate::operator::forward_project;

/// Measurement noise model applied to clean projection data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    /// No corruption; the observation is exactly `A x`.
    None,
    /// Additive white Gaussian noise with standard deviation
    /// `rel_std * mean(|A x|)`, one level for the whole sinogram.
    Gaussian { rel_std: f64 },
    /// Low-intensity photon statistics: per-bin counts
    /// `k ~ Poisson(photons_per_pixel * exp(-mu_max * Ax))`, returned in the
    /// log domain as `-ln(max(k, 1) / photons_per_pixel) / mu_max`.
    /// Zero counts are clamped to one photon before the log.
    Poisson { photons_per_pixel: f64, mu_max: f64 },
}

impl NoiseModel {
    pub const DEFAULT_GAUSSIAN_REL_STD: f64 = 0.025;
    pub const DEFAULT_PHOTONS_PER_PIXEL: f64 = 4096.0;

    pub fn gaussian_default() -> Self {
        NoiseModel::Gaussian { rel_std: Self::DEFAULT_GAUSSIAN_REL_STD }
    }

    /// Default photon model for a geometry: `mu_max` is set so that unit
    /// attenuation along the longest chord (the inscribed-circle diameter)
    /// absorbs 99% of the photons.
    pub fn poisson_default(geom: &ParallelGeometry) -> Self {
        NoiseModel::Poisson {
            photons_per_pixel: Self::DEFAULT_PHOTONS_PER_PIXEL,
            mu_max: default_mu_max(geom),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { rel_std } => {
                if rel_std >= 0.0 {
                    Ok(())
                } else {
                    Err(TomoError::InvalidArgument("gaussian rel_std must be >= 0".into()))
                }
            }
            NoiseModel::Poisson { photons_per_pixel, mu_max } => {
                if photons_per_pixel > 0.0 && mu_max > 0.0 {
                    Ok(())
                } else {
                    Err(TomoError::InvalidArgument(
                        "poisson photons_per_pixel and mu_max must be > 0".into(),
                    ))
                }
            }
        }
    }

    /// Expected squared noise norm `E ||y - Ax||^2` for an observed sinogram,
    /// used by the discrepancy-principle stopping rule. For the photon model
    /// this is the delta-method variance `sum 1 / (mu^2 lambda_bin)` with
    /// `lambda_bin` estimated from the observation itself.
    pub fn expected_noise_power(&self, observed: &Sinogram) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { rel_std } => {
                let mean_abs =
                    observed.data.iter().map(|v| v.abs()).sum::<f64>() / observed.len() as f64;
                let sigma = rel_std * mean_abs;
                sigma * sigma * observed.len() as f64
            }
            NoiseModel::Poisson { photons_per_pixel, mu_max } => observed
                .data
                .iter()
                .map(|&y| {
                    let lambda = (photons_per_pixel * (-mu_max * y).exp()).max(1.0);
                    1.0 / (mu_max * mu_max * lambda)
                })
                .sum(),
        }
    }
}

/// `mu_max` such that `exp(-mu_max * diameter) = 0.01`.
pub fn default_mu_max(geom: &ParallelGeometry) -> f64 {
    (100.0f64).ln() / (geom.image_size as f64 * geom.pixel_spacing)
}

/// Project `x` and corrupt the projections. Deterministic for a given seed.
pub fn simulate_observation(
    x: &Image,
    geom: &ParallelGeometry,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Sinogram> {
    noise.validate()?;
    if let NoiseModel::Poisson { .. } = noise {
        if x.data.iter().any(|&v| v < 0.0) {
            return Err(TomoError::InvalidArgument(
                "poisson noise model requires a non-negative image".into(),
            ));
        }
    }
    let clean = forward_project(x, geom)?;
    apply_noise(&clean, noise, seed)
}

/// Corrupt an existing clean sinogram.
pub fn apply_noise(clean: &Sinogram, noise: &NoiseModel, seed: u64) -> Result<Sinogram> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = clean.clone();
    match *noise {
        NoiseModel::None => {}
        NoiseModel::Gaussian { rel_std } => {
            let mean_abs = clean.data.iter().map(|v| v.abs()).sum::<f64>() / clean.len() as f64;
            let sigma = rel_std * mean_abs;
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| TomoError::InvalidArgument(e.to_string()))?;
                for v in &mut out.data {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        NoiseModel::Poisson { photons_per_pixel, mu_max } => {
            for v in &mut out.data {
                let lambda = photons_per_pixel * (-mu_max * *v).exp();
                let k = Poisson::new(lambda)
                    .map_err(|e| TomoError::InvalidArgument(e.to_string()))?
                    .sample(&mut rng);
                *v = -(k.max(1.0) / photons_per_pixel).ln() / mu_max;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_phantom;

    #[test]
    fn none_is_exact_projection() {
        let geom = ParallelGeometry::covering(10, 47, 32).unwrap();
        let x = generate_phantom(1, 32, 6).unwrap();
        let y = simulate_observation(&x, &geom, &NoiseModel::None, 9).unwrap();
        let clean = forward_project(&x, &geom).unwrap();
        assert_eq!(y.data, clean.data);
    }

    #[test]
    fn gaussian_noise_level_matches_contract() {
        // Empirical sigma within 3% of 0.025 * mean |Ax| over >= 1e6 samples.
        let geom = ParallelGeometry::covering(30, 183, 64).unwrap();
        let x = generate_phantom(2, 64, 8).unwrap();
        let clean = forward_project(&x, &geom).unwrap();
        let mean_abs = clean.data.iter().map(|v| v.abs()).sum::<f64>() / clean.len() as f64;
        let target = 0.025 * mean_abs;
        let noise = NoiseModel::gaussian_default();
        let mut sq = 0.0;
        let mut n = 0usize;
        for seed in 0..200u64 {
            let y = apply_noise(&clean, &noise, seed).unwrap();
            for (a, b) in y.data.iter().zip(&clean.data) {
                sq += (a - b) * (a - b);
                n += 1;
            }
        }
        assert!(n >= 1_000_000, "only {n} samples");
        let sigma = (sq / n as f64).sqrt();
        assert!(
            (sigma - target).abs() <= 0.03 * target,
            "sigma {sigma} vs target {target}"
        );
    }

    #[test]
    fn poisson_mean_count_at_zero_attenuation() {
        // Zero image -> lambda = photons_per_pixel; mean recovered count
        // within 1% of 4096 over >= 1e5 bins.
        let geom = ParallelGeometry::new(200, 513, 1.0, 64, 1.0).unwrap();
        let x = Image::zeros(64, 64);
        let noise = NoiseModel::poisson_default(&geom);
        let (n0, mu) = match noise {
            NoiseModel::Poisson { photons_per_pixel, mu_max } => (photons_per_pixel, mu_max),
            _ => unreachable!(),
        };
        let y = simulate_observation(&x, &geom, &noise, 3).unwrap();
        assert!(y.len() >= 100_000, "only {} bins", y.len());
        let mean_count =
            y.data.iter().map(|&v| n0 * (-mu * v).exp()).sum::<f64>() / y.len() as f64;
        assert!(
            (mean_count - 4096.0).abs() <= 0.01 * 4096.0,
            "mean count {mean_count}"
        );
    }

    #[test]
    fn poisson_rejects_negative_image() {
        let geom = ParallelGeometry::covering(4, 12, 8).unwrap();
        let mut x = Image::zeros(8, 8);
        x.data[10] = -0.5;
        let noise = NoiseModel::poisson_default(&geom);
        assert!(simulate_observation(&x, &geom, &noise, 0).is_err());
    }

    #[test]
    fn poisson_log_bias_shrinks_with_photon_count() {
        // Constant phantom: the log-domain mean approaches the clean line
        // integrals as the photon count grows; 16x photons shrink the bias
        // by at least 3x.
        let geom = ParallelGeometry::covering(20, 91, 64).unwrap();
        let x = Image::from_vec(64, 64, vec![0.8; 64 * 64]).unwrap();
        let clean = forward_project(&x, &geom).unwrap();
        let mu = default_mu_max(&geom);
        let bias = |n0: f64, seeds: std::ops::Range<u64>| {
            let noise = NoiseModel::Poisson { photons_per_pixel: n0, mu_max: mu };
            let mut acc = 0.0;
            let mut n = 0usize;
            for seed in seeds {
                let y = apply_noise(&clean, &noise, seed).unwrap();
                for (a, b) in y.data.iter().zip(&clean.data) {
                    acc += a - b;
                    n += 1;
                }
            }
            (acc / n as f64).abs()
        };
        let b_low = bias(4096.0, 0..40);
        let b_high = bias(4096.0 * 16.0, 100..140);
        assert!(
            b_low >= 3.0 * b_high,
            "bias at 4096 photons {b_low} vs 16x {b_high}"
        );
    }
}
