//! Dataset construction and on-disk layout.
//!
//! A dataset is an ordered collection of (ground truth, observation) pairs
//! over one shared geometry and noise model. Every pair derives its RNG
//! streams from `(seed, split, index)`, so splits are independent and any
//! pair can be regenerated in isolation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::{Image, ParallelGeometry, Sinogram};
use crate::io;
use crate::noise::{default_mu_max, NoiseModel};
use crate::phantom::generate_phantom;

pub const DEFAULT_MAX_ELLIPSES: usize = 10;

/// One ground truth / observation pair.
#[derive(Debug, Clone)]
pub struct DataPair {
    pub ground_truth: Image,
    pub observation: Sinogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetProfile {
    /// 128x128 ellipse phantoms, 30 angles, 183 detector bins, Gaussian
    /// noise at 2.5% of the mean absolute projection value.
    Ellipses,
    /// Photon-statistics profile on synthetic phantoms: desk scale is
    /// 128x128 with 200 angles and 257 bins; the full-scale variant is
    /// 362x362 with 1000 angles and 513 bins.
    LodopabLike,
}

impl DatasetProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ellipses" => Ok(DatasetProfile::Ellipses),
            "lodopab-like" => Ok(DatasetProfile::LodopabLike),
            other => Err(TomoError::InvalidArgument(format!("unknown profile '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetProfile::Ellipses => "ellipses",
            DatasetProfile::LodopabLike => "lodopab-like",
        }
    }

    pub fn default_geometry(&self) -> ParallelGeometry {
        match self {
            DatasetProfile::Ellipses => ParallelGeometry::covering(30, 183, 128).unwrap(),
            DatasetProfile::LodopabLike => ParallelGeometry::covering(200, 257, 128).unwrap(),
        }
    }

    /// Full-scale variant of the photon profile (ellipses is unchanged).
    pub fn full_scale_geometry(&self) -> ParallelGeometry {
        match self {
            DatasetProfile::Ellipses => self.default_geometry(),
            DatasetProfile::LodopabLike => ParallelGeometry::covering(1000, 513, 362).unwrap(),
        }
    }

    pub fn default_noise(&self, geom: &ParallelGeometry) -> NoiseModel {
        match self {
            DatasetProfile::Ellipses => NoiseModel::gaussian_default(),
            DatasetProfile::LodopabLike => NoiseModel::Poisson {
                photons_per_pixel: NoiseModel::DEFAULT_PHOTONS_PER_PIXEL,
                mu_max: default_mu_max(geom),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn id(&self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

/// In-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub geometry: ParallelGeometry,
    pub noise: NoiseModel,
    pub seed: u64,
    pub profile: DatasetProfile,
    pub max_ellipses: usize,
    pub train: Vec<DataPair>,
    pub validation: Vec<DataPair>,
    pub test: Vec<DataPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[DataPair] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// splitmix64 round; the standard 64-bit mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for `(base, split, index, purpose)`.
pub fn derive_seed(base: u64, split: Split, index: usize, purpose: u64) -> u64 {
    let mut s = splitmix64(base ^ 0xA076_1D64_78BD_642F);
    s = splitmix64(s ^ split.id());
    s = splitmix64(s ^ index as u64);
    splitmix64(s ^ purpose)
}

const PURPOSE_PHANTOM: u64 = 1;
const PURPOSE_NOISE: u64 = 2;

/// Generate the pair `(split, index)` of a dataset.
pub fn generate_pair(
    geom: &ParallelGeometry,
    noise: &NoiseModel,
    seed: u64,
    max_ellipses: usize,
    split: Split,
    index: usize,
) -> Result<DataPair> {
    let gt = generate_phantom(
        derive_seed(seed, split, index, PURPOSE_PHANTOM),
        geom.image_size,
        max_ellipses,
    )?;
    let observation = crate::noise::simulate_observation(
        &gt,
        geom,
        noise,
        derive_seed(seed, split, index, PURPOSE_NOISE),
    )?;
    Ok(DataPair { ground_truth: gt, observation })
}

/// Build a dataset with `n_train`/`n_val`/`n_test` pairs of the profile's
/// default geometry and noise model.
pub fn make_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    profile: DatasetProfile,
    seed: u64,
) -> Result<Dataset> {
    let geom = profile.default_geometry();
    let noise = profile.default_noise(&geom);
    make_dataset_with(n_train, n_val, n_test, profile, geom, noise, seed, DEFAULT_MAX_ELLIPSES)
}

#[allow(clippy::too_many_arguments)]
pub fn make_dataset_with(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    profile: DatasetProfile,
    geometry: ParallelGeometry,
    noise: NoiseModel,
    seed: u64,
    max_ellipses: usize,
) -> Result<Dataset> {
    let gen_split = |split: Split, n: usize| -> Result<Vec<DataPair>> {
        (0..n)
            .map(|i| generate_pair(&geometry, &noise, seed, max_ellipses, split, i))
            .collect()
    };
    Ok(Dataset {
        train: gen_split(Split::Train, n_train)?,
        validation: gen_split(Split::Validation, n_val)?,
        test: gen_split(Split::Test, n_test)?,
        geometry,
        noise,
        seed,
        profile,
        max_ellipses,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub profile: DatasetProfile,
    pub geometry: ParallelGeometry,
    pub noise: NoiseModel,
    pub seed: u64,
    pub max_ellipses: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

fn pair_paths(dir: &Path, split: Split, index: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{}_{index:05}_gt.bin", split.name())),
        dir.join(format!("{}_{index:05}_obs.bin", split.name())),
    )
}

/// Persist a dataset as `manifest.json` plus per-pair binary files.
pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        profile: ds.profile,
        geometry: ds.geometry.clone(),
        noise: ds.noise,
        seed: ds.seed,
        max_ellipses: ds.max_ellipses,
        n_train: ds.train.len(),
        n_validation: ds.validation.len(),
        n_test: ds.test.len(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TomoError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    for split in Split::ALL {
        for (i, pair) in ds.split(split).iter().enumerate() {
            let (gt_path, obs_path) = pair_paths(dir, split, i);
            io::write_image(gt_path, &pair.ground_truth)?;
            io::write_sinogram(obs_path, &pair.observation)?;
        }
    }
    Ok(())
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.as_ref().join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| TomoError::Format(e.to_string()))
}

pub fn load_pair(dir: impl AsRef<Path>, split: Split, index: usize) -> Result<DataPair> {
    let (gt_path, obs_path) = pair_paths(dir.as_ref(), split, index);
    Ok(DataPair {
        ground_truth: io::read_image(gt_path)?,
        observation: io::read_sinogram(obs_path)?,
    })
}

/// Load a persisted dataset back into memory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let load_split = |split: Split, n: usize| -> Result<Vec<DataPair>> {
        (0..n).map(|i| load_pair(dir, split, i)).collect()
    };
    Ok(Dataset {
        train: load_split(Split::Train, manifest.n_train)?,
        validation: load_split(Split::Validation, manifest.n_validation)?,
        test: load_split(Split::Test, manifest.n_test)?,
        geometry: manifest.geometry,
        noise: manifest.noise,
        seed: manifest.seed,
        profile: manifest.profile,
        max_ellipses: manifest.max_ellipses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn split_sizes_match_request() {
        let ds = make_dataset_small(4, 2, 3);
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.validation.len(), 2);
        assert_eq!(ds.test.len(), 3);
    }

    fn make_dataset_small(n_train: usize, n_val: usize, n_test: usize) -> Dataset {
        let geom = ParallelGeometry::covering(10, 47, 32).unwrap();
        make_dataset_with(
            n_train,
            n_val,
            n_test,
            DatasetProfile::Ellipses,
            geom.clone(),
            NoiseModel::gaussian_default(),
            7,
            8,
        )
        .unwrap()
    }

    #[test]
    fn empty_train_split_is_valid() {
        let ds = make_dataset_small(0, 0, 2);
        assert!(ds.train.is_empty());
        assert_eq!(ds.test.len(), 2);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = make_dataset_small(2, 1, 2);
        let b = make_dataset_small(2, 1, 2);
        for (pa, pb) in a.test.iter().zip(&b.test) {
            assert_eq!(pa.ground_truth.data, pb.ground_truth.data);
            assert_eq!(pa.observation.data, pb.observation.data);
        }
    }

    #[test]
    fn splits_use_independent_streams() {
        // The test split is identical whether or not other splits exist.
        let with_all = make_dataset_small(3, 2, 2);
        let test_only = make_dataset_small(0, 0, 2);
        for (pa, pb) in with_all.test.iter().zip(&test_only.test) {
            assert_eq!(pa.ground_truth.data, pb.ground_truth.data);
            assert_eq!(pa.observation.data, pb.observation.data);
        }
        // And the same index in different splits differs.
        assert_ne!(
            with_all.train[0].ground_truth.data,
            with_all.test[0].ground_truth.data
        );
    }

    #[test]
    fn ellipses_profile_matches_published_shape() {
        let geom = DatasetProfile::Ellipses.default_geometry();
        assert_eq!(geom.n_angles, 30);
        assert_eq!(geom.n_detectors, 183);
        assert_eq!(geom.image_size, 128);
        let ds = make_dataset(1, 1, 0, DatasetProfile::Ellipses, 3).unwrap();
        assert!(matches!(ds.noise, NoiseModel::Gaussian { rel_std } if rel_std == 0.025));
    }

    #[test]
    fn lodopab_like_full_scale_shape() {
        let geom = DatasetProfile::LodopabLike.full_scale_geometry();
        assert_eq!((geom.n_angles, geom.n_detectors, geom.image_size), (1000, 513, 362));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempdir().unwrap();
        let ds = make_dataset_small(1, 1, 1);
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train.len(), 1);
        assert_eq!(back.geometry, ds.geometry);
        // Disk format is f32; compare after the same truncation.
        for (a, b) in back.test[0].observation.data.iter().zip(&ds.test[0].observation.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
