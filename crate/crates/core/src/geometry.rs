//! Discretization of the parallel-beam acquisition: scan geometry and the
//! dense image / sinogram grids it relates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};

/// Parallel-beam scan geometry.
///
/// Angles are equispaced in `[0, pi)`. The detector array is centered on the
/// rotation axis: bin `i` sits at offset `(i - (n_detectors - 1) / 2) *
/// detector_spacing`. Images are square, `image_size` pixels per side, with
/// pixel centers laid out symmetrically around the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelGeometry {
    pub n_angles: usize,
    pub n_detectors: usize,
    /// Projection angles in radians, strictly increasing, all in `[0, pi)`.
    pub angles: Vec<f64>,
    /// Detector bin width in length units.
    pub detector_spacing: f64,
    /// Square image side length in pixels.
    pub image_size: usize,
    /// Pixel side length in length units.
    pub pixel_spacing: f64,
}

impl ParallelGeometry {
    /// Geometry with `n_angles` equispaced angles in `[0, pi)`.
    pub fn new(
        n_angles: usize,
        n_detectors: usize,
        detector_spacing: f64,
        image_size: usize,
        pixel_spacing: f64,
    ) -> Result<Self> {
        if n_angles == 0 || n_detectors == 0 || image_size == 0 {
            return Err(TomoError::InvalidArgument(
                "geometry counts must be positive".into(),
            ));
        }
        let angles = (0..n_angles)
            .map(|a| a as f64 * std::f64::consts::PI / n_angles as f64)
            .collect();
        Self::with_angles(angles, n_detectors, detector_spacing, image_size, pixel_spacing)
    }

    /// Geometry with explicit angles; validates the angle invariants.
    pub fn with_angles(
        angles: Vec<f64>,
        n_detectors: usize,
        detector_spacing: f64,
        image_size: usize,
        pixel_spacing: f64,
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(TomoError::InvalidArgument("need at least one angle".into()));
        }
        if !(detector_spacing > 0.0) || !(pixel_spacing > 0.0) {
            return Err(TomoError::InvalidArgument("spacings must be positive".into()));
        }
        for w in angles.windows(2) {
            if !(w[0] < w[1]) {
                return Err(TomoError::InvalidArgument(
                    "angles must be strictly increasing".into(),
                ));
            }
        }
        if angles[0] < 0.0 || *angles.last().unwrap() >= std::f64::consts::PI {
            return Err(TomoError::InvalidArgument(
                "angles must lie in [0, pi)".into(),
            ));
        }
        let geom = ParallelGeometry {
            n_angles: angles.len(),
            n_detectors,
            angles,
            detector_spacing,
            image_size,
            pixel_spacing,
        };
        let span = geom.n_detectors as f64 * geom.detector_spacing;
        let diagonal = std::f64::consts::SQRT_2 * geom.image_size as f64 * geom.pixel_spacing;
        if span < diagonal * (1.0 - 1e-12) {
            log::warn!(
                "detector span {span:.3} does not cover the image diagonal {diagonal:.3}; \
                 outer image corners will be truncated"
            );
        }
        Ok(geom)
    }

    /// Geometry whose detector span exactly covers the image diagonal.
    pub fn covering(n_angles: usize, n_detectors: usize, image_size: usize) -> Result<Self> {
        let diagonal = std::f64::consts::SQRT_2 * image_size as f64;
        Self::new(n_angles, n_detectors, diagonal / n_detectors as f64, image_size, 1.0)
    }

    /// Detector offset of bin `i` from the rotation axis.
    pub fn detector_offset(&self, i: usize) -> f64 {
        (i as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub fn sinogram_len(&self) -> usize {
        self.n_angles * self.n_detectors
    }

    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// Dense square image, row-major, attenuation per length unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(TomoError::shape("Image::from_vec", width * height, data.len()));
        }
        Ok(Image { width, height, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.data[row * self.width + col]
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TomoError::NonFinite(context.into()))
        }
    }

    /// Value range `(min, max)`; `(0, 0)` for an empty image.
    pub fn range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }
}

/// Dense sinogram, row-major with one row per angle, line-integral units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_angles: usize,
    pub n_detectors: usize,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        Sinogram { n_angles, n_detectors, data: vec![0.0; n_angles * n_detectors] }
    }

    pub fn from_vec(n_angles: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_angles * n_detectors {
            return Err(TomoError::shape(
                "Sinogram::from_vec",
                n_angles * n_detectors,
                data.len(),
            ));
        }
        Ok(Sinogram { n_angles, n_detectors, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, angle: usize, detector: usize) -> f64 {
        self.data[angle * self.n_detectors + detector]
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        &self.data[angle * self.n_detectors..(angle + 1) * self.n_detectors]
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TomoError::NonFinite(context.into()))
        }
    }

    pub fn matches(&self, geom: &ParallelGeometry) -> bool {
        self.n_angles == geom.n_angles && self.n_detectors == geom.n_detectors
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equispaced_angles_cover_half_turn() {
        let g = ParallelGeometry::new(30, 183, 1.0, 128, 1.0).unwrap();
        assert_eq!(g.angles.len(), 30);
        assert!(g.angles[0] == 0.0);
        assert!(*g.angles.last().unwrap() < std::f64::consts::PI);
        let step = g.angles[1] - g.angles[0];
        for w in g.angles.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn detector_array_is_centered() {
        let g = ParallelGeometry::new(10, 5, 2.0, 16, 1.0).unwrap();
        assert_eq!(g.detector_offset(2), 0.0);
        assert_eq!(g.detector_offset(0), -4.0);
        assert_eq!(g.detector_offset(4), 4.0);
    }

    #[test]
    fn rejects_unsorted_angles() {
        let r = ParallelGeometry::with_angles(vec![0.3, 0.1], 8, 1.0, 8, 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_angles_outside_half_turn() {
        let r = ParallelGeometry::with_angles(vec![0.0, std::f64::consts::PI], 8, 1.0, 8, 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn image_shape_is_validated() {
        assert!(Image::from_vec(4, 4, vec![0.0; 15]).is_err());
        assert!(Image::from_vec(4, 4, vec![0.0; 16]).is_ok());
    }
}
