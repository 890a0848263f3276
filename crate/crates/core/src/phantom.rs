//! Random ellipse phantoms.
//!
//! Each phantom is a sum of 3..=max_ellipses ellipses with random amplitude,
//! center, half-axes and rotation, clipped to [0, 1] and masked to the circle
//! inscribed in the image square. The parameter distributions below are
//! frozen constants of this crate:
//!   amplitude  ~ U[0.1, 1.0]
//!   center     ~ U[-0.6, 0.6]^2            (in [-1, 1]^2 image coordinates)
//!   half-axes  ~ log-uniform over [0.06, 0.5]
//!   rotation   ~ U[0, pi)

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::Image;

/// One additive ellipse component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    /// Additive amplitude.
    pub value: f64,
    /// Center in [-1, 1]^2 coordinates.
    pub center: (f64, f64),
    /// Positive half-axes in [-1, 1] units.
    pub half_axes: (f64, f64),
    /// Rotation in radians.
    pub rotation: f64,
}

impl EllipseSpec {
    /// Signed field: > 0 inside, crossing 0 at the boundary.
    fn inside(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.center;
        let (ca, sa) = (self.rotation.cos(), self.rotation.sin());
        let dx = x - cx;
        let dy = y - cy;
        let u = ca * dx + sa * dy;
        let v = -sa * dx + ca * dy;
        1.0 - (u / self.half_axes.0).powi(2) - (v / self.half_axes.1).powi(2)
    }
}

fn sample_ellipse(rng: &mut ChaCha8Rng) -> EllipseSpec {
    let log_lo = 0.06f64.ln();
    let log_hi = 0.5f64.ln();
    EllipseSpec {
        value: rng.gen_range(0.1..=1.0),
        center: (rng.gen_range(-0.6..=0.6), rng.gen_range(-0.6..=0.6)),
        half_axes: (
            rng.gen_range(log_lo..=log_hi).exp(),
            rng.gen_range(log_lo..=log_hi).exp(),
        ),
        rotation: rng.gen_range(0.0..std::f64::consts::PI),
    }
}

/// Rasterize ellipses onto a `size x size` grid, clip to [0, 1] and zero
/// everything outside the inscribed circle.
pub fn rasterize(ellipses: &[EllipseSpec], size: usize) -> Image {
    let mut img = Image::zeros(size, size);
    let half = (size as f64 - 1.0) / 2.0;
    let scale = 2.0 / size as f64;
    for r in 0..size {
        let y = (r as f64 - half) * scale;
        for c in 0..size {
            let x = (c as f64 - half) * scale;
            if x * x + y * y > 1.0 {
                continue;
            }
            let mut v = 0.0;
            for e in ellipses {
                if e.inside(x, y) > 0.0 {
                    v += e.value;
                }
            }
            img.data[r * size + c] = v.clamp(0.0, 1.0);
        }
    }
    img
}

/// Deterministic random phantom for a seed.
pub fn generate_phantom(seed: u64, size: usize, max_ellipses: usize) -> Result<Image> {
    if size < 8 {
        return Err(TomoError::InvalidArgument("phantom size must be >= 8".into()));
    }
    if max_ellipses < 3 {
        return Err(TomoError::InvalidArgument("max_ellipses must be >= 3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=max_ellipses);
    let ellipses: Vec<EllipseSpec> = (0..n).map(|_| sample_ellipse(&mut rng)).collect();
    Ok(rasterize(&ellipses, size))
}
