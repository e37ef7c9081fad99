//! Ellipse phantoms on a square pixel grid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::ImageGrid;

/// One ellipse in normalised coordinates: the grid spans `[-1, 1]` on both
/// axes, `x` to the right and `y` up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    /// Counter-clockwise rotation of the `a` axis, radians.
    pub rotation: f64,
    /// Attenuation added inside the ellipse, 1/mm.
    pub attenuation: f64,
}

impl Ellipse {
    pub fn disk(center_x: f64, center_y: f64, radius: f64, attenuation: f64) -> Self {
        Self {
            center_x,
            center_y,
            semi_a: radius,
            semi_b: radius,
            rotation: 0.0,
            attenuation,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = (dx * c + dy * s) / self.semi_a;
        let v = (-dx * s + dy * c) / self.semi_b;
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
    pub grid_size: usize,
    pub pixel_pitch_mm: f64,
}

impl Phantom {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 16 {
            return Err(Error::Validation(format!(
                "phantom grid_size must be >= 16, got {}",
                self.grid_size
            )));
        }
        if !(self.pixel_pitch_mm > 0.0) {
            return Err(Error::Validation(format!(
                "pixel_pitch_mm must be > 0, got {}",
                self.pixel_pitch_mm
            )));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(e.attenuation >= 0.0) {
                return Err(Error::Validation(format!(
                    "ellipse {i} has negative attenuation {}",
                    e.attenuation
                )));
            }
            if !(e.semi_a > 0.0 && e.semi_b > 0.0) {
                return Err(Error::Validation(format!(
                    "ellipse {i} has non-positive semi-axes ({}, {})",
                    e.semi_a, e.semi_b
                )));
            }
        }
        Ok(())
    }
}

/// Rasterises a phantom by summing ellipse attenuations at pixel centres.
pub fn generate_phantom(spec: &Phantom) -> Result<ImageGrid> {
    spec.validate()?;
    let n = spec.grid_size;
    let step = 2.0 / n as f64;
    let data = Array2::from_shape_fn((n, n), |(r, c)| {
        let x = -1.0 + (c as f64 + 0.5) * step;
        let y = 1.0 - (r as f64 + 0.5) * step;
        spec.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.attenuation)
            .sum()
    });
    Ok(ImageGrid::new(data, spec.pixel_pitch_mm))
}

/// Attenuation of water at diagnostic energies, 1/mm.
pub const WATER_MU: f64 = 0.02;

/// A body-like phantom: a water ellipse with a handful of small inserts kept
/// away from the centre, so the central region stays uniform for noise
/// measurements. Deterministic in `seed`.
pub fn phantom_variant(seed: u64, grid_size: usize, pixel_pitch_mm: f64) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ellipses = vec![Ellipse {
        center_x: 0.0,
        center_y: 0.0,
        semi_a: rng.random_range(0.78..0.88),
        semi_b: rng.random_range(0.62..0.72),
        rotation: 0.0,
        attenuation: WATER_MU,
    }];
    let n_inserts = rng.random_range(3..=6);
    for _ in 0..n_inserts {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(0.50..0.58);
        let size = rng.random_range(0.04..0.09);
        ellipses.push(Ellipse {
            center_x: radius * angle.cos(),
            center_y: radius * angle.sin() * 0.8,
            semi_a: size,
            semi_b: size * rng.random_range(0.6..1.0),
            rotation: rng.random_range(0.0..std::f64::consts::PI),
            attenuation: rng.random_range(0.002..0.02),
        });
    }
    Phantom {
        ellipses,
        grid_size,
        pixel_pitch_mm,
    }
}
