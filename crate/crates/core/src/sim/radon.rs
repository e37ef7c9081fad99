//! Parallel-beam forward projection.
//!
//! Pixel `(r, c)` of an `N x N` grid sits at `x = (c - (N-1)/2) * pitch`,
//! `y = ((N-1)/2 - r) * pitch`. The ray of channel offset `s` at view angle
//! `theta` is `{ (x, y) : x cos(theta) + y sin(theta) = s }`. Each ray is
//! integrated by the midpoint rule at half-pixel steps with bilinear
//! interpolation of the image (zero outside the grid).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::raster::{uniform_angles, Domain, ImageGrid, Sinogram};

/// Detector sampling for a parallel-beam scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub n_views: usize,
    pub n_channels: usize,
    pub channel_pitch_mm: f64,
}

impl Geometry {
    /// Channels spread so the detector spans the diagonal of the image.
    pub fn covering(grid_size: usize, pixel_pitch_mm: f64, n_views: usize, n_channels: usize) -> Self {
        let diag = grid_size as f64 * pixel_pitch_mm * std::f64::consts::SQRT_2;
        Self {
            n_views,
            n_channels,
            channel_pitch_mm: diag / n_channels as f64,
        }
    }

    pub fn channel_offset(&self, channel: usize) -> f64 {
        (channel as f64 - (self.n_channels as f64 - 1.0) / 2.0) * self.channel_pitch_mm
    }
}

pub fn radon_forward(img: &ImageGrid, geom: &Geometry) -> Result<Sinogram> {
    if geom.n_views == 0 || geom.n_channels == 0 {
        return Err(Error::Validation("n_views and n_channels must be >= 1".into()));
    }
    if !(geom.channel_pitch_mm > 0.0) {
        return Err(Error::Validation("channel pitch must be positive".into()));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("image contains non-finite pixels".into()));
    }
    let (rows, cols) = img.data.dim();
    let data = img
        .data
        .as_standard_layout()
        .into_owned()
        .into_raw_vec_and_offset()
        .0;
    let pitch = img.pixel_pitch_mm;
    let step = pitch / 2.0;
    // Bounding box slightly beyond the outermost pixel centres (bilinear support).
    let half_x = (cols as f64 + 1.0) / 2.0 * pitch;
    let half_y = (rows as f64 + 1.0) / 2.0 * pitch;
    let cx = (cols as f64 - 1.0) / 2.0;
    let cy = (rows as f64 - 1.0) / 2.0;

    let sample = |x: f64, y: f64| -> f64 {
        let u = x / pitch + cx;
        let v = cy - y / pitch;
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let (u0, v0) = (u0 as isize, v0 as isize);
        let at = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                0.0
            } else {
                data[r as usize * cols + c as usize]
            }
        };
        (1.0 - fv) * ((1.0 - fu) * at(v0, u0) + fu * at(v0, u0 + 1))
            + fv * ((1.0 - fu) * at(v0 + 1, u0) + fu * at(v0 + 1, u0 + 1))
    };

    let angles = uniform_angles(geom.n_views);
    let mut values = Array2::zeros((geom.n_views, geom.n_channels));
    for (v, &theta) in angles.iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        for ch in 0..geom.n_channels {
            let s = geom.channel_offset(ch);
            // Ray point: (s cos - t sin, s sin + t cos). Clip t to the box.
            let Some((t_lo, t_hi)) = clip_ray(s * cos, s * sin, -sin, cos, half_x, half_y) else {
                continue;
            };
            // Midpoint samples on a grid anchored at t = 0 keep the quadrature
            // independent of where the clip lands.
            let k_lo = (t_lo / step).floor() as i64;
            let k_hi = (t_hi / step).ceil() as i64;
            let mut acc = 0.0;
            for k in k_lo..k_hi {
                let t = (k as f64 + 0.5) * step;
                acc += sample(s * cos - t * sin, s * sin + t * cos);
            }
            values[[v, ch]] = acc * step;
        }
    }
    Sinogram::new(values, Domain::LineIntegral, geom.channel_pitch_mm)
}

/// Parameter interval where `p + t d` lies inside `[-hx, hx] x [-hy, hy]`.
fn clip_ray(px: f64, py: f64, dx: f64, dy: f64, hx: f64, hy: f64) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (p, d, h) in [(px, dx, hx), (py, dy, hy)] {
        if d.abs() < 1e-12 {
            if p.abs() > h {
                return None;
            }
        } else {
            let a = (-h - p) / d;
            let b = (h - p) / d;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    (lo < hi).then_some((lo, hi))
}
