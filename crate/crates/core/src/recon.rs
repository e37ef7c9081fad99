//! Log inversion and parallel-beam filtered backprojection.
//!
//! The reconstruction uses the same coordinates as [`crate::sim::radon_forward`]:
//! pixel `(r, c)` sits at `x = (c - (N-1)/2) * pitch`, `y = ((N-1)/2 - r) * pitch`
//! and channel `j` at `s = (j - (n-1)/2) * channel_pitch`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::raster::{Domain, ImageGrid, Sinogram};

/// Window applied to the ramp filter in frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Apodization {
    #[default]
    None,
    /// `0.5 * (1 + cos(pi * f / 0.5))` for `f` in cycles per channel.
    Hann,
}

impl fmt::Display for Apodization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Apodization::None => "none",
            Apodization::Hann => "hann",
        })
    }
}

impl FromStr for Apodization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Apodization::None),
            "hann" => Ok(Apodization::Hann),
            other => Err(Error::Validation(format!("unknown apodization `{other}` (none|hann)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub grid_size: usize,
    pub pixel_pitch_mm: f64,
    pub apodization: Apodization,
    pub i0: f64,
    pub floor: f64,
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 16 {
            return Err(Error::Validation(format!("grid_size must be >= 16, got {}", self.grid_size)));
        }
        if !(self.pixel_pitch_mm > 0.0) {
            return Err(Error::Validation(format!("pixel pitch must be > 0, got {}", self.pixel_pitch_mm)));
        }
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::Validation(format!("i0 must be > 0, got {}", self.i0)));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Validation(format!("floor must be > 0, got {}", self.floor)));
        }
        Ok(())
    }
}

/// `p = -ln(max(counts, floor) / i0)`.
pub fn counts_to_line_integrals(sino: &Sinogram, i0: f64, floor: f64) -> Result<Sinogram> {
    sino.expect_domain(Domain::Counts, "counts_to_line_integrals")?;
    if !(i0 > 0.0) || !(floor > 0.0) {
        return Err(Error::Validation(format!("i0 and floor must be > 0, got {i0} and {floor}")));
    }
    Ok(Sinogram {
        values: sino.values.mapv(|c| -(c.max(floor) / i0).ln()),
        domain: Domain::LineIntegral,
        view_angles: sino.view_angles.clone(),
        channel_pitch_mm: sino.channel_pitch_mm,
    })
}

/// Frequency response of the band-limited ramp for `n_channels`, on an FFT
/// grid of length `2 * next_pow2(n_channels)`. Built from the sampled spatial
/// kernel `h(0) = 1/(4 tau^2)`, `h(odd n) = -1/(n pi tau)^2`, which avoids the
/// DC bias of sampling `|w|` directly.
fn ramp_response(n_channels: usize, tau: f64, apod: Apodization) -> Vec<f64> {
    let len = 2 * n_channels.next_power_of_two();
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 1.0 / (4.0 * tau * tau);
    for n in (1..len / 2).step_by(2) {
        let v = -1.0 / ((n as f64 * PI * tau).powi(2));
        kernel[n].re = v;
        kernel[len - n].re = v;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let f = k.min(len - k) as f64 / len as f64;
            let w = match apod {
                Apodization::None => 1.0,
                Apodization::Hann => 0.5 * (1.0 + (PI * f / 0.5).cos()),
            };
            h.re * w
        })
        .collect()
}

fn check_uniform_angles(sino: &Sinogram) -> Result<()> {
    let n = sino.n_views();
    if sino.view_angles.len() != n {
        return Err(Error::Validation("view angle count does not match sinogram rows".into()));
    }
    for (v, &theta) in sino.view_angles.iter().enumerate() {
        if (theta - v as f64 * PI / n as f64).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "view {v} has angle {theta}, expected uniform spacing over [0, pi)"
            )));
        }
    }
    Ok(())
}

/// Ramp-filters each view (zero-padded FFT convolution).
pub fn ramp_filter(sino: &Sinogram, apod: Apodization) -> Result<Array2<f64>> {
    sino.expect_domain(Domain::LineIntegral, "ramp_filter")?;
    let (n_views, n_ch) = sino.values.dim();
    let tau = sino.channel_pitch_mm;
    let response = ramp_response(n_ch, tau, apod);
    let len = response.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let rows: Vec<Vec<f64>> = (0..n_views)
        .into_par_iter()
        .map(|v| {
            let mut buf = vec![Complex::new(0.0, 0.0); len];
            for (b, &x) in buf.iter_mut().zip(sino.values.row(v).iter()) {
                b.re = x;
            }
            fwd.process(&mut buf);
            for (b, &h) in buf.iter_mut().zip(&response) {
                *b *= h;
            }
            inv.process(&mut buf);
            // inverse FFT is unnormalised; tau is the quadrature weight of the convolution
            let scale = tau / len as f64;
            buf[..n_ch].iter().map(|b| b.re * scale).collect()
        })
        .collect();
    Ok(Array2::from_shape_vec((n_views, n_ch), rows.concat()).expect("row lengths match"))
}

/// Filtered backprojection onto a `grid_size` square grid.
pub fn fbp(sino: &Sinogram, cfg: &ReconConfig) -> Result<ImageGrid> {
    sino.expect_domain(Domain::LineIntegral, "fbp")?;
    cfg.validate()?;
    check_uniform_angles(sino)?;
    if sino.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("sinogram contains non-finite values".into()));
    }
    let filtered = ramp_filter(sino, cfg.apodization)?;
    let (n_views, n_ch) = filtered.dim();
    let n = cfg.grid_size;
    let pitch = cfg.pixel_pitch_mm;
    let tau = sino.channel_pitch_mm;
    let centre = (n as f64 - 1.0) / 2.0;
    let ch_centre = (n_ch as f64 - 1.0) / 2.0;
    let trig: Vec<(f64, f64)> = sino.view_angles.iter().map(|t| t.sin_cos()).collect();
    let q = filtered.as_standard_layout().into_owned();
    let q = q.as_slice().expect("standard layout");
    let weight = PI / n_views as f64;

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let y = (centre - r as f64) * pitch;
            let mut acc = vec![0.0; n];
            for (v, &(sin, cos)) in trig.iter().enumerate() {
                let view = &q[v * n_ch..(v + 1) * n_ch];
                // channel coordinate of pixel c: u0 + c * du
                let u0 = (-centre * pitch * cos + y * sin) / tau + ch_centre;
                let du = pitch * cos / tau;
                for (c, a) in acc.iter_mut().enumerate() {
                    let u = u0 + c as f64 * du;
                    let i = u.floor();
                    if i < -1.0 || i >= n_ch as f64 {
                        continue;
                    }
                    let f = u - i;
                    let i = i as isize;
                    let lo = if i >= 0 { view[i as usize] } else { 0.0 };
                    let hi = if i + 1 < n_ch as isize { view[(i + 1) as usize] } else { 0.0 };
                    *a += lo + f * (hi - lo);
                }
            }
            acc.iter().map(|a| a * weight).collect()
        })
        .collect();
    let image = Array2::from_shape_vec((n, n), rows.concat()).expect("row lengths match");
    Ok(ImageGrid::new(image, pitch))
}
