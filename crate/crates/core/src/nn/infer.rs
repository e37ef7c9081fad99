//! Applying a trained denoiser to full sinograms.

use ndarray::{s, Array2, ArrayView2};

use super::model::{Denoiser, MIN_INPUT_SIDE};
use crate::error::{Error, Result};
use crate::raster::{Domain, Sinogram};

/// Overlapping square tiles; each output pixel comes from the tile whose
/// interior it falls in, so with `overlap / 2` at least the receptive radius
/// the stitched result equals the untiled pass exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tiling {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self { tile: 64, overlap: 16 }
    }
}

/// Tile origins along one axis: stride `tile - overlap`, last tile flush with the end.
fn starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < len).collect();
    v.push(len - tile);
    v
}

/// Output span `[lo, hi)` owned by tile `i`: boundaries sit at the middle of
/// each overlap.
fn owned(starts: &[usize], i: usize, tile: usize, len: usize) -> (usize, usize) {
    let lo = if i == 0 { 0 } else { (starts[i] + starts[i - 1] + tile) / 2 };
    let hi = if i + 1 == starts.len() { len } else { (starts[i + 1] + starts[i] + tile) / 2 };
    (lo, hi)
}

/// Runs `model` on `input / scale` and returns the result times `scale`.
pub fn denoise_array<M: Denoiser>(
    model: &M,
    input: ArrayView2<f64>,
    scale: f64,
    tiling: Option<Tiling>,
) -> Result<Array2<f64>> {
    if !(scale > 0.0) {
        return Err(Error::Validation(format!("input scale must be > 0, got {scale}")));
    }
    let x = input.mapv(|v| v / scale);
    let (h, w) = x.dim();
    let out = match tiling {
        None => model.forward(x.view())?,
        Some(t) => {
            if t.tile < MIN_INPUT_SIDE || t.overlap >= t.tile {
                return Err(Error::Validation(format!(
                    "tile {} with overlap {} is invalid (tile >= {MIN_INPUT_SIDE}, overlap < tile)",
                    t.tile, t.overlap
                )));
            }
            let rs = starts(h, t.tile, t.overlap);
            let cs = starts(w, t.tile, t.overlap);
            let mut out = Array2::zeros((h, w));
            for (i, &r) in rs.iter().enumerate() {
                for (j, &c) in cs.iter().enumerate() {
                    let th = t.tile.min(h);
                    let tw = t.tile.min(w);
                    let y = model.forward(x.slice(s![r..r + th, c..c + tw]))?;
                    let (r0, r1) = owned(&rs, i, th, h);
                    let (c0, c1) = owned(&cs, j, tw, w);
                    out.slice_mut(s![r0..r1, c0..c1])
                        .assign(&y.slice(s![r0 - r..r1 - r, c0 - c..c1 - c]));
                }
            }
            out
        }
    };
    Ok(out.mapv(|v| v * scale))
}

/// Denoises a counts-domain sinogram, keeping its geometry. Negative outputs
/// are clamped to zero so the result is still a valid counts sinogram.
pub fn denoise_sinogram<M: Denoiser>(
    model: &M,
    noisy: &Sinogram,
    scale: f64,
    tiling: Option<Tiling>,
) -> Result<Sinogram> {
    noisy.expect_domain(Domain::Counts, "denoising")?;
    let out = denoise_array(model, noisy.values.view(), scale, tiling)?;
    Ok(Sinogram {
        values: out.mapv(|v| v.max(0.0)),
        domain: Domain::Counts,
        view_angles: noisy.view_angles.clone(),
        channel_pitch_mm: noisy.channel_pitch_mm,
    })
}
