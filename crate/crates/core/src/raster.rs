//! Raster containers and the `rfl1` file format.
//!
//! An `rfl1` file is an ASCII header line `rfl1 <width> <height> <frames>\n`
//! followed by `width * height * frames` little-endian `f32` values, row-major
//! within a frame and frame-major overall.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// A 2-D real raster with square pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub data: Array2<f64>,
    pub pixel_pitch_mm: f64,
}

impl ImageGrid {
    pub fn new(data: Array2<f64>, pixel_pitch_mm: f64) -> Self {
        Self {
            data,
            pixel_pitch_mm,
        }
    }

    pub fn zeros(rows: usize, cols: usize, pixel_pitch_mm: f64) -> Self {
        Self::new(Array2::zeros((rows, cols)), pixel_pitch_mm)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

/// What the values of a [`Sinogram`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Attenuation line integrals `p` (dimensionless).
    LineIntegral,
    /// Detected photon counts.
    Counts,
}

/// Parallel-beam projection data indexed `[view, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub values: Array2<f64>,
    pub domain: Domain,
    pub view_angles: Vec<f64>,
    pub channel_pitch_mm: f64,
}

impl Sinogram {
    /// Builds a sinogram with `n_views` angles uniformly spaced over `[0, pi)`.
    pub fn new(values: Array2<f64>, domain: Domain, channel_pitch_mm: f64) -> Result<Self> {
        let (n_views, n_channels) = values.dim();
        if n_views == 0 || n_channels == 0 {
            return Err(Error::Validation(
                "sinogram needs at least one view and one channel".into(),
            ));
        }
        if !(channel_pitch_mm > 0.0) {
            return Err(Error::Validation(format!(
                "channel pitch must be positive, got {channel_pitch_mm}"
            )));
        }
        if domain == Domain::Counts && values.iter().any(|&v| v < 0.0) {
            return Err(Error::Data("counts-domain values must be >= 0".into()));
        }
        Ok(Self {
            values,
            domain,
            view_angles: uniform_angles(n_views),
            channel_pitch_mm,
        })
    }

    pub fn n_views(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    pub(crate) fn expect_domain(&self, domain: Domain, op: &str) -> Result<()> {
        if self.domain != domain {
            return Err(Error::Usage(format!(
                "{op} expects a {domain:?} sinogram, got {:?}",
                self.domain
            )));
        }
        Ok(())
    }
}

pub fn uniform_angles(n_views: usize) -> Vec<f64> {
    (0..n_views)
        .map(|v| v as f64 * PI / n_views as f64)
        .collect()
}

/// Serialises frames into `rfl1` bytes. All frames must share one shape.
pub fn encode_rfl(frames: &[ArrayView2<f64>]) -> Result<Vec<u8>> {
    let (height, width) = match frames.first() {
        Some(f) => f.dim(),
        None => return Err(Error::Format("rfl1 needs at least one frame".into())),
    };
    if frames.iter().any(|f| f.dim() != (height, width)) {
        return Err(Error::Format("rfl1 frames must share one shape".into()));
    }
    let header = format!("rfl1 {width} {height} {}\n", frames.len());
    let mut out = Vec::with_capacity(header.len() + 4 * width * height * frames.len());
    out.extend_from_slice(header.as_bytes());
    for frame in frames {
        for &v in frame.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_rfl(bytes: &[u8]) -> Result<Vec<Array2<f64>>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("rfl1 header is not newline-terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("rfl1 header is not ASCII".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some("rfl1") {
        return Err(Error::Format(format!("bad rfl1 magic in header `{header}`")));
    }
    let mut dim = || -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed rfl1 header `{header}`")))
    };
    let (width, height, frames) = (dim()?, dim()?, dim()?);
    if parts.next().is_some() {
        return Err(Error::Format(format!("trailing fields in rfl1 header `{header}`")));
    }
    let body = &bytes[nl + 1..];
    let expected = width * height * frames * 4;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "rfl1 body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(values
        .chunks_exact((width * height).max(1))
        .take(frames)
        .map(|c| Array2::from_shape_vec((height, width), c.to_vec()).expect("shape checked"))
        .collect())
}

pub fn write_rfl(path: &Path, frames: &[ArrayView2<f64>]) -> Result<()> {
    write_atomic(path, &encode_rfl(frames)?)
}

pub fn read_rfl(path: &Path) -> Result<Vec<Array2<f64>>> {
    decode_rfl(&fs::read(path)?)
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// 8-bit binary PGM with a display window centred on `level`.
pub fn encode_pgm(img: ArrayView2<f64>, window: f64, level: f64) -> Result<Vec<u8>> {
    if !(window > 0.0) {
        return Err(Error::Validation(format!("PGM window must be positive, got {window}")));
    }
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let lo = level - window / 2.0;
    out.extend(img.iter().map(|&v| {
        let t = ((v - lo) / window).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }));
    Ok(out)
}
