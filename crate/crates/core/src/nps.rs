//! Noise power spectra of reconstructed images and their entropy.
//!
//! NPS curves are radial averages of the ensemble periodogram over `n_bins`
//! uniform frequency bins spanning `[0, 0.5)` cycles per pixel. The flatness
//! metric is the Shannon entropy (bits) of the sum-normalised curve.

use std::fmt::Write as _;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::raster::ImageGrid;

/// Bin count of the reported metric; a flat curve then scores 8 bits.
pub const NPS_BINS: usize = 256;

/// Rectangular region of interest and the ensemble it is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiSpec {
    pub center_row: usize,
    pub center_col: usize,
    pub width: usize,
    pub height: usize,
    pub ensemble: usize,
}

impl RoiSpec {
    pub fn centered(rows: usize, cols: usize, width: usize, height: usize, ensemble: usize) -> Self {
        Self {
            center_row: rows / 2,
            center_col: cols / 2,
            width,
            height,
            ensemble,
        }
    }

    /// First row and column of the region.
    pub fn origin(&self) -> (isize, isize) {
        (
            self.center_row as isize - (self.height / 2) as isize,
            self.center_col as isize - (self.width / 2) as isize,
        )
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.ensemble < 2 {
            return Err(Error::Validation(format!("NPS ensemble must be >= 2, got {}", self.ensemble)));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Validation("ROI must be at least 2x2".into()));
        }
        let (r0, c0) = self.origin();
        if r0 < 0 || c0 < 0 || r0 as usize + self.height > rows || c0 as usize + self.width > cols {
            return Err(Error::Validation(format!(
                "ROI {}x{} at ({}, {}) does not fit a {rows}x{cols} image",
                self.width, self.height, self.center_row, self.center_col
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NpsOptions {
    pub n_bins: usize,
    /// Separable Hann taper on each ROI; meant for small ensembles.
    pub hann_window: bool,
}

impl Default for NpsOptions {
    fn default() -> Self {
        Self {
            n_bins: NPS_BINS,
            hann_window: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpsCurve {
    /// Lower edge of each bin, cycles/mm.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub normalized: bool,
}

impl NpsCurve {
    /// Unnormalised curve with bins spanning `[0, 0.5 / pitch)` cycles/mm.
    pub fn new(power: Vec<f64>, pixel_pitch_mm: f64) -> Result<Self> {
        if power.is_empty() {
            return Err(Error::Validation("NPS curve needs at least one bin".into()));
        }
        if power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Data("NPS power must be finite and >= 0".into()));
        }
        if !(pixel_pitch_mm > 0.0) {
            return Err(Error::Validation("pixel pitch must be > 0".into()));
        }
        let n = power.len();
        let step = 0.5 / pixel_pitch_mm / n as f64;
        Ok(Self {
            frequencies: (0..n).map(|i| i as f64 * step).collect(),
            power,
            normalized: false,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.power.len()
    }

    /// Mirrored moving average over `2 * half_width + 1` bins.
    pub fn smoothed(&self, half_width: usize) -> NpsCurve {
        let n = self.power.len() as isize;
        let at = |i: isize| {
            let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
            self.power[j.clamp(0, n - 1) as usize]
        };
        let k = half_width as isize;
        let power = (0..n)
            .map(|i| (i - k..=i + k).map(at).sum::<f64>() / (2 * k + 1) as f64)
            .collect();
        NpsCurve {
            frequencies: self.frequencies.clone(),
            power,
            normalized: false,
        }
    }

    /// `omega,power` CSV preceded by a comment line describing the measurement.
    pub fn to_csv(&self, roi: &RoiSpec) -> String {
        let mut out = format!(
            "# roi_center={},{} roi_size={}x{} ensemble={} normalized={} n_bins={}\nomega,power\n",
            roi.center_row,
            roi.center_col,
            roi.width,
            roi.height,
            roi.ensemble,
            self.normalized,
            self.n_bins()
        );
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            let _ = writeln!(out, "{f:e},{p:e}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut normalized = None;
        let mut frequencies = Vec::new();
        let mut power = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                normalized = comment
                    .split_whitespace()
                    .find_map(|kv| kv.strip_prefix("normalized="))
                    .and_then(|v| v.parse::<bool>().ok())
                    .or(normalized);
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                if line != "omega,power" {
                    return Err(Error::Format(format!("line {}: expected `omega,power` header", i + 1)));
                }
                header_seen = true;
                continue;
            }
            let parsed: Option<(f64, f64)> = line
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            let (f, p) = parsed.ok_or_else(|| Error::Format(format!("line {}: malformed NPS row `{line}`", i + 1)))?;
            frequencies.push(f);
            power.push(p);
        }
        if power.is_empty() {
            return Err(Error::Format("NPS CSV has no rows".into()));
        }
        Ok(Self {
            frequencies,
            power,
            normalized: normalized.unwrap_or(false),
        })
    }
}

/// In-place 2-D DFT of a row-major `h x w` buffer.
fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
}

/// Unsigned frequency of DFT index `k` on a length-`n` grid, cycles/sample.
fn freq(k: usize, n: usize) -> f64 {
    k.min(n - k) as f64 / n as f64
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
        .collect()
}

/// [`estimate_nps_with`] using 256 bins and no window.
pub fn estimate_nps(images: &[ImageGrid], roi: &RoiSpec) -> Result<NpsCurve> {
    estimate_nps_with(images, roi, &NpsOptions::default())
}

/// Ensemble NPS: each ROI minus the ensemble-mean ROI, zero-padded
/// periodogram `|F|^2 * pitch^2 / (W H)` (scaled by `K / (K - 1)` for the
/// removed mean), averaged over realizations and radially binned with
/// `bin = floor(rho / 0.5 * n_bins)`; frequencies at or beyond 0.5 cycles/pixel
/// are dropped. The padded side is a power of two at least `max(W, H)` and
/// `2 * n_bins`, so every bin holds at least one frequency sample.
pub fn estimate_nps_with(images: &[ImageGrid], roi: &RoiSpec, opts: &NpsOptions) -> Result<NpsCurve> {
    let first = images
        .first()
        .ok_or_else(|| Error::Validation("NPS needs at least two realizations".into()))?;
    let (rows, cols) = first.data.dim();
    let pitch = first.pixel_pitch_mm;
    if images.len() < 2 {
        return Err(Error::Validation("NPS needs at least two realizations".into()));
    }
    if images.len() != roi.ensemble {
        return Err(Error::Validation(format!(
            "ROI expects an ensemble of {}, got {} images",
            roi.ensemble,
            images.len()
        )));
    }
    if images.iter().any(|im| im.data.dim() != (rows, cols) || im.pixel_pitch_mm != pitch) {
        return Err(Error::Validation("NPS realizations must share shape and pixel pitch".into()));
    }
    if opts.n_bins == 0 {
        return Err(Error::Validation("n_bins must be >= 1".into()));
    }
    roi.validate(rows, cols)?;
    let (r0, c0) = roi.origin();
    let (r0, c0) = (r0 as usize, c0 as usize);
    let (h, w) = (roi.height, roi.width);
    let crops: Vec<ArrayView2<f64>> = images
        .iter()
        .map(|im| im.data.slice(s![r0..r0 + h, c0..c0 + w]))
        .collect();
    let k = crops.len() as f64;
    let mut mean = Array2::<f64>::zeros((h, w));
    for c in &crops {
        mean += c;
    }
    mean /= k;

    let (win, norm) = if opts.hann_window {
        let (wy, wx) = (hann(h), hann(w));
        let win = Array2::from_shape_fn((h, w), |(r, c)| wy[r] * wx[c]);
        let norm = win.iter().map(|v| v * v).sum::<f64>();
        (Some(win), norm)
    } else {
        (None, (h * w) as f64)
    };
    let p = h.max(w).max(2 * opts.n_bins).next_power_of_two();
    let scale = pitch * pitch / norm * k / (k - 1.0);

    let spectra: Vec<Vec<f64>> = crops
        .par_iter()
        .map(|crop| {
            let mut buf = vec![Complex::new(0.0, 0.0); p * p];
            for r in 0..h {
                for c in 0..w {
                    let mut v = crop[[r, c]] - mean[[r, c]];
                    if let Some(win) = &win {
                        v *= win[[r, c]];
                    }
                    buf[r * p + c].re = v;
                }
            }
            fft2(&mut buf, p, p);
            buf.iter().map(|z| z.norm_sqr() * scale).collect()
        })
        .collect();

    let nb = opts.n_bins;
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for ky in 0..p {
        let fy = freq(ky, p);
        for kx in 0..p {
            let rho = (fy * fy + freq(kx, p).powi(2)).sqrt();
            if rho >= 0.5 {
                continue;
            }
            let bin = ((rho / 0.5 * nb as f64).floor() as usize).min(nb - 1);
            // fixed realization order keeps the sum deterministic
            let v: f64 = spectra.iter().map(|sp| sp[ky * p + kx]).sum();
            sums[bin] += v / k;
            counts[bin] += 1;
        }
    }
    let power = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    NpsCurve::new(power, pitch)
}

pub fn normalize_nps(curve: &NpsCurve) -> Result<NpsCurve> {
    let total: f64 = curve.power.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("cannot normalise an NPS curve with zero total power".into()));
    }
    Ok(NpsCurve {
        frequencies: curve.frequencies.clone(),
        power: curve.power.iter().map(|p| p / total).collect(),
        normalized: true,
    })
}

/// `sum_i p_i log2(1 / p_i)`, with empty bins contributing 0.
pub fn entropy_flatness(curve: &NpsCurve) -> Result<f64> {
    let total: f64 = curve.power.iter().sum();
    if !curve.normalized || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!(
            "entropy needs a normalised NPS curve (flag {}, sum {total})",
            curve.normalized
        )));
    }
    Ok(curve
        .power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum())
}

/// Energy of `signal` in the radial band `lo <= rho < hi` (cycles/sample) of
/// its natural-size 2-D spectrum `|F|^2 / (H W)`. A band reaching 0.5 also
/// takes the corner frequencies beyond 0.5, so `[0, 0.5]` returns the full
/// energy `sum x^2`.
pub fn band_energy(signal: ArrayView2<f64>, band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    if !(0.0 <= lo && lo < hi && hi <= 0.5) {
        return Err(Error::Validation(format!("band [{lo}, {hi}) must satisfy 0 <= lo < hi <= 0.5")));
    }
    let (h, w) = signal.dim();
    if h == 0 || w == 0 {
        return Err(Error::Validation("band energy of an empty signal".into()));
    }
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, h, w);
    let open_top = hi >= 0.5;
    let mut total = 0.0;
    for ky in 0..h {
        let fy = freq(ky, h);
        for kx in 0..w {
            let rho = (fy * fy + freq(kx, w).powi(2)).sqrt();
            if rho >= lo && (rho < hi || open_top) {
                total += buf[ky * w + kx].norm_sqr();
            }
        }
    }
    Ok(total / (h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normalized(power: Vec<f64>) -> NpsCurve {
        normalize_nps(&NpsCurve::new(power, 1.0).unwrap()).unwrap()
    }

    fn noise_images(n: usize, side: usize, seed: u64) -> Vec<ImageGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| ImageGrid::new(Array2::from_shape_fn((side, side), |_| StandardNormal.sample(&mut rng)), 1.0))
            .collect()
    }

    #[test]
    fn entropy_reference_values() {
        assert_eq!(entropy_flatness(&normalized(vec![1.0; 256])).unwrap(), 8.0);
        let mut single = vec![0.0; 256];
        single[17] = 3.0;
        assert_eq!(entropy_flatness(&normalized(single)).unwrap(), 0.0);
        let mut two = vec![0.0; 256];
        two[3] = 2.0;
        two[200] = 2.0;
        assert_eq!(entropy_flatness(&normalized(two)).unwrap(), 1.0);
    }

    #[test]
    fn entropy_requires_normalised_curve() {
        let raw = NpsCurve::new(vec![0.5; 4], 1.0).unwrap();
        assert!(matches!(entropy_flatness(&raw), Err(Error::Usage(_))));
        let mut lying = raw.clone();
        lying.normalized = true;
        assert!(matches!(entropy_flatness(&lying), Err(Error::Usage(_))));
    }

    #[test]
    fn normalisation_contract() {
        let flat = normalized(vec![2.0; 256]);
        assert!(flat.power.iter().all(|&p| p == 1.0 / 256.0));
        let a = normalized(vec![1.0, 2.0, 5.0]);
        let b = normalized(vec![7.0, 14.0, 35.0]);
        for (x, y) in a.power.iter().zip(&b.power) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(normalize_nps(&NpsCurve::new(vec![0.0; 8], 1.0).unwrap()), Err(Error::Degenerate(_))));
        assert!(NpsCurve::new(vec![-1.0], 1.0).is_err());
    }

    #[test]
    fn entropy_bounds_permutation_and_concavity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..256).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let h = entropy_flatness(&normalized(raw.clone())).unwrap();
        assert!(h > 0.0 && h < 8.0);
        let mut reversed = raw.clone();
        reversed.reverse();
        let mut rotated = raw.clone();
        rotated.rotate_left(77);
        assert!((entropy_flatness(&normalized(reversed)).unwrap() - h).abs() < 1e-12);
        assert!((entropy_flatness(&normalized(rotated)).unwrap() - h).abs() < 1e-12);

        let flat = normalized(vec![1.0; 256]);
        let mut spike = vec![0.0; 256];
        spike[10] = 1.0;
        spike[11] = 0.5;
        let peaked = normalized(spike);
        let (hf, hp) = (entropy_flatness(&flat).unwrap(), entropy_flatness(&peaked).unwrap());
        for t in [0.25, 0.5, 0.75] {
            let mix: Vec<f64> = flat.power.iter().zip(&peaked.power).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let hm = entropy_flatness(&normalized(mix)).unwrap();
            assert!(hm >= t * hf + (1.0 - t) * hp);
        }
    }

    #[test]
    fn identical_realisations_give_zero_curve() {
        let img = noise_images(1, 32, 1).pop().unwrap();
        let roi = RoiSpec::centered(32, 32, 16, 16, 3);
        let curve = estimate_nps(&[img.clone(), img.clone(), img], &roi).unwrap();
        // only roundoff of the ensemble mean survives
        assert!(curve.power.iter().all(|&p| p < 1e-25), "{:?}", curve.power.iter().cloned().fold(0.0, f64::max));
        assert_eq!(curve.n_bins(), 256);
    }

    #[test]
    fn constant_offset_does_not_change_nps() {
        let imgs = noise_images(4, 32, 2);
        let shifted: Vec<ImageGrid> = imgs.iter().map(|im| ImageGrid::new(&im.data + 40.0, 1.0)).collect();
        let roi = RoiSpec::centered(32, 32, 24, 20, 4);
        let a = estimate_nps(&imgs, &roi).unwrap();
        let b = estimate_nps(&shifted, &roi).unwrap();
        for (x, y) in a.power.iter().zip(&b.power) {
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn roi_and_ensemble_validation() {
        let imgs = noise_images(3, 32, 4);
        assert!(estimate_nps(&imgs, &RoiSpec::centered(32, 32, 40, 8, 3)).is_err());
        assert!(estimate_nps(&imgs, &RoiSpec::centered(32, 32, 8, 8, 2)).is_err());
        assert!(estimate_nps(&imgs[..1], &RoiSpec::centered(32, 32, 8, 8, 1)).is_err());
        let mut mixed = imgs.clone();
        mixed[1] = ImageGrid::zeros(32, 30, 1.0);
        assert!(estimate_nps(&mixed, &RoiSpec::centered(32, 32, 8, 8, 3)).is_err());
        let roi = RoiSpec { center_row: 4, center_col: 16, width: 8, height: 10, ensemble: 3 };
        assert!(estimate_nps(&imgs, &roi).is_err());
    }

    #[test]
    fn white_noise_level_matches_variance() {
        // sigma 1, pitch 1 -> NPS level 1 in every bin
        let imgs = noise_images(16, 64, 5);
        let curve = estimate_nps(&imgs, &RoiSpec::centered(64, 64, 64, 64, 16)).unwrap();
        let mean = curve.power[8..].iter().sum::<f64>() / (curve.n_bins() - 8) as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean level {mean}");
        assert!((curve.frequencies[1] - 0.5 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn hann_window_preserves_white_level() {
        let imgs = noise_images(16, 64, 6);
        let opts = NpsOptions { n_bins: 64, hann_window: true };
        let curve = estimate_nps_with(&imgs, &RoiSpec::centered(64, 64, 64, 64, 16), &opts).unwrap();
        let mean = curve.power[4..].iter().sum::<f64>() / 60.0;
        assert!((mean - 1.0).abs() < 0.1, "mean level {mean}");
    }

    #[test]
    fn band_energy_parseval_and_dc() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((30, 42), |_| StandardNormal.sample(&mut rng));
        let total: f64 = x.iter().map(|v| v * v).sum();
        let full = band_energy(x.view(), (0.0, 0.5)).unwrap();
        assert!((full - total).abs() < 1e-9 * total);
        let split = band_energy(x.view(), (0.0, 0.2)).unwrap() + band_energy(x.view(), (0.2, 0.5)).unwrap();
        assert!((split - total).abs() < 1e-9 * total);
        let c = Array2::from_elem((16, 16), 3.0);
        assert!(band_energy(c.view(), (0.01, 0.5)).unwrap() < 1e-20);
        assert!(matches!(band_energy(c.view(), (0.3, 0.3)), Err(Error::Validation(_))));
        assert!(band_energy(c.view(), (0.1, 0.6)).is_err());
    }

    #[test]
    fn csv_round_trip_and_smoothing() {
        let curve = normalized((1..=8).map(|v| v as f64).collect());
        let roi = RoiSpec::centered(64, 64, 32, 32, 4);
        let text = curve.to_csv(&roi);
        assert!(text.starts_with("# roi_center=32,32 roi_size=32x32 ensemble=4 normalized=true n_bins=8\nomega,power\n"));
        let back = NpsCurve::from_csv(&text).unwrap();
        assert!(back.normalized);
        for (a, b) in back.power.iter().zip(&curve.power) {
            assert!((a - b).abs() < 1e-15);
        }
        let sm = NpsCurve::new(vec![0.0, 3.0, 0.0, 3.0], 1.0).unwrap().smoothed(1);
        assert_eq!(sm.power, vec![2.0, 1.0, 2.0, 1.0]);
        assert!(NpsCurve::from_csv("omega,power\n").is_err());
    }
}
