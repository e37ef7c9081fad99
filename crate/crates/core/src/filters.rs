//! Loss-shaping FIR filters.
//!
//! `f1` is a Hamming-windowed sinc lowpass normalised to unit DC gain. `f2` is
//! its spectral complement at its own cutoff: a centred unit impulse minus a
//! lowpass, so its DC gain is exactly zero. Filters are applied separably with
//! whole-sample mirror extension (`d c b | a b c d | c b a`).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterRole {
    Lowpass,
    Highpass,
    Identity,
}

impl fmt::Display for FilterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterRole::Lowpass => "f1_lowpass",
            FilterRole::Highpass => "f2_highpass",
            FilterRole::Identity => "identity",
        })
    }
}

impl FromStr for FilterRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1_lowpass" => Ok(FilterRole::Lowpass),
            "f2_highpass" => Ok(FilterRole::Highpass),
            "identity" => Ok(FilterRole::Identity),
            other => Err(Error::Format(format!("unknown filter role `{other}`"))),
        }
    }
}

/// Which array axes a separable filter runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterAxes {
    /// Along axis 0 (down each column; the view direction of a sinogram).
    Views,
    /// Along axis 1 (along each row; the channel direction).
    Channels,
    #[default]
    Both,
}

impl FilterAxes {
    fn includes(self, axis: Axis) -> bool {
        matches!(
            (self, axis.index()),
            (FilterAxes::Both, _) | (FilterAxes::Views, 0) | (FilterAxes::Channels, 1)
        )
    }
}

impl fmt::Display for FilterAxes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterAxes::Views => "views",
            FilterAxes::Channels => "channels",
            FilterAxes::Both => "both",
        })
    }
}

impl FromStr for FilterAxes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "views" => Ok(FilterAxes::Views),
            "channels" => Ok(FilterAxes::Channels),
            "both" => Ok(FilterAxes::Both),
            other => Err(Error::Validation(format!(
                "filter axes must be views, channels or both; got `{other}`"
            ))),
        }
    }
}

/// Symmetric, odd-length FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    role: FilterRole,
    cutoff: Option<f64>,
}

impl FirFilter {
    pub fn identity() -> Self {
        Self {
            taps: vec![1.0],
            role: FilterRole::Identity,
            cutoff: None,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn role(&self) -> FilterRole {
        self.role
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    pub fn half_len(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn dc_gain(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Builds a filter from explicit taps, checking odd length and symmetry.
    pub fn from_taps(taps: Vec<f64>, role: FilterRole, cutoff: Option<f64>) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(Error::Validation(format!("filter length must be odd, got {}", taps.len())));
        }
        let n = taps.len();
        if (0..n / 2).any(|i| taps[i] != taps[n - 1 - i]) {
            return Err(Error::Validation("filter taps must be symmetric".into()));
        }
        Ok(Self { taps, role, cutoff })
    }

    /// One-tap-per-line CSV with a `# role=.. cutoff=.. taps=..` header.
    pub fn to_csv(&self) -> String {
        let cutoff = self.cutoff.map_or_else(|| "none".to_string(), |c| c.to_string());
        let mut s = format!("# role={} cutoff={} taps={}\n", self.role, cutoff, self.taps.len());
        for t in &self.taps {
            s.push_str(&format!("{t}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# "))
            .ok_or_else(|| Error::Format("filter CSV must start with a `# ` header".into()))?;
        let (mut role, mut cutoff, mut count) = (None, None, None);
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("role", v)) => role = Some(v.parse::<FilterRole>()?),
                Some(("cutoff", "none")) => cutoff = Some(None),
                Some(("cutoff", v)) => {
                    cutoff = Some(Some(v.parse::<f64>().map_err(|_| {
                        Error::Format(format!("bad cutoff `{v}` in filter header"))
                    })?))
                }
                Some(("taps", v)) => {
                    count = Some(v.parse::<usize>().map_err(|_| {
                        Error::Format(format!("bad tap count `{v}` in filter header"))
                    })?)
                }
                _ => return Err(Error::Format(format!("unexpected header field `{field}`"))),
            }
        }
        let (role, cutoff, count) = match (role, cutoff, count) {
            (Some(r), Some(c), Some(n)) => (r, c, n),
            _ => return Err(Error::Format("filter header needs role, cutoff and taps".into())),
        };
        let taps = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad tap value `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if taps.len() != count {
            return Err(Error::Format(format!("header declares {count} taps, found {}", taps.len())));
        }
        Self::from_taps(taps, role, cutoff)
    }
}

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

fn windowed_sinc(cutoff: f64, n_taps: usize) -> Vec<f64> {
    let center = (n_taps / 2) as f64;
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|n| {
            let x = n as f64 - center;
            let ideal = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            ideal * hamming(n, n_taps)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    // Force exact symmetry after the normalisation rounding.
    for i in 0..n_taps / 2 {
        taps[n_taps - 1 - i] = taps[i];
    }
    taps
}

/// Designs `f1` (lowpass), `f2` (highpass) or the identity filter.
///
/// `cutoff` is in cycles/sample and must lie in `(0, 0.5)`; `n_taps` must be
/// odd and at least 5. Both are ignored for [`FilterRole::Identity`].
pub fn design_fir(role: FilterRole, cutoff: f64, n_taps: usize) -> Result<FirFilter> {
    if role == FilterRole::Identity {
        return Ok(FirFilter::identity());
    }
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::Validation(format!("cutoff must lie in (0, 0.5), got {cutoff}")));
    }
    if n_taps % 2 == 0 || n_taps < 5 {
        return Err(Error::Validation(format!("n_taps must be odd and >= 5, got {n_taps}")));
    }
    let lowpass = windowed_sinc(cutoff, n_taps);
    let taps = match role {
        FilterRole::Lowpass => lowpass,
        FilterRole::Highpass => {
            let mut hp: Vec<f64> = lowpass.iter().map(|t| -t).collect();
            let c = n_taps / 2;
            // Pick the centre so the taps sum to zero as exactly as floating point allows.
            let rest: f64 = hp.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, t)| t).sum();
            hp[c] = -rest;
            hp
        }
        FilterRole::Identity => unreachable!(),
    };
    Ok(FirFilter {
        taps,
        role,
        cutoff: Some(cutoff),
    })
}

/// Magnitude of the DTFT of the taps at `n_points` uniform frequencies in `[0, 0.5]`.
pub fn frequency_response(filt: &FirFilter, n_points: usize) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::Validation(format!("n_points must be >= 2, got {n_points}")));
    }
    Ok((0..n_points)
        .map(|i| {
            let w = 0.5 * i as f64 / (n_points - 1) as f64;
            (w, response_at(filt, w).abs())
        })
        .collect())
}

/// Real (zero-phase) response `H(w)` of the centred symmetric filter.
pub fn response_at(filt: &FirFilter, w: f64) -> f64 {
    let c = filt.half_len();
    let taps = filt.taps();
    taps[c]
        + (1..=c)
            .map(|j| 2.0 * taps[c + j] * (2.0 * PI * w * j as f64).cos())
            .sum::<f64>()
}

#[inline]
fn reflect(j: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if j < 0 {
        -j
    } else if j >= n {
        2 * (n - 1) - j
    } else {
        j
    };
    r as usize
}

fn check_size(signal: &ArrayView2<f64>, filt: &FirFilter, axes: FilterAxes) -> Result<()> {
    let half = filt.half_len();
    for axis in [Axis(0), Axis(1)] {
        if axes.includes(axis) && signal.len_of(axis) <= half {
            return Err(Error::Size(format!(
                "axis {} has length {}, filter of {} taps needs more than {}",
                axis.index(),
                signal.len_of(axis),
                filt.taps.len(),
                half
            )));
        }
    }
    Ok(())
}

/// Separable zero-phase filtering along the selected axes.
pub fn apply_filter(signal: ArrayView2<f64>, filt: &FirFilter, axes: FilterAxes) -> Result<Array2<f64>> {
    check_size(&signal, filt, axes)?;
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("signal contains non-finite values".into()));
    }
    let mut out = signal.to_owned();
    if filt.taps.len() == 1 {
        out *= filt.taps[0];
        return Ok(out);
    }
    if axes.includes(Axis(0)) {
        out = filter_axis0(out.view(), &filt.taps, false);
    }
    if axes.includes(Axis(1)) {
        out = filter_axis1(out.view(), &filt.taps, false);
    }
    Ok(out)
}

/// Adjoint of [`apply_filter`] under the same mirror boundary rule.
pub fn apply_filter_adjoint(signal: ArrayView2<f64>, filt: &FirFilter, axes: FilterAxes) -> Result<Array2<f64>> {
    check_size(&signal, filt, axes)?;
    let mut out = signal.to_owned();
    if filt.taps.len() == 1 {
        out *= filt.taps[0];
        return Ok(out);
    }
    // Reverse order of the forward composition.
    if axes.includes(Axis(1)) {
        out = filter_axis1(out.view(), &filt.taps, true);
    }
    if axes.includes(Axis(0)) {
        out = filter_axis0(out.view(), &filt.taps, true);
    }
    Ok(out)
}

fn filter_axis1(x: ArrayView2<f64>, taps: &[f64], adjoint: bool) -> Array2<f64> {
    let (rows, n) = x.dim();
    let c = (taps.len() / 2) as isize;
    let mut out = Array2::zeros((rows, n));
    for (src, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
        let src = src.to_vec();
        let dst = dst.as_slice_mut().expect("owned rows are contiguous");
        filter_line(&src, dst, taps, c, adjoint);
    }
    out
}

fn filter_axis0(x: ArrayView2<f64>, taps: &[f64], adjoint: bool) -> Array2<f64> {
    let (n, cols) = x.dim();
    let c = (taps.len() / 2) as isize;
    let x = x.as_standard_layout();
    let mut out = Array2::<f64>::zeros((n, cols));
    // Whole-row accumulation keeps the inner loop contiguous.
    for i in 0..n {
        for (k, &h) in taps.iter().enumerate() {
            let j = reflect(i as isize + k as isize - c, n);
            let (src_row, dst_row) = if adjoint { (i, j) } else { (j, i) };
            let src = x.row(src_row);
            let mut dst = out.row_mut(dst_row);
            dst.scaled_add(h, &src);
        }
    }
    out
}

fn filter_line(src: &[f64], dst: &mut [f64], taps: &[f64], c: isize, adjoint: bool) {
    let n = src.len();
    for i in 0..n {
        for (k, &h) in taps.iter().enumerate() {
            let j = reflect(i as isize + k as isize - c, n);
            if adjoint {
                dst[j] += h * src[i];
            } else {
                dst[i] += h * src[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn identity_role_is_single_tap() {
        let f = design_fir(FilterRole::Identity, 0.0, 0).unwrap();
        assert_eq!(f.taps(), &[1.0]);
        for (_, m) in frequency_response(&f, 17).unwrap() {
            assert_eq!(m, 1.0);
        }
    }

    #[test]
    fn lowpass_response_shape() {
        let f1 = design_fir(FilterRole::Lowpass, 0.1, 65).unwrap();
        assert!((f1.dc_gain() - 1.0).abs() < 1e-12);
        assert!((response_at(&f1, 0.0) - 1.0).abs() < 1e-12);
        assert!(response_at(&f1, 0.45).abs() <= 0.01);
        let at_cut = response_at(&f1, 0.1).abs();
        assert!((0.4..=0.6).contains(&at_cut), "{at_cut}");
        let resp = frequency_response(&f1, 101).unwrap();
        assert_eq!(resp[0].0, 0.0);
        assert_eq!(resp[100].0, 0.5);
    }

    #[test]
    fn highpass_has_zero_dc() {
        let f2 = design_fir(FilterRole::Highpass, 0.3, 65).unwrap();
        assert!(f2.dc_gain().abs() < 1e-12);
        assert!(response_at(&f2, 0.0).abs() < 1e-12);
        assert!((response_at(&f2, 0.5) - 1.0).abs() < 0.01);
    }

    #[test]
    fn design_validation() {
        assert!(matches!(design_fir(FilterRole::Lowpass, 0.1, 64), Err(Error::Validation(_))));
        assert!(matches!(design_fir(FilterRole::Lowpass, 0.1, 3), Err(Error::Validation(_))));
        assert!(matches!(design_fir(FilterRole::Highpass, 0.5, 65), Err(Error::Validation(_))));
        assert!(matches!(design_fir(FilterRole::Highpass, 0.0, 65), Err(Error::Validation(_))));
        assert!(frequency_response(&FirFilter::identity(), 1).is_err());
    }

    #[test]
    fn constant_passes_lowpass_unchanged() {
        let f1 = design_fir(FilterRole::Lowpass, 0.1, 65).unwrap();
        let x = Array2::from_elem((40, 50), 3.25);
        let y = apply_filter(x.view(), &f1, FilterAxes::Both).unwrap();
        for v in y.iter() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_reproduces_taps() {
        let f = design_fir(FilterRole::Lowpass, 0.2, 9).unwrap();
        let mut x = Array2::zeros((3, 31));
        x[[1, 15]] = 1.0;
        let y = apply_filter(x.view(), &f, FilterAxes::Channels).unwrap();
        for (k, &t) in f.taps().iter().enumerate() {
            assert_eq!(y[[1, 11 + k]], t);
        }
        assert!(y.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn undersized_signal_is_rejected() {
        let f = design_fir(FilterRole::Lowpass, 0.1, 65).unwrap();
        let x = Array2::zeros((32, 64));
        assert!(matches!(apply_filter(x.view(), &f, FilterAxes::Both), Err(Error::Size(_))));
        assert!(apply_filter(x.view(), &f, FilterAxes::Channels).is_ok());
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let f = design_fir(FilterRole::Highpass, 0.3, 15).unwrap();
        for axes in [FilterAxes::Views, FilterAxes::Channels, FilterAxes::Both] {
            let x = random(20, 17, 1);
            let y = random(20, 17, 2);
            let ax = apply_filter(x.view(), &f, axes).unwrap();
            let aty = apply_filter_adjoint(y.view(), &f, axes).unwrap();
            let lhs: f64 = (&ax * &y).sum();
            let rhs: f64 = (&x * &aty).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{axes}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn symmetric_signal_stays_symmetric() {
        let f = design_fir(FilterRole::Lowpass, 0.15, 21).unwrap();
        let n = 41;
        let x = Array2::from_shape_fn((1, n), |(_, j)| {
            let d = (j as f64 - 20.0).abs();
            (d * 0.7).sin() + d * d * 0.01
        });
        let y = apply_filter(x.view(), &f, FilterAxes::Channels).unwrap();
        for j in 0..n {
            assert!((y[[0, j]] - y[[0, n - 1 - j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn axes_commute_for_separable_application() {
        let f = design_fir(FilterRole::Lowpass, 0.1, 13).unwrap();
        let x = random(24, 30, 3);
        let rows_first = filter_axis1(filter_axis0(x.view(), f.taps(), false).view(), f.taps(), false);
        let cols_first = filter_axis0(filter_axis1(x.view(), f.taps(), false).view(), f.taps(), false);
        for (a, b) in rows_first.iter().zip(cols_first.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn csv_round_trip() {
        let f = design_fir(FilterRole::Highpass, 0.3, 65).unwrap();
        let text = f.to_csv();
        assert!(text.starts_with("# role=f2_highpass cutoff=0.3 taps=65\n"));
        assert_eq!(FirFilter::from_csv(&text).unwrap(), f);
        let id = FirFilter::identity().to_csv();
        assert_eq!(id, "# role=identity cutoff=none taps=1\n1\n");
        assert!(FirFilter::from_csv("# role=identity cutoff=none taps=2\n1\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn filtering_is_linear(seed in 0u64..1000, c in -3.0f64..3.0) {
                let f = design_fir(FilterRole::Lowpass, 0.12, 11).unwrap();
                let a = random(12, 14, seed);
                let b = random(12, 14, seed + 1);
                let lhs = apply_filter((&a * c + &b).view(), &f, FilterAxes::Both).unwrap();
                let rhs = apply_filter(a.view(), &f, FilterAxes::Both).unwrap() * c
                    + apply_filter(b.view(), &f, FilterAxes::Both).unwrap();
                for (l, r) in lhs.iter().zip(rhs.iter()) {
                    prop_assert!((l - r).abs() < 1e-12);
                }
            }
        }
    }
}
