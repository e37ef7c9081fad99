//! Beer-Lambert conversion and photon / electronic noise synthesis.
//!
//! Poisson draws use three regimes so that a given seed reproduces exactly:
//!
//! * `lambda < 30`: sequential inversion of the CDF.
//! * `30 <= lambda < 1000`: Hoermann's transformed rejection with squeeze (PTRS).
//! * `lambda >= 1000`: `round(lambda + sqrt(lambda) z)` clamped at zero.
//!
//! Elements are visited in row-major order from one ChaCha8 stream; the
//! Gaussian electronic term is drawn right after each Poisson draw, and only
//! when `sigma_e > 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::raster::{Domain, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Incident photons per ray.
    pub i0: f64,
    /// Electronic noise standard deviation, in counts.
    pub sigma_e: f64,
    pub seed: u64,
    /// Lower clamp applied after noise. `None` leaves draws untouched.
    pub floor: Option<f64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::Validation(format!("i0 must be > 0, got {}", self.i0)));
        }
        if !(self.sigma_e >= 0.0 && self.sigma_e.is_finite()) {
            return Err(Error::Validation(format!("sigma_e must be >= 0, got {}", self.sigma_e)));
        }
        if let Some(f) = self.floor {
            if !f.is_finite() {
                return Err(Error::Validation("noise floor must be finite".into()));
            }
        }
        Ok(())
    }
}

/// `counts = i0 * exp(-p)` per element.
pub fn attenuation_to_counts(sino: &Sinogram, i0: f64) -> Result<Sinogram> {
    sino.expect_domain(Domain::LineIntegral, "attenuation_to_counts")?;
    if !(i0 > 0.0) {
        return Err(Error::Validation(format!("i0 must be > 0, got {i0}")));
    }
    Ok(Sinogram {
        values: sino.values.mapv(|p| i0 * (-p).exp()),
        domain: Domain::Counts,
        view_angles: sino.view_angles.clone(),
        channel_pitch_mm: sino.channel_pitch_mm,
    })
}

pub fn add_noise(sino: &Sinogram, spec: &NoiseSpec) -> Result<Sinogram> {
    sino.expect_domain(Domain::Counts, "add_noise")?;
    spec.validate()?;
    if sino.values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Data("clean counts must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = sino.values.mapv(|lambda| {
        let mut v = poisson(&mut rng, lambda) as f64;
        if spec.sigma_e > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += spec.sigma_e * z;
        }
        match spec.floor {
            Some(f) => v.max(f),
            None => v,
        }
    });
    Ok(Sinogram {
        values,
        domain: Domain::Counts,
        view_angles: sino.view_angles.clone(),
        channel_pitch_mm: sino.channel_pitch_mm,
    })
}

/// Draws one Poisson variate with mean `lambda >= 0`.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        0
    } else if lambda < 30.0 {
        poisson_inversion(rng, lambda)
    } else if lambda < 1000.0 {
        poisson_ptrs(rng, lambda)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (lambda + lambda.sqrt() * z).round().max(0.0) as u64
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        // Guard against cdf stalling below u through rounding.
        if p < f64::MIN_POSITIVE && k as f64 > lambda {
            break;
        }
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// `ln(k!)` via an exact table for small `k` and the Stirling series beyond.
pub(crate) fn ln_factorial(k: f64) -> f64 {
    if k < 16.0 {
        let mut acc = 0.0;
        let mut i = 2.0;
        while i <= k {
            acc += f64::ln(i);
            i += 1.0;
        }
        return acc;
    }
    let x = k + 1.0;
    let x2 = x * x;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn counts(values: Array2<f64>) -> Sinogram {
        Sinogram::new(values, Domain::Counts, 1.0).unwrap()
    }

    fn spec(sigma_e: f64, seed: u64) -> NoiseSpec {
        NoiseSpec { i0: 1e4, sigma_e, seed, floor: None }
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn beer_lambert_values() {
        let p = Sinogram::new(
            ndarray::array![[0.0, std::f64::consts::LN_2, 30.0]],
            Domain::LineIntegral,
            1.0,
        )
        .unwrap();
        let c = attenuation_to_counts(&p, 1e4).unwrap();
        assert_eq!(c.values[[0, 0]], 1e4);
        assert!((c.values[[0, 1]] - 5e3).abs() < 1e-9);
        let tiny = c.values[[0, 2]];
        assert!(tiny > 0.0 && (tiny - 9.357623e-10).abs() < 1e-15);
        assert_eq!(c.domain, Domain::Counts);
        assert!(matches!(attenuation_to_counts(&c, 1e4), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_line_integrals_give_constant_i0() {
        let p = Sinogram::new(Array2::zeros((3, 5)), Domain::LineIntegral, 1.0).unwrap();
        let c = attenuation_to_counts(&p, 123.0).unwrap();
        assert!(c.values.iter().all(|&v| v == 123.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let clean = counts(Array2::from_elem((20, 30), 500.0));
        let a = add_noise(&clean, &spec(5.0, 42)).unwrap();
        let b = add_noise(&clean, &spec(5.0, 42)).unwrap();
        assert_eq!(a.values, b.values);
        let c = add_noise(&clean, &spec(5.0, 43)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn without_electronic_noise_draws_are_integers() {
        let clean = counts(Array2::from_shape_fn((16, 64), |(r, c)| (r * 64 + c) as f64 * 1.7));
        let noisy = add_noise(&clean, &spec(0.0, 9)).unwrap();
        assert!(noisy.values.iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
    }

    #[test]
    fn floor_clamps_after_noise() {
        let clean = counts(Array2::from_elem((10, 10), 0.2));
        let mut s = spec(5.0, 1);
        s.floor = Some(0.5);
        let noisy = add_noise(&clean, &s).unwrap();
        assert!(noisy.values.iter().all(|&v| v >= 0.5));
    }

    #[test]
    fn rejects_bad_inputs() {
        let clean = counts(Array2::from_elem((2, 2), 1.0));
        assert!(matches!(add_noise(&clean, &NoiseSpec { i0: 0.0, ..spec(0.0, 1) }), Err(Error::Validation(_))));
        assert!(matches!(add_noise(&clean, &spec(-1.0, 1)), Err(Error::Validation(_))));
        let mut neg = clean.clone();
        neg.values[[0, 0]] = -1.0;
        assert!(matches!(add_noise(&neg, &spec(0.0, 1)), Err(Error::Data(_))));
        let li = Sinogram::new(Array2::zeros((2, 2)), Domain::LineIntegral, 1.0).unwrap();
        assert!(matches!(add_noise(&li, &spec(0.0, 1)), Err(Error::Usage(_))));
    }

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for k in [0u32, 1, 5, 15, 16, 17, 40, 200, 999] {
            let direct: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
            assert!((ln_factorial(k as f64) - direct).abs() < 1e-10 * direct.max(1.0), "k={k}");
        }
    }

    #[test]
    fn each_regime_has_poisson_moments() {
        // Mean within 4 standard errors, variance within 3% at 2e5 draws.
        for &lambda in &[0.5f64, 7.0, 29.5, 30.0, 64.0, 400.0, 999.0, 1000.0, 5000.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(lambda.to_bits());
            let draws: Vec<f64> = (0..200_000).map(|_| poisson(&mut rng, lambda) as f64).collect();
            let (mean, var) = moments(&draws);
            let se = (lambda / draws.len() as f64).sqrt();
            assert!((mean - lambda).abs() < 4.0 * se, "lambda {lambda}: mean {mean}");
            assert!((var / lambda - 1.0).abs() < 0.03, "lambda {lambda}: var {var}");
        }
    }

    #[test]
    fn ptrs_matches_pmf() {
        // Chi-square goodness of fit against the exact pmf at lambda = 50.
        let lambda = 50.0f64;
        let n = 200_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hist = vec![0usize; 120];
        for _ in 0..n {
            let k = poisson(&mut rng, lambda) as usize;
            hist[k.min(119)] += 1;
        }
        let mut chi2 = 0.0;
        let mut dof = 0;
        for k in 25..80usize {
            let pmf = (-lambda + k as f64 * lambda.ln() - ln_factorial(k as f64)).exp();
            let expected = pmf * n as f64;
            chi2 += (hist[k] as f64 - expected).powi(2) / expected;
            dof += 1;
        }
        // 55 bins: the 99.9% quantile of chi2(55) is about 93.
        assert!(chi2 < 93.0, "chi2 = {chi2} over {dof} bins");
    }

    #[test]
    fn different_seeds_are_uncorrelated() {
        let clean = counts(Array2::from_elem((100, 1000), 200.0));
        let a = add_noise(&clean, &spec(5.0, 11)).unwrap();
        let b = add_noise(&clean, &spec(5.0, 12)).unwrap();
        let (ma, va) = moments(a.values.as_slice().unwrap());
        let (mb, vb) = moments(b.values.as_slice().unwrap());
        let cov = a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.values.len() as f64 - 1.0);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.01, "correlation {corr}");
    }
}
