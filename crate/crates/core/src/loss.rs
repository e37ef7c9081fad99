//! Frequency-shaped training losses.
//!
//! With target `X`, network input `Y` and output `G = g(Y)`:
//!
//! * standard error `S = X - G`
//! * preservation error `T = Y - G`
//! * composite error `E = f1(S) + alpha * f2(T)`
//!
//! The loss is `sum_n w_n * phi(E_n)` with `phi` squared or absolute. Setting
//! `alpha = 0` leaves a passband-restricted loss on `S` alone; identity filters
//! with `alpha = 1` give `E = X + Y - 2G`, minimised at the midpoint of target
//! and input.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::{apply_filter, apply_filter_adjoint, FilterAxes, FirFilter};

/// Per-element penalty applied to the composite error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phi {
    #[default]
    Squared,
    Absolute,
}

impl Phi {
    fn value(self, e: f64) -> f64 {
        match self {
            Phi::Squared => e * e,
            Phi::Absolute => e.abs(),
        }
    }

    /// Derivative; the absolute-value subgradient at 0 is taken as 0.
    fn derivative(self, e: f64) -> f64 {
        match self {
            Phi::Squared => 2.0 * e,
            Phi::Absolute => {
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phi::Squared => "squared",
            Phi::Absolute => "absolute",
        })
    }
}

impl FromStr for Phi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Phi::Squared),
            "absolute" => Ok(Phi::Absolute),
            other => Err(Error::Validation(format!("phi must be squared or absolute, got `{other}`"))),
        }
    }
}

/// How the per-element weights inside `phi` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Weighting {
    #[default]
    Uniform,
    /// `w = 1 / (max(X, 0) + offset)`: the inverse of a Poisson-plus-floor
    /// variance model of the target, so low-count elements are not drowned
    /// out by bright ones.
    InverseVariance { offset: f64 },
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Uniform => "uniform",
            Weighting::InverseVariance { .. } => "inverse_variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub f1: FirFilter,
    pub f2: FirFilter,
    pub alpha: f64,
    pub phi: Phi,
    /// Optional per-element weights applied inside `phi`.
    pub weights: Option<Array2<f64>>,
    /// Target-derived weights, multiplied into `weights` when both are set.
    pub weighting: Weighting,
    pub axes: FilterAxes,
}

impl LossConfig {
    pub fn new(f1: FirFilter, f2: FirFilter, alpha: f64, phi: Phi) -> Self {
        Self {
            f1,
            f2,
            alpha,
            phi,
            weights: None,
            weighting: Weighting::Uniform,
            axes: FilterAxes::Both,
        }
    }

    /// Identity filters: the composite error is `S + alpha * T`.
    pub fn unfiltered(alpha: f64, phi: Phi) -> Self {
        Self::new(FirFilter::identity(), FirFilter::identity(), alpha, phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Validation("loss weights must be >= 0".into()));
            }
        }
        if let Weighting::InverseVariance { offset } = self.weighting {
            if !(offset > 0.0 && offset.is_finite()) {
                return Err(Error::Validation(format!("variance offset must be > 0, got {offset}")));
            }
        }
        Ok(())
    }

    /// Largest filter support, so callers can size patches.
    pub fn support(&self) -> usize {
        self.f1.half_len().max(self.f2.half_len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient_wrt_output: Array2<f64>,
}

impl LossValue {
    /// The loss averaged over elements instead of summed.
    pub fn mean(&self) -> f64 {
        self.value / self.gradient_wrt_output.len().max(1) as f64
    }
}

fn same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Usage(format!("{what}: shape mismatch {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `S = X - G`.
pub fn standard_error(target: ArrayView2<f64>, output: ArrayView2<f64>) -> Result<Array2<f64>> {
    same_shape(&target, &output, "standard_error")?;
    Ok(&target - &output)
}

/// `T = Y - G`.
pub fn preservation_error(input: ArrayView2<f64>, output: ArrayView2<f64>) -> Result<Array2<f64>> {
    same_shape(&input, &output, "preservation_error")?;
    Ok(&input - &output)
}

/// `sum w (X - G)^2`.
pub fn weighted_mse(target: ArrayView2<f64>, output: ArrayView2<f64>, weights: ArrayView2<f64>) -> Result<f64> {
    same_shape(&target, &output, "weighted_mse")?;
    same_shape(&target, &weights, "weighted_mse weights")?;
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Validation("weights must be >= 0".into()));
    }
    let mut acc = 0.0;
    Zip::from(&target).and(&output).and(&weights).for_each(|&x, &g, &w| {
        acc += w * (x - g) * (x - g);
    });
    Ok(acc)
}

/// Composite filtered loss and its exact gradient with respect to the output.
pub fn composite_loss(
    target: ArrayView2<f64>,
    input: ArrayView2<f64>,
    output: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<LossValue> {
    same_shape(&target, &output, "composite_loss target")?;
    same_shape(&input, &output, "composite_loss input")?;
    cfg.validate()?;
    if let Some(w) = &cfg.weights {
        same_shape(&w.view(), &output, "composite_loss weights")?;
    }

    let s = standard_error(target, output)?;
    let mut e = apply_filter(s.view(), &cfg.f1, cfg.axes)?;
    if cfg.alpha != 0.0 {
        let t = preservation_error(input, output)?;
        let ft = apply_filter(t.view(), &cfg.f2, cfg.axes)?;
        e.scaled_add(cfg.alpha, &ft);
    }

    let phi = cfg.phi;
    let derived = match cfg.weighting {
        Weighting::Uniform => None,
        Weighting::InverseVariance { offset } => {
            let mut w = target.mapv(|x| 1.0 / (x.max(0.0) + offset));
            if let Some(extra) = &cfg.weights {
                w *= extra;
            }
            Some(w)
        }
    };
    let (value, upstream) = match derived.as_ref().or(cfg.weights.as_ref()) {
        None => {
            let value = e.iter().map(|&v| phi.value(v)).sum();
            (value, e.mapv(|v| phi.derivative(v)))
        }
        Some(w) => {
            let value = e.iter().zip(w.iter()).map(|(&v, &w)| w * phi.value(v)).sum();
            let mut up = e.mapv(|v| phi.derivative(v));
            up *= w;
            (value, up)
        }
    };

    // dE/dG = -(f1 + alpha f2), so the gradient is -(f1^T + alpha f2^T) upstream.
    let mut grad = apply_filter_adjoint(upstream.view(), &cfg.f1, cfg.axes)?;
    if cfg.alpha != 0.0 {
        let g2 = apply_filter_adjoint(upstream.view(), &cfg.f2, cfg.axes)?;
        grad.scaled_add(cfg.alpha, &g2);
    }
    grad.mapv_inplace(|v| -v);

    Ok(LossValue {
        value,
        gradient_wrt_output: grad,
    })
}

/// Compares the analytic output gradient of [`composite_loss`] with central
/// finite differences (step `1e-4`) at 100 random coordinates of a random
/// unit-scale instance. Returns the largest relative deviation.
///
/// For [`Phi::Absolute`], coordinates whose perturbation could flip the sign
/// of any composite-error element are skipped.
pub fn loss_gradient_check(cfg: &LossConfig, shape: (usize, usize), seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-4;
    const COORDS: usize = 100;
    let support = cfg.support();
    if shape.0 <= support || shape.1 <= support {
        return Err(Error::Size(format!("shape {shape:?} is smaller than filter support {support}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
    let x = draw();
    let y = draw();
    let mut g = draw();

    let analytic = composite_loss(x.view(), y.view(), g.view(), cfg)?;

    // Largest possible change of one composite-error element per unit step.
    let mut reach = 0.0;
    let mut composite = None;
    if cfg.phi == Phi::Absolute {
        let l1 = |f: &FirFilter| f.taps().iter().map(|t| t.abs()).sum::<f64>();
        let sep = |f: &FirFilter| match cfg.axes {
            FilterAxes::Both => l1(f) * l1(f),
            _ => l1(f),
        };
        reach = sep(&cfg.f1) + cfg.alpha * sep(&cfg.f2);
        let s = &x - &g;
        let mut e = apply_filter(s.view(), &cfg.f1, cfg.axes)?;
        let t = &y - &g;
        e.scaled_add(cfg.alpha, &apply_filter(t.view(), &cfg.f2, cfg.axes)?);
        composite = Some(e);
    }

    let mut pairs = Vec::with_capacity(COORDS);
    let mut attempts = 0;
    while pairs.len() < COORDS && attempts < COORDS * 50 {
        attempts += 1;
        let r = rng.random_range(0..shape.0);
        let c = rng.random_range(0..shape.1);
        if let Some(e) = &composite {
            let rows = affected(r, shape.0, support);
            let cols = affected(c, shape.1, support);
            let near_kink = rows
                .iter()
                .any(|&i| cols.iter().any(|&j| e[[i, j]].abs() <= 2.0 * STEP * reach));
            if near_kink {
                continue;
            }
        }
        let orig = g[[r, c]];
        g[[r, c]] = orig + STEP;
        let plus = composite_loss(x.view(), y.view(), g.view(), cfg)?.value;
        g[[r, c]] = orig - STEP;
        let minus = composite_loss(x.view(), y.view(), g.view(), cfg)?.value;
        g[[r, c]] = orig;
        pairs.push((analytic.gradient_wrt_output[[r, c]], (plus - minus) / (2.0 * STEP)));
    }
    if pairs.is_empty() {
        return Err(Error::Degenerate("no coordinate away from kinks of |.|".into()));
    }
    let scale = pairs.iter().fold(0.0f64, |m, (a, _)| m.max(a.abs()));
    let floor = 1e-6 * scale.max(f64::MIN_POSITIVE);
    Ok(pairs
        .iter()
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}

/// Output indices along one axis whose mirrored filter window reads sample `i`.
fn affected(i: usize, n: usize, support: usize) -> Vec<usize> {
    let (i, n, s) = (i as isize, n as isize, support as isize);
    let mut v: Vec<usize> = [i, -i, 2 * (n - 1) - i]
        .iter()
        .flat_map(|&m| (m - s).max(0)..=(m + s).min(n - 1))
        .map(|k| k as usize)
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}
