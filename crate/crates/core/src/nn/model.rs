//! Trainable mappings `g_theta` from noisy to denoised counts.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{conv3x3, conv3x3_param_grad, mirror_fold, mirror_pad, zero_pad};
use crate::error::{Error, Result};

/// Anything the training loop can optimise: a forward map with a
/// reverse-mode gradient over a flat parameter vector.
pub trait Denoiser: Clone + Send + Sync {
    type Cache: Send;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Forward pass that keeps what [`Denoiser::backward_cached`] needs.
    fn forward_cached(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Self::Cache)>;

    /// Parameter gradient of `<upstream, g(input)>`.
    fn backward_cached(&self, cache: &Self::Cache, upstream: ArrayView2<f64>) -> Result<Vec<f64>>;

    fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    fn backward(&self, input: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (out, cache) = self.forward_cached(input)?;
        if out.dim() != upstream.dim() {
            return Err(Error::Usage(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        self.backward_cached(&cache, upstream)
    }
}

/// Smallest input side accepted by [`DenoiserModel`].
pub const MIN_INPUT_SIDE: usize = 16;

/// Stack of 3x3 convolutions with leaky-ReLU between layers and an optional
/// residual connection from input to output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    widths: Vec<usize>,
    params: Vec<f64>,
    pub residual: bool,
    pub leak: f64,
}

pub struct ConvCache {
    h: usize,
    w: usize,
    /// Mirror-padded input of every layer.
    padded_inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every hidden layer.
    preacts: Vec<Vec<f64>>,
}

impl DenoiserModel {
    pub const STANDARD_WIDTHS: [usize; 6] = [1, 16, 16, 16, 16, 1];

    /// Default architecture: 1 -> 16 -> 16 -> 16 -> 16 -> 1, slope 0.1, residual.
    pub fn standard(seed: u64) -> Self {
        Self::new(&Self::STANDARD_WIDTHS, 0.1, true, seed)
    }

    /// Builds a model with channel `widths` (first and last must be 1).
    /// Kernels are uniform in `+-sqrt(6 / ((1 + leak^2) fan_in))`, which keeps
    /// activation variance roughly constant through the leaky-ReLU stack;
    /// biases start at zero.
    pub fn new(widths: &[usize], leak: f64, residual: bool, seed: u64) -> Self {
        assert!(widths.len() >= 2 && widths[0] == 1 && widths[widths.len() - 1] == 1);
        let mut model = Self::zeros(widths, leak, residual);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..model.n_layers() {
            let (cin, _) = model.layer_io(l);
            let bound = (6.0 / ((1.0 + leak * leak) * (cin * 9) as f64)).sqrt();
            let (w0, w1) = model.weight_range(l);
            for p in &mut model.params[w0..w1] {
                *p = rng.random_range(-bound..bound);
            }
        }
        model
    }

    /// Clears the last layer: a residual model then starts as the identity,
    /// a direct model at zero.
    pub fn zero_output_layer(&mut self) {
        let l = self.n_layers() - 1;
        let (w0, _) = self.weight_range(l);
        let (_, b1) = self.bias_range(l);
        self.params[w0..b1].fill(0.0);
    }

    pub fn zeros(widths: &[usize], leak: f64, residual: bool) -> Self {
        let n: usize = widths.windows(2).map(|p| p[0] * p[1] * 9 + p[1]).sum();
        Self {
            widths: widths.to_vec(),
            params: vec![0.0; n],
            residual,
            leak,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn layer_io(&self, l: usize) -> (usize, usize) {
        (self.widths[l], self.widths[l + 1])
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|p| p[0] * p[1] * 9 + p[1])
            .sum()
    }

    /// Index range of layer `l`'s kernel taps, laid out `[out][in][3][3]`.
    pub fn weight_range(&self, l: usize) -> (usize, usize) {
        let (cin, cout) = self.layer_io(l);
        let start = self.layer_offset(l);
        (start, start + cin * cout * 9)
    }

    /// Index range of layer `l`'s biases (directly after its kernels).
    pub fn bias_range(&self, l: usize) -> (usize, usize) {
        let (_, cout) = self.layer_io(l);
        let (_, end) = self.weight_range(l);
        (end, end + cout)
    }
}

impl Denoiser for DenoiserModel {
    type Cache = ConvCache;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_cached(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ConvCache)> {
        let (h, w) = input.dim();
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
            return Err(Error::Size(format!(
                "denoiser input must be at least {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}, got {h}x{w}"
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("denoiser input contains non-finite values".into()));
        }
        let input_vec: Vec<f64> = input.iter().copied().collect();
        let mut act = input_vec.clone();
        let mut padded_inputs = Vec::with_capacity(self.n_layers());
        let mut preacts = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let (cin, cout) = self.layer_io(l);
            let padded = mirror_pad(&act, cin, h, w);
            let (w0, w1) = self.weight_range(l);
            let (b0, b1) = self.bias_range(l);
            let pre = conv3x3(&padded, &self.params[w0..w1], Some(&self.params[b0..b1]), cin, cout, h, w, false);
            padded_inputs.push(padded);
            if l + 1 < self.n_layers() {
                let leak = self.leak;
                act = pre.iter().map(|&v| if v > 0.0 { v } else { leak * v }).collect();
                preacts.push(pre);
            } else {
                act = pre;
            }
        }
        if self.residual {
            for (o, i) in act.iter_mut().zip(&input_vec) {
                *o += i;
            }
        }
        let out = Array2::from_shape_vec((h, w), act).expect("single output channel");
        Ok((out, ConvCache { h, w, padded_inputs, preacts }))
    }

    fn backward_cached(&self, cache: &ConvCache, upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (h, w) = (cache.h, cache.w);
        if upstream.dim() != (h, w) {
            return Err(Error::Usage(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.dim(),
                (h, w)
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        // The residual branch carries no parameters.
        let mut g: Vec<f64> = upstream.iter().copied().collect();
        for l in (0..self.n_layers()).rev() {
            let (cin, cout) = self.layer_io(l);
            if l + 1 < self.n_layers() {
                let leak = self.leak;
                for (gv, &p) in g.iter_mut().zip(&cache.preacts[l]) {
                    if p <= 0.0 {
                        *gv *= leak;
                    }
                }
            }
            let (w0, w1) = self.weight_range(l);
            let (b0, b1) = self.bias_range(l);
            let (gw, rest) = grad[w0..b1].split_at_mut(w1 - w0);
            debug_assert_eq!(rest.len(), b1 - b0);
            conv3x3_param_grad(&cache.padded_inputs[l], &g, cin, cout, h, w, gw, rest);
            if l > 0 {
                // Gradient over the mirrored input, then folded onto the pixels it copies.
                let padded_g = zero_pad(&g, cout, h, w, 2);
                let full = conv3x3(&padded_g, &self.params[w0..w1], None, cout, cin, h + 2, w + 2, true);
                g = mirror_fold(&full, cin, h, w);
            }
        }
        Ok(grad)
    }
}

/// `g_theta(Y) = theta`: one free value per output element. Isolates the loss
/// from any architecture, so the loss minimiser is exactly attainable.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParameterModel {
    shape: (usize, usize),
    params: Vec<f64>,
}

impl FreeParameterModel {
    pub fn new(initial: Array2<f64>) -> Self {
        let shape = initial.dim();
        Self {
            shape,
            params: initial.iter().copied().collect(),
        }
    }

    pub fn value(&self) -> Array2<f64> {
        Array2::from_shape_vec(self.shape, self.params.clone()).expect("shape is fixed")
    }
}

impl Denoiser for FreeParameterModel {
    type Cache = ();

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_cached(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ())> {
        if input.dim() != self.shape {
            return Err(Error::Usage(format!(
                "free-parameter model has shape {:?}, input is {:?}",
                self.shape,
                input.dim()
            )));
        }
        Ok((self.value(), ()))
    }

    fn backward_cached(&self, _: &(), upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        if upstream.dim() != self.shape {
            return Err(Error::Usage("upstream gradient shape mismatch".into()));
        }
        Ok(upstream.iter().copied().collect())
    }
}

/// Central finite-difference check of the convolutional backward pass on
/// `L(theta) = <u, g_theta(y)>` with random `y`, `u` of `shape`.
///
/// Compares `n_params` randomly chosen coordinates with step `1e-4` and
/// returns the largest relative deviation. Coordinates whose perturbation
/// flips the sign of any pre-activation straddle a leaky-ReLU kink, where the
/// difference quotient is not a derivative estimate; those are redrawn. The
/// denominator is floored at `1e-6` times the largest analytic gradient.
pub fn backprop_gradient_check(model: &DenoiserModel, shape: (usize, usize), n_params: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
    let u = Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
    let analytic = model.backward(y.view(), u.view())?;
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let evaluate = |m: &DenoiserModel| -> Result<(f64, Vec<bool>)> {
        let (out, cache) = m.forward_cached(y.view())?;
        let signs = cache.preacts.iter().flatten().map(|&v| v > 0.0).collect();
        Ok(((&out * &u).sum(), signs))
    };
    let h = 1e-4;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < n_params.min(analytic.len()) {
        attempts += 1;
        if attempts > 100 * n_params.max(1) {
            return Err(Error::Degenerate("too many parameters sit at activation kinks".into()));
        }
        let i = rng.random_range(0..analytic.len());
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let (plus, s_plus) = evaluate(&probe)?;
        probe.params[i] = orig - h;
        let (minus, s_minus) = evaluate(&probe)?;
        probe.params[i] = orig;
        if s_plus != s_minus {
            continue;
        }
        checked += 1;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6 * scale);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
