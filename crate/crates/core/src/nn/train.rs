//! Patch-based stochastic training against the composite loss.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::model::Denoiser;
use crate::error::{Error, Result};
use crate::loss::{composite_loss, LossConfig};
use crate::raster::{Domain, Sinogram};

/// Noisy input `Y_k` and clean target `X_k`, in raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
    pub index: usize,
}

impl TrainingPair {
    pub fn new(input: Array2<f64>, target: Array2<f64>, index: usize) -> Result<Self> {
        if input.dim() != target.dim() {
            return Err(Error::Usage(format!(
                "training pair {index}: input {:?} and target {:?} differ in shape",
                input.dim(),
                target.dim()
            )));
        }
        Ok(Self { input, target, index })
    }

    pub fn from_sinograms(noisy: &Sinogram, clean: &Sinogram, index: usize) -> Result<Self> {
        noisy.expect_domain(Domain::Counts, "training input")?;
        clean.expect_domain(Domain::Counts, "training target")?;
        Self::new(noisy.values.clone(), clean.values.clone(), index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    /// When set, the step size follows a cosine from `learning_rate` at the
    /// first step down to this value at the last.
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Square patch side; `None` trains on whole samples, cycling through the
    /// pairs in order.
    pub patch_size: Option<usize>,
    /// Counts are divided by this before entering the model.
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            final_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            steps_per_epoch: 30,
            batch_size: 8,
            patch_size: Some(64),
            input_scale: 1.0,
            seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr > 0.0 && lr <= self.learning_rate) {
                return Err(Error::Validation(format!(
                    "final learning rate must lie in (0, {}], got {lr}",
                    self.learning_rate
                )));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("moment decays must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation("epsilon must be > 0".into()));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs, steps_per_epoch and batch_size must be >= 1".into()));
        }
        if !(self.input_scale > 0.0) {
            return Err(Error::Validation("input scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Step size for zero-based step `t`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        match self.final_learning_rate {
            None => self.learning_rate,
            Some(end) => {
                let span = self.total_steps().saturating_sub(1).max(1) as f64;
                let frac = (t as f64 / span).min(1.0);
                end + 0.5 * (self.learning_rate - end) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<M> {
    pub model: M,
    pub optimizer: Adam,
    pub step: usize,
    pub seed: u64,
    /// Mean per-sample loss of every step.
    pub loss_history: Vec<f64>,
    /// Mean of `loss_history` over each epoch.
    pub epoch_losses: Vec<f64>,
}

impl<M> TrainState<M> {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// `step,loss` CSV of the per-step history.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", i + 1, l));
        }
        s
    }
}

/// One `(input, target)` sample, already scaled into model units.
pub struct Sample {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
}

/// Summed loss and summed parameter gradient over `samples`. Per-sample work
/// may run in parallel; the reduction always runs in sample order.
pub fn batch_gradient<M: Denoiser>(model: &M, samples: &[Sample], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_iter()
        .map(|smp| {
            let (out, cache) = model.forward_cached(smp.input.view())?;
            let lv = composite_loss(smp.target.view(), smp.input.view(), out.view(), cfg)?;
            let g = model.backward_cached(&cache, lv.gradient_wrt_output.view())?;
            Ok((lv.value, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params().len()];
    for r in per_sample {
        let (l, g) = r?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

fn extract(pair: &TrainingPair, r: usize, c: usize, (h, w): (usize, usize), scale: f64) -> Sample {
    Sample {
        input: pair.input.slice(s![r..r + h, c..c + w]).mapv(|v| v / scale),
        target: pair.target.slice(s![r..r + h, c..c + w]).mapv(|v| v / scale),
    }
}

/// Minimises the summed composite loss over the pairs with Adam.
///
/// Each step draws `batch_size` random patches (pair and corner uniform) from
/// a ChaCha8 stream seeded with `hyper.seed`, so runs are reproducible. Fails
/// with [`Error::Diverged`] when a step loss is non-finite or exceeds 1000x
/// the first step's loss.
pub fn train<M: Denoiser>(
    model: M,
    pairs: &[TrainingPair],
    cfg: &LossConfig,
    hyper: &OptimizerSettings,
) -> Result<TrainState<M>> {
    if pairs.is_empty() {
        return Err(Error::Usage("training needs at least one pair".into()));
    }
    hyper.validate()?;
    cfg.validate()?;
    let shape = pairs[0].input.dim();
    if let Some(p) = pairs.iter().find(|p| p.input.dim() != shape) {
        return Err(Error::Usage(format!("pair {} has a different shape", p.index)));
    }
    if let Some(size) = hyper.patch_size {
        if size > shape.0 || size > shape.1 {
            return Err(Error::Size(format!("patch size {size} exceeds sample shape {shape:?}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut state = TrainState {
        optimizer: Adam::new(model.params().len(), hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.epsilon),
        model,
        step: 0,
        seed: hyper.seed,
        loss_history: Vec::with_capacity(hyper.total_steps()),
        epoch_losses: Vec::with_capacity(hyper.epochs),
    };
    let mut first_loss = None;
    let mut cursor = 0usize;

    for _ in 0..hyper.epochs {
        let mut epoch_sum = 0.0;
        for _ in 0..hyper.steps_per_epoch {
            let batch: Vec<Sample> = (0..hyper.batch_size)
                .map(|_| match hyper.patch_size {
                    Some(size) => {
                        let k = rng.random_range(0..pairs.len());
                        let r = rng.random_range(0..=shape.0 - size);
                        let c = rng.random_range(0..=shape.1 - size);
                        extract(&pairs[k], r, c, (size, size), hyper.input_scale)
                    }
                    None => {
                        let k = cursor % pairs.len();
                        cursor += 1;
                        extract(&pairs[k], 0, 0, shape, hyper.input_scale)
                    }
                })
                .collect();
            let (total, grad) = batch_gradient(&state.model, &batch, cfg)?;
            let loss = total / batch.len() as f64;
            state.step += 1;
            state.loss_history.push(loss);
            let limit = 1e3 * *first_loss.get_or_insert(loss);
            if !loss.is_finite() || loss > limit {
                return Err(Error::Diverged {
                    step: state.step,
                    loss,
                    limit,
                    history: state.loss_history.clone(),
                });
            }
            state.optimizer.learning_rate = hyper.learning_rate_at(state.step - 1);
            state.optimizer.step(state.model.params_mut(), &grad);
            epoch_sum += loss;
        }
        state.epoch_losses.push(epoch_sum / hyper.steps_per_epoch as f64);
    }
    Ok(state)
}

/// Mean per-sample loss of `model` over whole pairs, in model units.
pub fn evaluate_loss<M: Denoiser>(model: &M, pairs: &[TrainingPair], cfg: &LossConfig, input_scale: f64) -> Result<f64> {
    let samples: Vec<Sample> = pairs
        .iter()
        .map(|p| Sample {
            input: p.input.mapv(|v| v / input_scale),
            target: p.target.mapv(|v| v / input_scale),
        })
        .collect();
    let mut total = 0.0;
    for smp in &samples {
        let out = model.forward(smp.input.view())?;
        total += composite_loss(smp.target.view(), smp.input.view(), out.view(), cfg)?.value;
    }
    Ok(total / samples.len() as f64)
}
