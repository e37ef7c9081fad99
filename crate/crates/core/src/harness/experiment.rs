//! File-based experiment stages.
//!
//! Every stage reads the artifacts of the stages before it from the output
//! directory and writes its own atomically, so `run-all` is the same as
//! running the stages one after another. Layout under `output_dir`:
//!
//! ```text
//! config.txt                         resolved configuration
//! phantoms/phantom_<k>.rfl           attenuation images, 1/mm
//! sinograms/clean_<k>.rfl            noise-free counts
//! sinograms/train_<k>.rfl            noisy counts, one frame per realization
//! sinograms/heldout_<k>.rfl          noisy counts, one frame per ensemble member
//! filters/f1.csv, filters/f2.csv     loss filters
//! models/alpha_<a>.dnz               trained checkpoints
//! models/alpha_<a>_loss.csv          per-step training loss
//! denoised/alpha_<a>_heldout_<k>.rfl denoised held-out counts
//! recon/<variant>_heldout_<k>.rfl    reconstructions, one frame per member
//! nps/<variant>.csv                  normalised NPS of held-out phantom 0
//! metrics/<variant>.csv              band energies and ratios
//! report.csv, entropy.csv            summary tables
//! ```
//!
//! `<variant>` is `uncorrected` or `alpha_<a>`. Phantoms `0..n_train` are used
//! for training, the rest are held out and indexed from 0.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};

use super::config::{alpha_label, ExperimentConfig};
use super::report::{emit_report, entropy_table, ReportRow};
use super::seeds::{self, stage_seed};
use crate::error::{Error, Result};
use crate::filters::{apply_filter, design_fir, FilterRole, FirFilter};
use crate::loss::{LossConfig, Weighting};
use crate::nn::{denoise_sinogram, load_checkpoint, save_checkpoint, train, DenoiserModel, OptimizerSettings, Tiling, TrainingPair};
use crate::nps::{band_energy, entropy_flatness, estimate_nps, normalize_nps, NpsCurve, RoiSpec};
use crate::raster::{encode_pgm, read_rfl, uniform_angles, write_atomic, write_rfl, Domain, ImageGrid, Sinogram};
use crate::recon::{counts_to_line_integrals, fbp, ReconConfig};
use crate::sim::{add_noise, attenuation_to_counts, generate_phantom, phantom_variant, radon_forward, Geometry, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Phantom,
    Simulate,
    Train,
    Infer,
    Recon,
    Nps,
    Report,
    RunAll,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Phantom,
        Stage::Simulate,
        Stage::Train,
        Stage::Infer,
        Stage::Recon,
        Stage::Nps,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Simulate => "simulate",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Recon => "recon",
            Stage::Nps => "nps",
            Stage::Report => "report",
            Stage::RunAll => "run-all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::PIPELINE
            .iter()
            .chain(std::iter::once(&Stage::RunAll))
            .find(|st| st.name() == s.trim())
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown stage `{s}`")))
    }
}

/// Output being measured: the raw noisy data or a trained model's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Uncorrected,
    Alpha(f64),
}

impl Variant {
    pub fn tag(self) -> String {
        match self {
            Variant::Uncorrected => "uncorrected".into(),
            Variant::Alpha(a) => format!("alpha_{}", alpha_label(a)),
        }
    }
}

/// Artifact paths for one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn phantom(&self, k: usize) -> PathBuf {
        self.root.join(format!("phantoms/phantom_{k}.rfl"))
    }
    pub fn clean(&self, k: usize) -> PathBuf {
        self.root.join(format!("sinograms/clean_{k}.rfl"))
    }
    pub fn train_noisy(&self, k: usize) -> PathBuf {
        self.root.join(format!("sinograms/train_{k}.rfl"))
    }
    pub fn heldout_noisy(&self, h: usize) -> PathBuf {
        self.root.join(format!("sinograms/heldout_{h}.rfl"))
    }
    pub fn filter(&self, name: &str) -> PathBuf {
        self.root.join(format!("filters/{name}.csv"))
    }
    pub fn model(&self, alpha: f64) -> PathBuf {
        self.root.join(format!("models/alpha_{}.dnz", alpha_label(alpha)))
    }
    pub fn loss_history(&self, alpha: f64) -> PathBuf {
        self.root.join(format!("models/alpha_{}_loss.csv", alpha_label(alpha)))
    }
    pub fn denoised(&self, alpha: f64, h: usize) -> PathBuf {
        self.root.join(format!("denoised/alpha_{}_heldout_{h}.rfl", alpha_label(alpha)))
    }
    pub fn recon(&self, v: Variant, h: usize) -> PathBuf {
        self.root.join(format!("recon/{}_heldout_{h}.rfl", v.tag()))
    }
    pub fn nps(&self, v: Variant) -> PathBuf {
        self.root.join(format!("nps/{}.csv", v.tag()))
    }
    pub fn metrics(&self, v: Variant) -> PathBuf {
        self.root.join(format!("metrics/{}.csv", v.tag()))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }
    pub fn entropy(&self) -> PathBuf {
        self.root.join("entropy.csv")
    }
}

/// Band energies of one variant summed over all held-out frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandMetrics {
    /// `E_low(X - G)`
    pub inband_residual: f64,
    /// `E_low(X - Y)`
    pub inband_reference: f64,
    /// `|f2 (G - Y)|^2`, the energy of the change inside the f2 passband
    pub highband_change: f64,
    /// `|f2 (Y - X)|^2`
    pub highband_reference: f64,
}

impl BandMetrics {
    pub fn inband_residual_ratio(&self) -> f64 {
        self.inband_residual / self.inband_reference
    }

    pub fn highband_preservation_ratio(&self) -> f64 {
        1.0 - self.highband_change / self.highband_reference
    }

    fn to_csv(self) -> String {
        format!(
            "key,value\ninband_residual_energy,{:e}\ninband_reference_energy,{:e}\nhighband_change_energy,{:e}\nhighband_reference_energy,{:e}\ninband_residual_ratio,{:e}\nhighband_preservation_ratio,{:e}\n",
            self.inband_residual,
            self.inband_reference,
            self.highband_change,
            self.highband_reference,
            self.inband_residual_ratio(),
            self.highband_preservation_ratio()
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<f64> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(',')))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("metrics file lacks `{key}`")))
        };
        Ok(Self {
            inband_residual: get("inband_residual_energy")?,
            inband_reference: get("inband_reference_energy")?,
            highband_change: get("highband_change_energy")?,
            highband_reference: get("highband_reference_energy")?,
        })
    }
}

/// Band energy summed over non-overlapping `64 x 64` patches of the sinogram
/// interior (16-sample margin), which keeps detector-edge effects out.
pub fn interior_band_energy(signal: ArrayView2<f64>, band: (f64, f64)) -> Result<f64> {
    const PATCH: usize = 64;
    const MARGIN: usize = 16;
    let (h, w) = signal.dim();
    let margin = if h >= PATCH + 2 * MARGIN && w >= PATCH + 2 * MARGIN { MARGIN } else { 0 };
    let (ph, pw) = (PATCH.min(h), PATCH.min(w));
    let mut total = 0.0;
    let mut r = margin;
    while r + ph <= h - margin {
        let mut c = margin;
        while c + pw <= w - margin {
            total += band_energy(signal.slice(s![r..r + ph, c..c + pw]), band)?;
            c += pw;
        }
        r += ph;
    }
    Ok(total)
}

/// Orchestrates the stages for one configuration.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    /// Print progress lines to stderr.
    pub verbose: bool,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg.output_dir.clone());
        Ok(Self { cfg, layout, verbose: false })
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[ctloss] {}", msg.as_ref());
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::covering(self.cfg.grid_size, self.cfg.pixel_pitch_mm, self.cfg.n_views, self.cfg.n_channels)
    }

    fn recon_config(&self) -> ReconConfig {
        ReconConfig {
            grid_size: self.cfg.grid_size,
            pixel_pitch_mm: self.cfg.pixel_pitch_mm,
            apodization: self.cfg.apodization,
            i0: self.cfg.i0,
            floor: self.cfg.log_floor,
        }
    }

    pub fn filters(&self) -> Result<(FirFilter, FirFilter)> {
        Ok((
            design_fir(FilterRole::Lowpass, self.cfg.f1_cutoff, self.cfg.f1_taps)?,
            design_fir(FilterRole::Highpass, self.cfg.f2_cutoff, self.cfg.f2_taps)?,
        ))
    }

    pub fn loss_config(&self, alpha: f64) -> Result<LossConfig> {
        let (f1, f2) = self.filters()?;
        let mut cfg = LossConfig::new(f1, f2, alpha, self.cfg.phi);
        cfg.axes = self.cfg.filter_axes;
        if self.cfg.inverse_variance_weights {
            // Count variance i0 X + sigma_e^2 in units of i0^2, with a one-count floor.
            let offset = (self.cfg.sigma_e * self.cfg.sigma_e + 1.0) / self.cfg.i0;
            cfg.weighting = Weighting::InverseVariance { offset };
        }
        Ok(cfg)
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            learning_rate: self.cfg.learning_rate,
            final_learning_rate: self.cfg.final_learning_rate,
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            epsilon: 1e-8,
            epochs: self.cfg.epochs,
            steps_per_epoch: self.cfg.steps_per_epoch,
            batch_size: self.cfg.batch_size,
            patch_size: self.cfg.patch_size,
            input_scale: self.cfg.i0,
            seed: stage_seed(self.cfg.seed, seeds::PATCHES, 0),
        }
    }

    pub fn roi(&self) -> RoiSpec {
        let (r, c) = self.cfg.roi_center();
        RoiSpec {
            center_row: r,
            center_col: c,
            width: self.cfg.roi_width,
            height: self.cfg.roi_height,
            ensemble: self.cfg.ensemble,
        }
    }

    pub fn variants(&self) -> Vec<Variant> {
        std::iter::once(Variant::Uncorrected)
            .chain(self.cfg.alpha_list.iter().map(|&a| Variant::Alpha(a)))
            .collect()
    }

    fn read_frames(&self, path: &Path, shape: (usize, usize), frames: usize) -> Result<Vec<Array2<f64>>> {
        let data = read_rfl(path).map_err(|e| match e {
            Error::Io(io) => Error::Data(format!("cannot read {}: {io} (run the earlier stages first)", path.display())),
            other => other,
        })?;
        if data.len() != frames || data.iter().any(|f| f.dim() != shape) {
            return Err(Error::Data(format!(
                "{} holds {} frame(s) of {:?}, expected {frames} of {shape:?}",
                path.display(),
                data.len(),
                data.first().map(|f| f.dim())
            )));
        }
        Ok(data)
    }

    fn sino_shape(&self) -> (usize, usize) {
        (self.cfg.n_views, self.cfg.n_channels)
    }

    fn counts(&self, values: Array2<f64>) -> Result<Sinogram> {
        Ok(Sinogram {
            values,
            domain: Domain::Counts,
            view_angles: uniform_angles(self.cfg.n_views),
            channel_pitch_mm: self.geometry().channel_pitch_mm,
        })
    }

    /// Runs one stage, or the whole pipeline for [`Stage::RunAll`].
    pub fn run_stage(&self, stage: Stage) -> Result<Option<Vec<ReportRow>>> {
        if stage == Stage::RunAll {
            let mut rows = None;
            for st in Stage::PIPELINE {
                rows = self.run_stage(st)?;
            }
            return Ok(rows);
        }
        self.log(format!("stage {stage}"));
        let result = match stage {
            Stage::Phantom => self.stage_phantom().map(|_| None),
            Stage::Simulate => self.stage_simulate().map(|_| None),
            Stage::Train => self.stage_train().map(|_| None),
            Stage::Infer => self.stage_infer().map(|_| None),
            Stage::Recon => self.stage_recon().map(|_| None),
            Stage::Nps => self.stage_nps().map(|_| None),
            Stage::Report => self.stage_report().map(Some),
            Stage::RunAll => unreachable!(),
        };
        result.map_err(|e| e.in_stage(stage.name()))
    }

    fn stage_phantom(&self) -> Result<()> {
        write_atomic(&self.layout.config(), self.cfg.to_text().as_bytes())?;
        for k in 0..self.cfg.n_phantoms {
            let spec = phantom_variant(
                stage_seed(self.cfg.seed, seeds::PHANTOM, k as u64),
                self.cfg.grid_size,
                self.cfg.pixel_pitch_mm,
            );
            let img = generate_phantom(&spec)?;
            write_rfl(&self.layout.phantom(k), &[img.data.view()])?;
            if self.cfg.pgm_export {
                let pgm = encode_pgm(img.data.view(), self.cfg.pgm_window, self.cfg.pgm_level)?;
                write_atomic(&self.layout.phantom(k).with_extension("pgm"), &pgm)?;
            }
        }
        Ok(())
    }

    fn stage_simulate(&self) -> Result<()> {
        let n = self.cfg.grid_size;
        let geom = self.geometry();
        for k in 0..self.cfg.n_phantoms {
            let img = self.read_frames(&self.layout.phantom(k), (n, n), 1)?.remove(0);
            let lines = radon_forward(&ImageGrid::new(img, self.cfg.pixel_pitch_mm), &geom)?;
            let clean = attenuation_to_counts(&lines, self.cfg.i0)?;
            write_rfl(&self.layout.clean(k), &[clean.values.view()])?;
            let (stage, frames, path) = if k < self.cfg.n_train {
                (seeds::TRAIN_NOISE, self.cfg.train_realizations, self.layout.train_noisy(k))
            } else {
                (seeds::HELDOUT_NOISE, self.cfg.ensemble, self.layout.heldout_noisy(k - self.cfg.n_train))
            };
            let noisy: Vec<Array2<f64>> = (0..frames)
                .map(|r| {
                    let spec = NoiseSpec {
                        i0: self.cfg.i0,
                        sigma_e: self.cfg.sigma_e,
                        seed: stage_seed(self.cfg.seed, stage, seeds::realization_index(k, r)),
                        floor: self.cfg.noise_floor,
                    };
                    add_noise(&clean, &spec).map(|s| s.values)
                })
                .collect::<Result<_>>()?;
            let views: Vec<ArrayView2<f64>> = noisy.iter().map(|a| a.view()).collect();
            write_rfl(&path, &views)?;
            self.log(format!("simulated phantom {k}"));
        }
        Ok(())
    }

    fn training_pairs(&self) -> Result<Vec<TrainingPair>> {
        let shape = self.sino_shape();
        let mut pairs = Vec::new();
        for k in 0..self.cfg.n_train {
            let clean = self.read_frames(&self.layout.clean(k), shape, 1)?.remove(0);
            for (r, noisy) in self
                .read_frames(&self.layout.train_noisy(k), shape, self.cfg.train_realizations)?
                .into_iter()
                .enumerate()
            {
                pairs.push(TrainingPair::new(noisy, clean.clone(), k * self.cfg.train_realizations + r)?);
            }
        }
        Ok(pairs)
    }

    fn stage_train(&self) -> Result<()> {
        let (f1, f2) = self.filters()?;
        write_atomic(&self.layout.filter("f1"), f1.to_csv().as_bytes())?;
        write_atomic(&self.layout.filter("f2"), f2.to_csv().as_bytes())?;
        let pairs = self.training_pairs()?;
        let hyper = self.optimizer_settings();
        for &alpha in &self.cfg.alpha_list {
            let mut model = DenoiserModel::new(
                &DenoiserModel::STANDARD_WIDTHS,
                0.1,
                self.cfg.residual_output,
                stage_seed(self.cfg.seed, seeds::INIT, 0),
            );
            model.zero_output_layer();
            let state = match train(model, &pairs, &self.loss_config(alpha)?, &hyper) {
                Ok(st) => st,
                Err(Error::Diverged { step, loss, limit, history }) => {
                    let mut csv = String::from("step,loss\n");
                    for (i, l) in history.iter().enumerate() {
                        csv.push_str(&format!("{},{:e}\n", i + 1, l));
                    }
                    write_atomic(&self.layout.loss_history(alpha), csv.as_bytes())?;
                    return Err(Error::Diverged { step, loss, limit, history });
                }
                Err(e) => return Err(e),
            };
            save_checkpoint(&self.layout.model(alpha), &state.model)?;
            write_atomic(&self.layout.loss_history(alpha), state.history_csv().as_bytes())?;
            self.log(format!("trained alpha {alpha}: final epoch loss {:e}", state.final_loss()));
        }
        Ok(())
    }

    fn stage_infer(&self) -> Result<()> {
        let shape = self.sino_shape();
        let tiling = (self.cfg.infer_tile > 0).then(|| Tiling {
            tile: self.cfg.infer_tile,
            overlap: 16,
        });
        for &alpha in &self.cfg.alpha_list {
            let model = load_checkpoint(&self.layout.model(alpha))?;
            for h in 0..self.cfg.n_heldout() {
                let frames = self.read_frames(&self.layout.heldout_noisy(h), shape, self.cfg.ensemble)?;
                let out: Vec<Array2<f64>> = frames
                    .into_iter()
                    .map(|f| denoise_sinogram(&model, &self.counts(f)?, self.cfg.i0, tiling).map(|s| s.values))
                    .collect::<Result<_>>()?;
                let views: Vec<ArrayView2<f64>> = out.iter().map(|a| a.view()).collect();
                write_rfl(&self.layout.denoised(alpha, h), &views)?;
            }
            self.log(format!("denoised held-out data with alpha {alpha}"));
        }
        Ok(())
    }

    /// Noisy (uncorrected) or denoised held-out frames of phantom `h`.
    fn variant_frames(&self, v: Variant, h: usize) -> Result<Vec<Array2<f64>>> {
        let path = match v {
            Variant::Uncorrected => self.layout.heldout_noisy(h),
            Variant::Alpha(a) => self.layout.denoised(a, h),
        };
        self.read_frames(&path, self.sino_shape(), self.cfg.ensemble)
    }

    fn stage_recon(&self) -> Result<()> {
        let rc = self.recon_config();
        for v in self.variants() {
            for h in 0..self.cfg.n_heldout() {
                let images: Vec<Array2<f64>> = self
                    .variant_frames(v, h)?
                    .into_iter()
                    .map(|f| {
                        let lines = counts_to_line_integrals(&self.counts(f)?, self.cfg.i0, self.cfg.log_floor)?;
                        fbp(&lines, &rc).map(|img| img.data)
                    })
                    .collect::<Result<_>>()?;
                let views: Vec<ArrayView2<f64>> = images.iter().map(|a| a.view()).collect();
                let path = self.layout.recon(v, h);
                write_rfl(&path, &views)?;
                if self.cfg.pgm_export {
                    let pgm = encode_pgm(images[0].view(), self.cfg.pgm_window, self.cfg.pgm_level)?;
                    write_atomic(&path.with_extension("pgm"), &pgm)?;
                }
            }
            self.log(format!("reconstructed {}", v.tag()));
        }
        Ok(())
    }

    /// Band energies of `G` against the clean and noisy held-out sinograms,
    /// in units of `i0`. The low band is radial; the high band is whatever
    /// the loss highpass passes, so it follows `filter_axes`.
    pub fn band_metrics(&self, v: Variant) -> Result<BandMetrics> {
        let shape = self.sino_shape();
        let low = (0.0, self.cfg.f1_cutoff);
        let (_, f2) = self.filters()?;
        let high = |d: Array2<f64>| -> Result<f64> {
            interior_band_energy(apply_filter(d.view(), &f2, self.cfg.filter_axes)?.view(), (0.0, 0.5))
        };
        let scale = self.cfg.i0;
        let mut m = BandMetrics {
            inband_residual: 0.0,
            inband_reference: 0.0,
            highband_change: 0.0,
            highband_reference: 0.0,
        };
        for h in 0..self.cfg.n_heldout() {
            let clean = self.read_frames(&self.layout.clean(self.cfg.n_train + h), shape, 1)?.remove(0) / scale;
            let noisy = self.read_frames(&self.layout.heldout_noisy(h), shape, self.cfg.ensemble)?;
            let outputs = self.variant_frames(v, h)?;
            for (y, g) in noisy.iter().zip(&outputs) {
                let y = y / scale;
                let g = g / scale;
                m.inband_residual += interior_band_energy((&clean - &g).view(), low)?;
                m.inband_reference += interior_band_energy((&clean - &y).view(), low)?;
                m.highband_change += high(&g - &y)?;
                m.highband_reference += high(&y - &clean)?;
            }
        }
        Ok(m)
    }

    fn stage_nps(&self) -> Result<()> {
        let roi = self.roi();
        let n = self.cfg.grid_size;
        for v in self.variants() {
            let images: Vec<ImageGrid> = self
                .read_frames(&self.layout.recon(v, 0), (n, n), self.cfg.ensemble)?
                .into_iter()
                .map(|d| ImageGrid::new(d, self.cfg.pixel_pitch_mm))
                .collect();
            let curve = normalize_nps(&estimate_nps(&images, &roi)?)?;
            write_atomic(&self.layout.nps(v), curve.to_csv(&roi).as_bytes())?;
            let metrics = self.band_metrics(v)?;
            write_atomic(&self.layout.metrics(v), metrics.to_csv().as_bytes())?;
            self.log(format!("measured {}", v.tag()));
        }
        Ok(())
    }

    fn read_text(&self, path: &Path) -> Result<String> {
        fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e} (run the earlier stages first)", path.display())))
    }

    /// Mean per-step loss over the last epoch recorded in a loss history.
    fn final_loss(&self, alpha: f64) -> Result<f64> {
        let text = self.read_text(&self.layout.loss_history(alpha))?;
        let losses: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| {
                l.split_once(',')
                    .and_then(|(_, v)| v.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad loss history line `{l}`")))
            })
            .collect::<Result<_>>()?;
        let k = self.cfg.steps_per_epoch.min(losses.len());
        if k == 0 {
            return Err(Error::Format("empty loss history".into()));
        }
        Ok(losses[losses.len() - k..].iter().sum::<f64>() / k as f64)
    }

    fn stage_report(&self) -> Result<Vec<ReportRow>> {
        let mut rows = Vec::new();
        for v in self.variants() {
            let curve = NpsCurve::from_csv(&self.read_text(&self.layout.nps(v))?)?;
            let metrics = BandMetrics::from_csv(&self.read_text(&self.layout.metrics(v))?)?;
            let (alpha, final_loss) = match v {
                Variant::Uncorrected => (None, None),
                Variant::Alpha(a) => (Some(a), Some(self.final_loss(a)?)),
            };
            rows.push(ReportRow {
                alpha,
                entropy_bits: entropy_flatness(&curve)?,
                inband_residual_ratio: metrics.inband_residual_ratio(),
                highband_preservation_ratio: metrics.highband_preservation_ratio(),
                final_loss,
            });
        }
        emit_report(&rows, &self.layout.report())?;
        write_atomic(&self.layout.entropy(), entropy_table(&rows)?.as_bytes())?;
        Ok(rows)
    }
}

/// Runs every stage and returns the report rows (baseline first).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let exp = Experiment::new(cfg.clone())?;
    Ok(exp.run_stage(Stage::RunAll)?.expect("report stage returns rows"))
}
