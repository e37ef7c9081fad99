//! Experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. `seed` and
//! `output_dir` are required, every other key is optional:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `grid_size` | 256 | phantom / reconstruction side, pixels |
//! | `pixel_pitch_mm` | 1.0 | pixel size |
//! | `n_views` | 360 | projection angles over `[0, pi)` |
//! | `n_channels` | 384 | detector channels spanning the image diagonal |
//! | `n_phantoms` | 8 | phantom variants |
//! | `n_train` | 6 | variants used for training, the rest are held out |
//! | `train_realizations` | 2 | noisy copies of each training sinogram |
//! | `i0` | 10000 | incident photons per ray |
//! | `sigma_e` | 5 | electronic noise std, counts |
//! | `noise_floor` | 0.5 | clamp after noise synthesis, or `none` |
//! | `log_floor` | 0.5 | counts floor before the log |
//! | `f1_cutoff`, `f2_cutoff` | 0.1, 0.3 | filter cutoffs, cycles/sample |
//! | `f1_taps`, `f2_taps` | 65, 65 | filter lengths (odd) |
//! | `filter_axes` | both | `views`, `channels` or `both` |
//! | `alpha_list` | 0, 0.6, 0.8, 1.0 | comma-separated preservation weights |
//! | `phi` | squared | `squared` or `absolute` |
//! | `loss_weighting` | inverse_variance | `uniform` or `inverse_variance` (weights `1 / (X + (sigma_e^2 + 1) / i0)` on normalised targets) |
//! | `learning_rate` | 0.005 | Adam step size |
//! | `final_learning_rate` | 0.00001 | cosine-decay target for the step size, or `none` |
//! | `beta1`, `beta2` | 0.9, 0.999 | Adam moment decays |
//! | `epochs` | 10 | training epochs |
//! | `steps_per_epoch` | 80 | optimiser steps per epoch |
//! | `batch_size` | 8 | patches per step |
//! | `patch_size` | 64 | square patch side, or `full` |
//! | `residual_output` | false | add the input to the network output |
//! | `roi_width`, `roi_height` | 64, 64 | NPS region size |
//! | `roi_center_row`, `roi_center_col` | grid centre | NPS region centre |
//! | `ensemble` | 16 | noise realizations per held-out phantom |
//! | `apodization` | none | ramp window for NPS reconstructions |
//! | `infer_tile` | 0 | tile side for inference, 0 disables tiling |
//! | `pgm_export` | false | also write 8-bit PGM previews |
//! | `pgm_window`, `pgm_level` | 0.03, 0.02 | display window for previews, 1/mm |

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filters::FilterAxes;
use crate::loss::Phi;
use crate::recon::Apodization;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid_size: usize,
    pub pixel_pitch_mm: f64,
    pub n_views: usize,
    pub n_channels: usize,
    pub n_phantoms: usize,
    pub n_train: usize,
    pub train_realizations: usize,
    pub i0: f64,
    pub sigma_e: f64,
    pub noise_floor: Option<f64>,
    pub log_floor: f64,
    pub f1_cutoff: f64,
    pub f2_cutoff: f64,
    pub f1_taps: usize,
    pub f2_taps: usize,
    pub filter_axes: FilterAxes,
    pub alpha_list: Vec<f64>,
    pub phi: Phi,
    /// Weight loss elements by the inverse target variance.
    pub inverse_variance_weights: bool,
    pub learning_rate: f64,
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: Option<usize>,
    pub residual_output: bool,
    pub roi_width: usize,
    pub roi_height: usize,
    pub roi_center_row: Option<usize>,
    pub roi_center_col: Option<usize>,
    pub ensemble: usize,
    pub apodization: Apodization,
    pub infer_tile: usize,
    pub pgm_export: bool,
    pub pgm_window: f64,
    pub pgm_level: f64,
}

impl ExperimentConfig {
    pub fn with_defaults(seed: u64, output_dir: PathBuf) -> Self {
        Self {
            seed,
            output_dir,
            grid_size: 256,
            pixel_pitch_mm: 1.0,
            n_views: 360,
            n_channels: 384,
            n_phantoms: 8,
            n_train: 6,
            train_realizations: 2,
            i0: 1e4,
            sigma_e: 5.0,
            noise_floor: Some(0.5),
            log_floor: 0.5,
            f1_cutoff: 0.1,
            f2_cutoff: 0.3,
            f1_taps: 65,
            f2_taps: 65,
            filter_axes: FilterAxes::Both,
            alpha_list: vec![0.0, 0.6, 0.8, 1.0],
            phi: Phi::Squared,
            inverse_variance_weights: true,
            learning_rate: 5e-3,
            final_learning_rate: Some(1e-5),
            beta1: 0.9,
            beta2: 0.999,
            epochs: 10,
            steps_per_epoch: 80,
            batch_size: 8,
            patch_size: Some(64),
            residual_output: false,
            roi_width: 64,
            roi_height: 64,
            roi_center_row: None,
            roi_center_col: None,
            ensemble: 16,
            apodization: Apodization::None,
            infer_tile: 0,
            pgm_export: false,
            pgm_window: 0.03,
            pgm_level: 0.02,
        }
    }

    pub fn n_heldout(&self) -> usize {
        self.n_phantoms - self.n_train
    }

    pub fn roi_center(&self) -> (usize, usize) {
        (
            self.roi_center_row.unwrap_or(self.grid_size / 2),
            self.roi_center_col.unwrap_or(self.grid_size / 2),
        )
    }

    /// Checks every constraint; `line_of` maps keys to the line they were set
    /// on so messages can point back into the file.
    fn validate_with(&self, line_of: &dyn Fn(&str) -> Option<usize>) -> Result<()> {
        let fail = |key: &str, msg: String| -> Error {
            match line_of(key) {
                Some(line) => Error::Validation(format!("line {line}: `{key}` {msg}")),
                None => Error::Validation(format!("`{key}` {msg}")),
            }
        };
        let positive = |key: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(fail(key, format!("must be > 0, got {v}")))
            }
        };
        positive("i0", self.i0)?;
        positive("pixel_pitch_mm", self.pixel_pitch_mm)?;
        positive("log_floor", self.log_floor)?;
        positive("learning_rate", self.learning_rate)?;
        if let Some(lr) = self.final_learning_rate {
            if !(lr > 0.0 && lr <= self.learning_rate) {
                return Err(fail("final_learning_rate", format!("must lie in (0, learning_rate], got {lr}")));
            }
        }
        positive("pgm_window", self.pgm_window)?;
        if !(self.sigma_e >= 0.0 && self.sigma_e.is_finite()) {
            return Err(fail("sigma_e", format!("must be >= 0, got {}", self.sigma_e)));
        }
        if let Some(f) = self.noise_floor {
            if !f.is_finite() {
                return Err(fail("noise_floor", "must be finite".into()));
            }
        }
        if self.grid_size < 16 {
            return Err(fail("grid_size", format!("must be >= 16, got {}", self.grid_size)));
        }
        if self.n_views < 16 || self.n_channels < 16 {
            return Err(fail("n_views", "and n_channels must be >= 16".into()));
        }
        if self.n_train == 0 || self.n_train >= self.n_phantoms {
            return Err(fail(
                "n_train",
                format!("must be in 1..n_phantoms ({}), got {}", self.n_phantoms, self.n_train),
            ));
        }
        if self.train_realizations == 0 {
            return Err(fail("train_realizations", "must be >= 1".into()));
        }
        for (key, c) in [("f1_cutoff", self.f1_cutoff), ("f2_cutoff", self.f2_cutoff)] {
            if !(c > 0.0 && c < 0.5) {
                return Err(fail(key, format!("must lie in (0, 0.5), got {c}")));
            }
        }
        for (key, t) in [("f1_taps", self.f1_taps), ("f2_taps", self.f2_taps)] {
            if t % 2 == 0 || t < 3 {
                return Err(fail(key, format!("must be odd and >= 3, got {t}")));
            }
        }
        if self.alpha_list.is_empty() {
            return Err(fail("alpha_list", "must not be empty".into()));
        }
        if let Some(a) = self.alpha_list.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(fail("alpha_list", format!("entries must be >= 0, got {a}")));
        }
        let mut labels: Vec<String> = self.alpha_list.iter().map(|a| alpha_label(*a)).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.alpha_list.len() {
            return Err(fail("alpha_list", "entries must be distinct".into()));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(fail(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        for (key, v) in [("epochs", self.epochs), ("steps_per_epoch", self.steps_per_epoch), ("batch_size", self.batch_size)] {
            if v == 0 {
                return Err(fail(key, "must be >= 1".into()));
            }
        }
        if let Some(p) = self.patch_size {
            if p < 16 || p > self.n_views.min(self.n_channels) {
                return Err(fail("patch_size", format!("must lie in 16..={}, got {p}", self.n_views.min(self.n_channels))));
            }
        }
        if self.ensemble < 2 {
            return Err(fail("ensemble", format!("must be >= 2, got {}", self.ensemble)));
        }
        let (cr, cc) = self.roi_center();
        if self.roi_width < 2
            || self.roi_height < 2
            || cr < self.roi_height / 2
            || cc < self.roi_width / 2
            || cr - self.roi_height / 2 + self.roi_height > self.grid_size
            || cc - self.roi_width / 2 + self.roi_width > self.grid_size
        {
            return Err(fail("roi_width", "and roi_height with the ROI centre must fit inside the image".into()));
        }
        if self.infer_tile != 0 && self.infer_tile < 32 {
            return Err(fail("infer_tile", format!("must be 0 or >= 32, got {}", self.infer_tile)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&|_| None)
    }

    /// Serialises every key so the text parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "grid_size = {}", self.grid_size);
        let _ = writeln!(s, "pixel_pitch_mm = {}", self.pixel_pitch_mm);
        let _ = writeln!(s, "n_views = {}", self.n_views);
        let _ = writeln!(s, "n_channels = {}", self.n_channels);
        let _ = writeln!(s, "n_phantoms = {}", self.n_phantoms);
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "train_realizations = {}", self.train_realizations);
        let _ = writeln!(s, "i0 = {}", self.i0);
        let _ = writeln!(s, "sigma_e = {}", self.sigma_e);
        let _ = writeln!(s, "noise_floor = {}", self.noise_floor.map_or("none".to_string(), |f| f.to_string()));
        let _ = writeln!(s, "log_floor = {}", self.log_floor);
        let _ = writeln!(s, "f1_cutoff = {}", self.f1_cutoff);
        let _ = writeln!(s, "f2_cutoff = {}", self.f2_cutoff);
        let _ = writeln!(s, "f1_taps = {}", self.f1_taps);
        let _ = writeln!(s, "f2_taps = {}", self.f2_taps);
        let _ = writeln!(s, "filter_axes = {}", self.filter_axes);
        let alphas: Vec<String> = self.alpha_list.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(s, "alpha_list = {}", alphas.join(", "));
        let _ = writeln!(s, "phi = {}", self.phi);
        let _ = writeln!(
            s,
            "loss_weighting = {}",
            if self.inverse_variance_weights { "inverse_variance" } else { "uniform" }
        );
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "final_learning_rate = {}", self.final_learning_rate.map_or("none".to_string(), |v| v.to_string()));
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "steps_per_epoch = {}", self.steps_per_epoch);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "patch_size = {}", self.patch_size.map_or("full".to_string(), |p| p.to_string()));
        let _ = writeln!(s, "residual_output = {}", self.residual_output);
        let _ = writeln!(s, "roi_width = {}", self.roi_width);
        let _ = writeln!(s, "roi_height = {}", self.roi_height);
        let _ = writeln!(s, "roi_center_row = {}", opt(self.roi_center_row));
        let _ = writeln!(s, "roi_center_col = {}", opt(self.roi_center_col));
        let _ = writeln!(s, "ensemble = {}", self.ensemble);
        let _ = writeln!(s, "apodization = {}", self.apodization);
        let _ = writeln!(s, "infer_tile = {}", self.infer_tile);
        let _ = writeln!(s, "pgm_export = {}", self.pgm_export);
        let _ = writeln!(s, "pgm_window = {}", self.pgm_window);
        let _ = writeln!(s, "pgm_level = {}", self.pgm_level);
        s
    }
}

/// File-name friendly rendering of an alpha value (`0.6` -> `0.6`, `1.0` -> `1`).
pub fn alpha_label(alpha: f64) -> String {
    format!("{alpha}")
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{key}` expects {what}, got `{raw}`"),
    })
}

fn parse_enum<T: FromStr<Err = Error>>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|e: Error| Error::Parse {
        line,
        msg: format!("`{key}`: {e}"),
    })
}

fn parse_auto(line: usize, key: &str, raw: &str) -> Result<Option<usize>> {
    if raw.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_value(line, key, raw, "an integer or `auto`").map(Some)
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse { line: line_no, msg: "empty key".into() });
        }
        if let Some(prev) = seen.insert(key.clone(), line_no) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate key `{key}` (first set on line {prev})"),
            });
        }
        entries.push((line_no, key, value));
    }

    let required = |key: &str| -> Result<&(usize, String, String)> {
        entries.iter().find(|(_, k, _)| k == key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing required key `{key}`"),
        })
    };
    let (l, _, v) = required("seed")?;
    let seed: u64 = parse_value(*l, "seed", v, "an unsigned integer")?;
    let (_, _, v) = required("output_dir")?;
    if v.is_empty() {
        return Err(Error::Parse { line: seen["output_dir"], msg: "`output_dir` must not be empty".into() });
    }
    let mut cfg = ExperimentConfig::with_defaults(seed, PathBuf::from(v));

    for (line, key, v) in &entries {
        let (line, v) = (*line, v.as_str());
        let int = |what: &str| parse_value::<usize>(line, key, v, what);
        let real = || parse_value::<f64>(line, key, v, "a number");
        match key.as_str() {
            "seed" | "output_dir" => {}
            "grid_size" => cfg.grid_size = int("an integer")?,
            "pixel_pitch_mm" => cfg.pixel_pitch_mm = real()?,
            "n_views" => cfg.n_views = int("an integer")?,
            "n_channels" => cfg.n_channels = int("an integer")?,
            "n_phantoms" => cfg.n_phantoms = int("an integer")?,
            "n_train" => cfg.n_train = int("an integer")?,
            "train_realizations" => cfg.train_realizations = int("an integer")?,
            "i0" => cfg.i0 = real()?,
            "sigma_e" => cfg.sigma_e = real()?,
            "noise_floor" => {
                cfg.noise_floor = if v.eq_ignore_ascii_case("none") { None } else { Some(real()?) }
            }
            "log_floor" => cfg.log_floor = real()?,
            "f1_cutoff" => cfg.f1_cutoff = real()?,
            "f2_cutoff" => cfg.f2_cutoff = real()?,
            "f1_taps" => cfg.f1_taps = int("an odd integer")?,
            "f2_taps" => cfg.f2_taps = int("an odd integer")?,
            "filter_axes" => cfg.filter_axes = parse_enum(line, key, v)?,
            "alpha_list" => {
                cfg.alpha_list = v
                    .split(',')
                    .map(|a| parse_value::<f64>(line, key, a.trim(), "comma-separated numbers"))
                    .collect::<Result<_>>()?
            }
            "phi" => cfg.phi = parse_enum(line, key, v)?,
            "loss_weighting" => {
                cfg.inverse_variance_weights = match v {
                    "uniform" => false,
                    "inverse_variance" => true,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("`loss_weighting` must be `uniform` or `inverse_variance`, got `{v}`"),
                        })
                    }
                }
            }
            "learning_rate" => cfg.learning_rate = real()?,
            "final_learning_rate" => {
                cfg.final_learning_rate = if v.eq_ignore_ascii_case("none") { None } else { Some(real()?) }
            }
            "beta1" => cfg.beta1 = real()?,
            "beta2" => cfg.beta2 = real()?,
            "epochs" => cfg.epochs = int("an integer")?,
            "steps_per_epoch" => cfg.steps_per_epoch = int("an integer")?,
            "batch_size" => cfg.batch_size = int("an integer")?,
            "patch_size" => {
                cfg.patch_size = if v.eq_ignore_ascii_case("full") { None } else { Some(int("an integer or `full`")?) }
            }
            "residual_output" => cfg.residual_output = parse_value(line, key, v, "`true` or `false`")?,
            "roi_width" => cfg.roi_width = int("an integer")?,
            "roi_height" => cfg.roi_height = int("an integer")?,
            "roi_center_row" => cfg.roi_center_row = parse_auto(line, key, v)?,
            "roi_center_col" => cfg.roi_center_col = parse_auto(line, key, v)?,
            "ensemble" => cfg.ensemble = int("an integer")?,
            "apodization" => cfg.apodization = parse_enum(line, key, v)?,
            "infer_tile" => cfg.infer_tile = int("an integer")?,
            "pgm_export" => cfg.pgm_export = parse_value(line, key, v, "`true` or `false`")?,
            "pgm_window" => cfg.pgm_window = real()?,
            "pgm_level" => cfg.pgm_level = real()?,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    }
    cfg.validate_with(&|k| seen.get(k).copied())?;
    Ok(cfg)
}
