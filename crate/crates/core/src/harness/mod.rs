//! Seeded, file-based alpha-sweep experiment.

pub mod config;
pub mod experiment;
pub mod report;
pub mod seeds;

pub use config::{alpha_label, parse_config, ExperimentConfig};
pub use experiment::{interior_band_energy, run_experiment, BandMetrics, Experiment, Layout, Stage, Variant};
pub use report::{emit_report, entropy_table, parse_report, report_text, ReportRow, REPORT_HEADER};
