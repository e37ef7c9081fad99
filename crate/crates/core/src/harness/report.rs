//! The summary table of an alpha sweep.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nps::NPS_BINS;
use crate::raster::write_atomic;

pub const REPORT_HEADER: &str = "alpha,entropy_bits,inband_residual_ratio,highband_preservation_ratio,final_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// `None` marks the uncorrected baseline.
    pub alpha: Option<f64>,
    pub entropy_bits: f64,
    /// In-band energy of `X - G` over that of `X - Y`.
    pub inband_residual_ratio: f64,
    /// `1 - E_high(G - Y) / E_high(Y - X)`: share of high-band input content kept.
    pub highband_preservation_ratio: f64,
    /// Mean training loss of the last epoch; absent for the baseline.
    pub final_loss: Option<f64>,
}

impl ReportRow {
    pub fn label(&self) -> String {
        match self.alpha {
            Some(a) => a.to_string(),
            None => "uncorrected".into(),
        }
    }
}

fn check_entropy(row: &ReportRow) -> Result<()> {
    let max = (NPS_BINS as f64).log2();
    if !(row.entropy_bits >= 0.0 && row.entropy_bits <= max) {
        return Err(Error::MetricIntegrity(format!(
            "row {}: entropy {} outside [0, {max}]",
            row.label(),
            row.entropy_bits
        )));
    }
    Ok(())
}

/// CSV text: the header, one line per alpha row in order, then the baseline.
pub fn report_text(rows: &[ReportRow]) -> Result<String> {
    let sweep: Vec<&ReportRow> = rows.iter().filter(|r| r.alpha.is_some()).collect();
    let baseline: Vec<&ReportRow> = rows.iter().filter(|r| r.alpha.is_none()).collect();
    if sweep.is_empty() {
        return Err(Error::Usage("report needs at least one alpha row".into()));
    }
    if baseline.len() != 1 {
        return Err(Error::Usage(format!("report needs exactly one baseline row, got {}", baseline.len())));
    }
    let mut out = format!("{REPORT_HEADER}\n");
    for row in sweep.into_iter().chain(baseline) {
        check_entropy(row)?;
        let loss = row.final_loss.map_or(String::new(), |l| format!("{l:.6e}"));
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{}",
            row.label(),
            row.entropy_bits,
            row.inband_residual_ratio,
            row.highband_preservation_ratio,
            loss
        );
    }
    Ok(out)
}

pub fn emit_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    write_atomic(path, report_text(rows)?.as_bytes())
}

/// `alpha,entropy_bits` table, baseline last.
pub fn entropy_table(rows: &[ReportRow]) -> Result<String> {
    let mut out = String::from("alpha,entropy_bits\n");
    let ordered = rows.iter().filter(|r| r.alpha.is_some()).chain(rows.iter().filter(|r| r.alpha.is_none()));
    for row in ordered {
        check_entropy(row)?;
        let _ = writeln!(out, "{},{:.6}", row.label(), row.entropy_bits);
    }
    Ok(out)
}

/// Parses a report written by [`emit_report`].
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Format("report header does not match".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("report line {}: `{line}`", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(ReportRow {
                alpha: if f[0] == "uncorrected" { None } else { Some(num(f[0])?) },
                entropy_bits: num(f[1])?,
                inband_residual_ratio: num(f[2])?,
                highband_preservation_ratio: num(f[3])?,
                final_loss: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            })
        })
        .collect()
}
