//! Parameter sweeps: one run per (value, repetition), plus per-value aggregates.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::run_once;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Dotted key path into the experiment configuration.
    pub param: String,
    /// Raw TOML values, e.g. `"5e3"` or `"\"sine\""`.
    pub values: Vec<String>,
    pub repetitions: usize,
}

impl SweepSpec {
    pub fn new(param: &str, values: &[&str], repetitions: usize) -> Self {
        Self {
            param: param.into(),
            values: values.iter().map(|s| s.to_string()).collect(),
            repetitions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep.values must hold at least one value".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("sweep.repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// `false` for detail rows, `true` for the per-value aggregate.
    pub aggregate: bool,
    pub value: String,
    /// Repetition index; `None` on aggregate rows.
    pub rep: Option<usize>,
    pub seed: Option<u64>,
    pub snr_db: Vec<f64>,
    pub mean_snr_db: f64,
    pub mean_snr_uniform_db: f64,
    pub decode_failures: usize,
    pub error: Option<String>,
}

fn mean_finite(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn value_dir(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs the sweep. Configuration errors abort; a run that fails to decode
/// becomes a row with its error and counts one failure.
pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec, out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    sweep.validate()?;
    let mut jobs = Vec::new();
    for value in &sweep.values {
        let base = cfg.with_override(&sweep.param, value)?;
        base.validate()?;
        for rep in 0..sweep.repetitions {
            let seed = base.seed.wrapping_add(rep as u64);
            let mut c = base.clone();
            c.seed = seed;
            let dir: Option<PathBuf> =
                out_dir.map(|d| d.join(format!("{}={}", sweep.param, value_dir(value))).join(format!("rep{rep}")));
            jobs.push((value.clone(), rep, c, dir));
        }
    }
    let detail: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(value, rep, c, dir)| match run_once(c, dir.as_deref()) {
            Ok(out) => Ok(SweepRow {
                aggregate: false,
                value: value.clone(),
                rep: Some(*rep),
                seed: Some(c.seed),
                snr_db: out.report.snr_db.clone(),
                mean_snr_db: out.report.mean_snr_db,
                mean_snr_uniform_db: out.report.mean_snr_uniform_db,
                decode_failures: out.report.decode_failures,
                error: None,
            }),
            Err(e) if matches!(e.exit_code(), 1 | 3) => Err(e),
            Err(e) => Ok(SweepRow {
                aggregate: false,
                value: value.clone(),
                rep: Some(*rep),
                seed: Some(c.seed),
                snr_db: Vec::new(),
                mean_snr_db: f64::NAN,
                mean_snr_uniform_db: f64::NAN,
                decode_failures: 1,
                error: Some(e.to_string()),
            }),
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(detail.len() + sweep.values.len());
    for value in &sweep.values {
        let group: Vec<&SweepRow> = detail.iter().filter(|r| &r.value == value).collect();
        rows.extend(group.iter().map(|r| (*r).clone()));
        let n = group.iter().map(|r| r.snr_db.len()).max().unwrap_or(0);
        let per_sensor = (0..n)
            .map(|i| mean_finite(group.iter().filter_map(|r| r.snr_db.get(i).copied())))
            .collect();
        rows.push(SweepRow {
            aggregate: true,
            value: value.clone(),
            rep: None,
            seed: None,
            snr_db: per_sensor,
            // Mean over sensors and repetitions jointly.
            mean_snr_db: mean_finite(group.iter().flat_map(|r| r.snr_db.iter().copied())),
            mean_snr_uniform_db: mean_finite(group.iter().map(|r| r.mean_snr_uniform_db)),
            decode_failures: group.iter().map(|r| r.decode_failures).sum(),
            error: None,
        });
    }
    Ok(rows)
}

/// CSV with a fixed header; per-sensor SNRs are `;`-joined in one column.
pub fn write_csv<W: Write>(rows: &[SweepRow], param: &str, mut w: W) -> std::io::Result<()> {
    writeln!(w, "row,{param},rep,seed,snr_db,mean_snr_db,mean_snr_uniform_db,decode_failures,error")?;
    for r in rows {
        let snr: Vec<String> = r.snr_db.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(
            w,
            "{},{},{},{},{},{:.4},{:.4},{},{}",
            if r.aggregate { "aggregate" } else { "detail" },
            r.value.replace(',', ";"),
            r.rep.map_or(String::new(), |v| v.to_string()),
            r.seed.map_or(String::new(), |v| v.to_string()),
            snr.join(";"),
            r.mean_snr_db,
            r.mean_snr_uniform_db,
            r.decode_failures,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], " "),
        )?;
    }
    Ok(())
}

/// `(value, mean SNR)` of the aggregate rows, with the value parsed as a
/// number or replaced by its position.
pub fn aggregate_points(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.aggregate)
        .enumerate()
        .map(|(i, r)| (r.value.trim().parse::<f64>().unwrap_or(i as f64), r.mean_snr_db))
        .collect()
}
