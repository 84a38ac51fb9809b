//! Signal containers, the seeded random source and the reconstruction metric.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use num_complex::Complex32;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SNR values above this are written as this value in reports and CSV files.
pub const SNR_REPORT_CAP_DB: f64 = 300.0;

/// Uniformly sampled real waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Time of the first sample in seconds.
    pub t0: f64,
}

impl SampleSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::with_t0(samples, sample_rate, 0.0)
    }

    pub fn with_t0(samples: Vec<f64>, sample_rate: f64, t0: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            t0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }

    /// Sub-range `[start, end)`, keeping the rate and shifting `t0`.
    pub fn slice(&self, start: usize, end: usize) -> SampleSeries {
        let end = end.min(self.len());
        let start = start.min(end);
        SampleSeries {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            t0: self.time(start),
        }
    }

    pub fn scaled(&self, a: f64) -> SampleSeries {
        SampleSeries {
            samples: self.samples.iter().map(|x| x * a).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.time(i), v)?;
        }
        Ok(())
    }

    /// Reads a `t,value` CSV. The rate comes from the first time step.
    pub fn read_csv<R: BufRead>(r: R) -> Result<SampleSeries> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let lineno = k + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 1 {
                if line.replace(' ', "") != "t,value" {
                    return Err(Error::Ingestion {
                        line: lineno,
                        msg: format!("expected header `t,value`, found `{line}`"),
                    });
                }
                continue;
            }
            let mut parts = line.split(',');
            let (Some(t), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Ingestion {
                    line: lineno,
                    msg: "expected two columns".into(),
                });
            };
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Ingestion {
                    line: lineno,
                    msg: format!("bad number `{s}`: {e}"),
                })
            };
            times.push(parse(t)?);
            values.push(parse(v)?);
        }
        if times.len() < 2 {
            return Err(Error::Ingestion {
                line: times.len() + 1,
                msg: "need at least two samples to infer the sample rate".into(),
            });
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::Ingestion {
                line: 3,
                msg: "time column must be strictly increasing".into(),
            });
        }
        SampleSeries::with_t0(values, 1.0 / dt, times[0])
    }
}

/// Complex baseband capture. Samples are single precision so that the file
/// format round trip is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct IqCapture {
    pub samples: Vec<Complex32>,
    pub sample_rate: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub meta: BTreeMap<String, String>,
}

impl IqCapture {
    pub fn new(samples: Vec<Complex32>, sample_rate: f64, band_low: f64, band_high: f64) -> Result<Self> {
        let cap = Self {
            samples,
            sample_rate,
            band_low,
            band_high,
            meta: BTreeMap::new(),
        };
        cap.validate()?;
        Ok(cap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(self.band_low < self.band_high && self.band_high <= self.sample_rate) {
            return Err(Error::Config(format!(
                "band [{}, {}] must satisfy band_low < band_high <= sample_rate ({})",
                self.band_low, self.band_high, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Seeded random source: ChaCha20 keyed by `seed`, with independent
/// numbered streams for the different consumers in one run.
#[derive(Debug, Clone)]
pub struct Rng {
    pub seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

/// Reconstruction SNR in dB, `10 log10(sum x^2 / sum (x - x_hat)^2)`.
/// Returns `+inf` when the estimate equals the reference.
pub fn snr_db(reference: &SampleSeries, estimate: &SampleSeries) -> Result<f64> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return Err(Error::Dimension(format!(
            "snr_db needs equal non-empty lengths, got {} and {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::Dimension(format!(
            "snr_db sample rates differ: {} vs {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    snr_db_slices(&reference.samples, &estimate.samples)
}

pub(crate) fn snr_db_slices(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    let signal: f64 = x.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::UndefinedMetric("reference is all zeros".into()));
    }
    let residual: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / residual).log10())
}

/// Clamps an SNR for serialization.
pub fn snr_for_report(snr: f64) -> f64 {
    snr.min(SNR_REPORT_CAP_DB)
}

/// Zero-order-hold resampling to `new_rate`.
pub fn resample_hold(series: &SampleSeries, new_rate: f64) -> Result<SampleSeries> {
    if series.is_empty() {
        return Err(Error::Dimension("resample_hold on empty series".into()));
    }
    if !(new_rate.is_finite() && new_rate > 0.0) {
        return Err(Error::Config(format!("new_rate must be positive, got {new_rate}")));
    }
    let ratio = series.sample_rate / new_rate;
    let n_out = ((series.len() as f64 / ratio).round() as usize).max(1);
    let last = series.len() - 1;
    let samples = (0..n_out)
        .map(|j| {
            // The small guard keeps exact multiples from falling one sample short.
            let idx = (j as f64 * ratio + 1e-9).floor() as usize;
            series.samples[idx.min(last)]
        })
        .collect();
    SampleSeries::with_t0(samples, new_rate, series.t0)
}

/// Result of [`align_and_lag`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Positive when the estimate lags the reference.
    pub lag: i64,
    /// Estimate shifted by `lag` and truncated to the overlap.
    pub aligned: SampleSeries,
    /// Reference over the same overlap.
    pub reference: SampleSeries,
}

fn overlap(len_x: usize, len_y: usize, lag: i64) -> (usize, usize) {
    // Reference index n pairs with estimate index n + lag.
    let start = if lag < 0 { (-lag) as usize } else { 0 };
    let end = (len_x as i64).min(len_y as i64 - lag).max(start as i64) as usize;
    (start, end)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Finds the integer lag in `[-max_lag, max_lag]` maximizing the normalized
/// cross-correlation of the overlapping parts. Ties go to the smaller |lag|.
pub fn align_and_lag(reference: &SampleSeries, estimate: &SampleSeries, max_lag: usize) -> Result<Alignment> {
    if estimate.is_empty() || reference.is_empty() {
        return Err(Error::Dimension("align_and_lag on empty series".into()));
    }
    if max_lag >= estimate.len() {
        return Err(Error::Dimension(format!(
            "max_lag {max_lag} must be below estimate length {}",
            estimate.len()
        )));
    }
    if is_constant(&reference.samples) || is_constant(&estimate.samples) {
        return Err(Error::AlignmentUndefined("constant input".into()));
    }
    let x = &reference.samples;
    let y = &estimate.samples;
    let mut best: Option<(i64, f64)> = None;
    let lags = std::iter::once(0i64).chain((1..=max_lag as i64).flat_map(|l| [l, -l]));
    for lag in lags {
        let (s, e) = overlap(x.len(), y.len(), lag);
        if e <= s {
            continue;
        }
        let ys = &y[(s as i64 + lag) as usize..(e as i64 + lag) as usize];
        if let Some(c) = pearson(&x[s..e], ys) {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((lag, c));
            }
        }
    }
    let Some((lag, _)) = best else {
        return Err(Error::AlignmentUndefined("no lag with a non-degenerate overlap".into()));
    };
    let (s, e) = overlap(x.len(), y.len(), lag);
    let aligned = SampleSeries {
        samples: y[(s as i64 + lag) as usize..(e as i64 + lag) as usize].to_vec(),
        sample_rate: estimate.sample_rate,
        t0: reference.time(s),
    };
    Ok(Alignment {
        lag,
        aligned,
        reference: reference.slice(s, e),
    })
}

/// Aligns, then scores. Returns `(lag, snr_db)`.
pub fn aligned_snr_db(reference: &SampleSeries, estimate: &SampleSeries, max_lag: usize) -> Result<(i64, f64)> {
    let a = align_and_lag(reference, estimate, max_lag)?;
    Ok((a.lag, snr_db(&a.reference, &a.aligned)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64], rate: f64) -> SampleSeries {
        SampleSeries::new(v.to_vec(), rate).unwrap()
    }

    #[test]
    fn snr_identity_is_infinite() {
        let x = series(&[1.0, -2.0, 3.0], 10.0);
        assert_eq!(snr_db(&x, &x).unwrap(), f64::INFINITY);
        assert_eq!(snr_for_report(f64::INFINITY), 300.0);
    }

    #[test]
    fn snr_zero_estimate_is_zero_db() {
        let x = series(&[1.0, -2.0, 3.0], 10.0);
        let z = series(&[0.0; 3], 10.0);
        assert_eq!(snr_db(&x, &z).unwrap(), 0.0);
    }

    #[test]
    fn snr_errors() {
        let x = series(&[1.0, 2.0], 10.0);
        assert!(matches!(snr_db(&x, &series(&[1.0], 10.0)), Err(Error::Dimension(_))));
        assert!(matches!(snr_db(&x, &series(&[1.0, 2.0], 20.0)), Err(Error::Dimension(_))));
        let z = series(&[0.0, 0.0], 10.0);
        assert!(matches!(snr_db(&z, &x), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn hold_examples() {
        let up = resample_hold(&series(&[1.0, 2.0], 1.0), 2.0).unwrap();
        assert_eq!(up.samples, vec![1.0, 1.0, 2.0, 2.0]);
        let down = resample_hold(&series(&[0.0, 1.0, 0.0], 3.0), 1.0).unwrap();
        assert_eq!(down.samples, vec![0.0]);
        assert!(resample_hold(&series(&[], 1.0), 2.0).is_err());
    }

    #[test]
    fn lag_examples() {
        let mut x = vec![0.0; 200];
        x[100] = 1.0;
        let mut y = vec![0.0; 200];
        y[103] = 1.0;
        let a = align_and_lag(&series(&x, 1.0), &series(&y, 1.0), 10).unwrap();
        assert_eq!(a.lag, 3);
        assert_eq!(a.aligned.samples, a.reference.samples);
        let c = series(&[2.0; 20], 1.0);
        assert!(matches!(
            align_and_lag(&c, &series(&x[..20], 1.0), 3),
            Err(Error::AlignmentUndefined(_))
        ));
    }

    #[test]
    fn slice_shifts_t0() {
        let s = SampleSeries::with_t0(vec![0.0, 1.0, 2.0, 3.0], 2.0, 1.0).unwrap();
        let t = s.slice(2, 4);
        assert_eq!(t.samples, vec![2.0, 3.0]);
        assert_eq!(t.t0, 2.0);
        assert_eq!(t.duration(), 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let s = series(&[0.5, -1.25, 3.0], 4.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SampleSeries::read_csv(&buf[..]).unwrap();
        assert_eq!(back.samples, s.samples);
        assert_eq!(back.sample_rate, 4.0);
    }

    #[test]
    fn csv_reports_line_numbers() {
        let text = "t,value\n0,1\n0.5,oops\n";
        match SampleSeries::read_csv(text.as_bytes()) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
