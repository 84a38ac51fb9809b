//! Inter-channel delay estimated from reconstructed series.

use std::f64::consts::PI;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{decode_capture, simulate_with};
use crate::error::{Error, Result, StageExt};
use crate::signal::{align_and_lag, SampleSeries};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub tone_hz: f64,
    pub configured_delay_s: f64,
    /// Per channel 2..N, relative to channel 1.
    pub lag_periods: Vec<i64>,
    pub measured_delay_s: Vec<f64>,
    pub delay_error_s: Vec<f64>,
    /// One reconstructed sample, `1 / f_env`.
    pub resolution_s: f64,
    /// PWM falls differing from channel 1, summed over channels. Zero
    /// whenever the inputs are identical.
    pub fall_mismatches: usize,
}

/// Feeds the same tone to every channel, delaying channels 2.. by
/// `demo.offset_s`, and recovers the delay by cross-correlating the decoded
/// series against channel 1.
pub fn demo_phase_alignment(cfg: &ExperimentConfig) -> Result<DemoReport> {
    let n = cfg.sensors.count;
    if n < 2 {
        return Err(Error::Config(format!(
            "sensors.count must be at least 2 for the alignment demo, got {n}"
        )));
    }
    let d = &cfg.demo;
    if !(d.tone_hz > 0.0) || d.amplitude < 0.0 || d.amplitude > cfg.v_max / 2.0 {
        return Err(Error::Config(
            "demo.tone_hz must be positive and demo.amplitude within [0, v_max/2]".into(),
        ));
    }
    let fs = cfg.sample_rate;
    let len = (cfg.duration * fs).round() as usize;
    let tone = |delay: f64| {
        let v = (0..len)
            .map(|i| cfg.v_max / 2.0 + d.amplitude * (2.0 * PI * d.tone_hz * (i as f64 / fs - delay)).sin())
            .collect();
        SampleSeries::new(v, fs)
    };
    let inputs = (0..n)
        .map(|k| tone(if k == 0 { 0.0 } else { d.offset_s }))
        .collect::<Result<Vec<_>>>()?;
    let sim = simulate_with(cfg, Some(inputs))?;
    let falls0 = &sim.pwm[0].fall_indices;
    let fall_mismatches = sim.pwm[1..]
        .iter()
        .map(|p| p.fall_indices.iter().zip(falls0).filter(|(a, b)| a != b).count())
        .sum();

    let decode = decode_capture(cfg, &sim.capture)?;
    let reference = decode.sensor_series(0);
    let max_lag = ((cfg.f_env / d.tone_hz / 2.0).floor() as usize).min(reference.len().saturating_sub(1));
    let resolution_s = 1.0 / cfg.f_env;
    let mut lag_periods = Vec::new();
    for k in 1..n {
        let a = align_and_lag(&reference, &decode.sensor_series(k), max_lag).stage("demo")?;
        lag_periods.push(a.lag);
    }
    let measured_delay_s: Vec<f64> = lag_periods.iter().map(|&l| l as f64 * resolution_s).collect();
    let delay_error_s = measured_delay_s.iter().map(|m| m - d.offset_s).collect();
    Ok(DemoReport {
        tone_hz: d.tone_hz,
        configured_delay_s: d.offset_s,
        lag_periods,
        measured_delay_s,
        delay_error_s,
        resolution_s,
        fall_mismatches,
    })
}
