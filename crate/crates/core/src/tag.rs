//! Tag-side analog chain: two-tone envelope, square wave, reset pulses,
//! sawtooth and the comparator bank that turns sensor voltages into PWM.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SampleSeries;

/// Two-tone excitation as seen at the tag antenna.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoToneConfig {
    pub amplitude: f64,
    pub f1: f64,
    pub f2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl TwoToneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f1 == self.f2 {
            return Err(Error::Config("two_tone: f1 must differ from f2".into()));
        }
        if !(self.f1 > 0.0 && self.f2 > 0.0) {
            return Err(Error::Config("two_tone: tone frequencies must be positive".into()));
        }
        if !(self.alpha1 > 0.0) {
            return Err(Error::Config("two_tone.alpha1 must be positive".into()));
        }
        if !(self.alpha2 > 0.0) {
            return Err(Error::Config("two_tone.alpha2 must be positive".into()));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Config("two_tone.amplitude must be positive".into()));
        }
        Ok(())
    }

    pub fn f_env(&self) -> f64 {
        (self.f1 - self.f2).abs()
    }

    /// Same tones with `(A, alpha1, alpha2)` multiplied by `k`.
    pub fn scaled(&self, k: f64) -> TwoToneConfig {
        TwoToneConfig {
            amplitude: self.amplitude * k,
            alpha1: self.alpha1 * k,
            alpha2: self.alpha2 * k,
            ..*self
        }
    }
}

fn sample_count(duration: f64, sample_rate: f64) -> Result<usize> {
    if !(sample_rate > 0.0) || !(duration > 0.0) {
        return Err(Error::Config(format!(
            "duration ({duration}) and sample_rate ({sample_rate}) must be positive"
        )));
    }
    Ok((duration * sample_rate).round() as usize)
}

/// Passband two-tone waveform `a1 A cos(w1 t + p1) + a2 A cos(w2 t + p2)`.
/// The single-tone case (`alpha2 = 0`) is allowed here.
pub fn synth_two_tone(cfg: &TwoToneConfig, duration: f64, sample_rate: f64) -> Result<SampleSeries> {
    if cfg.alpha2 != 0.0 {
        cfg.validate()?;
    }
    if !(sample_rate > 4.0 * cfg.f1.max(cfg.f2)) {
        return Err(Error::Config(format!(
            "sample_rate {sample_rate} must exceed 4 x max tone frequency {}",
            cfg.f1.max(cfg.f2)
        )));
    }
    let n = sample_count(duration, sample_rate)?;
    let (w1, w2) = (2.0 * PI * cfg.f1, 2.0 * PI * cfg.f2);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            cfg.alpha1 * cfg.amplitude * (w1 * t + cfg.phi1).cos()
                + cfg.alpha2 * cfg.amplitude * (w2 * t + cfg.phi2).cos()
        })
        .collect();
    SampleSeries::new(samples, sample_rate)
}

/// Exact beat envelope `A sqrt(a1^2 + a2^2 + 2 a1 a2 cos(dw t + dphi))`.
pub fn envelope_closed_form(cfg: &TwoToneConfig, duration: f64, sample_rate: f64) -> Result<SampleSeries> {
    cfg.validate()?;
    let n = sample_count(duration, sample_rate)?;
    let dw = 2.0 * PI * (cfg.f1 - cfg.f2);
    let (a1, a2) = (cfg.alpha1, cfg.alpha2);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let arg = a1 * a1 + a2 * a2 + 2.0 * a1 * a2 * (dw * t + cfg.phi1 - cfg.phi2).cos();
            cfg.amplitude * arg.max(0.0).sqrt()
        })
        .collect();
    SampleSeries::new(samples, sample_rate)
}

/// Smoothing coefficient of the one-pole low-pass used by [`envelope_detect`].
pub fn one_pole_coefficient(cutoff: f64, sample_rate: f64) -> f64 {
    1.0 - (-2.0 * PI * cutoff / sample_rate).exp()
}

/// Oversampling of the rectifier stage in [`envelope_detect`].
pub const RECTIFIER_OVERSAMPLE: usize = 8;

/// Band-limited interpolation by `u` through zero-padding the spectrum.
/// The original samples are reproduced at indices `i * u`.
fn upsample(x: &[f64], u: usize) -> Vec<f64> {
    let n = x.len();
    let m = n * u;
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut big = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..(n + 1) / 2 {
        big[k] = spec[k];
    }
    for k in 1..(n + 1) / 2 {
        big[m - k] = spec[n - k];
    }
    if n % 2 == 0 {
        // Split the Nyquist bin between both signs.
        big[n / 2] = spec[n / 2] * 0.5;
        big[m - n / 2] = spec[n / 2] * 0.5;
    }
    planner.plan_fft_inverse(m).process(&mut big);
    big.iter().map(|z| z.re / n as f64).collect()
}

/// Ideal rectifier followed by a one-pole low-pass,
/// `y[n] = y[n-1] + a (|r[n]| - y[n-1])` with `y[-1] = 0`.
///
/// Rectifying the raw samples would fold the rectifier's harmonics back into
/// the envelope band, which a continuous-time diode does not do. The input
/// is therefore interpolated by [`RECTIFIER_OVERSAMPLE`] first (it is band
/// limited by the tone-plan guard), filtered at the higher rate, and read
/// back at the original instants.
pub fn envelope_detect(r: &SampleSeries, cutoff: f64) -> Result<SampleSeries> {
    if !(cutoff > 0.0 && cutoff < r.sample_rate / 2.0) {
        return Err(Error::Config(format!(
            "envelope cutoff {cutoff} must lie in (0, {})",
            r.sample_rate / 2.0
        )));
    }
    if r.is_empty() {
        return Err(Error::Dimension("envelope_detect on an empty series".into()));
    }
    let u = RECTIFIER_OVERSAMPLE;
    let a = one_pole_coefficient(cutoff, r.sample_rate * u as f64);
    let fine = upsample(&r.samples, u);
    let mut y = 0.0;
    let mut samples = Vec::with_capacity(r.len());
    for (j, x) in fine.iter().enumerate() {
        y += a * (x.abs() - y);
        if j % u == 0 {
            samples.push(y);
        }
    }
    SampleSeries::with_t0(samples, r.sample_rate, r.t0)
}

/// Checks a detector cutoff against the tone plan: above f_env, below
/// `2 min(f1, f2)`.
pub fn check_cutoff(cfg: &TwoToneConfig, cutoff: f64) -> Result<()> {
    let hi = 2.0 * cfg.f1.min(cfg.f2);
    if !(cutoff > cfg.f_env() && cutoff < hi) {
        return Err(Error::Config(format!(
            "envelope_cutoff {cutoff} must lie in ({}, {hi})",
            cfg.f_env()
        )));
    }
    Ok(())
}

/// Hysteresis half-width as a fraction of the 5..95 percentile spread.
const HYSTERESIS_FRAC: f64 = 0.05;

fn spread(d: &[f64]) -> f64 {
    let mut v = d.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    at(0.95) - at(0.05)
}

/// Schmitt trigger on `d`: goes high above `+h`, low below `-h`. Starts in
/// the state given by the sign of the first sample.
fn schmitt(d: &[f64], h: f64) -> Vec<bool> {
    let mut state = d.first().is_some_and(|v| *v > 0.0);
    d.iter()
        .map(|&v| {
            if state && v < -h {
                state = false;
            } else if !state && v > h {
                state = true;
            }
            state
        })
        .collect()
}

/// Rising transitions of a Schmitt trigger around the global mean, used to
/// size the DC-removal window.
fn estimate_env_frequency(env: &SampleSeries) -> Option<f64> {
    let x = &env.samples;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let state = schmitt(&d, HYSTERESIS_FRAC * spread(&d));
    let rising: Vec<usize> = (1..state.len()).filter(|&i| state[i] && !state[i - 1]).collect();
    if rising.len() < 2 {
        return None;
    }
    let span = (rising[rising.len() - 1] - rising[0]) as f64;
    Some((rising.len() - 1) as f64 * env.sample_rate / span)
}

/// Removes the local mean (sliding window of four envelope periods) and
/// compares against zero with a small hysteresis, giving a two-level wave
/// at `{0, v_s}`. The hysteresis scales with the envelope, so the output
/// does not depend on its amplitude.
pub fn square_from_envelope(env: &SampleSeries, v_s: f64) -> Result<SampleSeries> {
    if env.len() < 4 {
        return Err(Error::NoReference("envelope too short".into()));
    }
    let f = estimate_env_frequency(env)
        .ok_or_else(|| Error::NoReference("envelope has no zero crossings".into()))?;
    let x = &env.samples;
    let n = x.len();
    let half = ((2.0 * env.sample_rate / f).round() as usize).max(1);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let d: Vec<f64> = (0..n)
        .map(|i| {
            // Near the ends the window slides inward instead of shrinking, so
            // it always spans whole periods.
            let width = (2 * half).min(n);
            let lo = i.saturating_sub(half).min(n - width);
            let hi = lo + width;
            x[i] - (prefix[hi] - prefix[lo]) / width as f64
        })
        .collect();
    let h = HYSTERESIS_FRAC * spread(&d);
    let samples = schmitt(&d, h).into_iter().map(|b| if b { v_s } else { 0.0 }).collect();
    SampleSeries::with_t0(samples, env.sample_rate, env.t0)
}

/// Sawtooth reset events derived from the square wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReference {
    pub f_env: f64,
    pub pulse_indices: Vec<usize>,
    pub sample_rate: f64,
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    }
}

/// Rising edges of `square`, debounced: an edge closer than 25% of the
/// median spacing to the previously kept edge (or to index 0) is dropped.
pub fn reset_pulses(square: &SampleSeries) -> Result<TimingReference> {
    let x = &square.samples;
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let thr = 0.5 * (hi + lo);
    let edges: Vec<usize> = (1..x.len())
        .filter(|&i| x[i - 1] <= thr && x[i] > thr && hi > lo)
        .collect();
    if edges.len() < 2 {
        return Err(Error::InsufficientSignal(format!(
            "need at least 2 rising edges, found {}",
            edges.len()
        )));
    }
    let mut spacing: Vec<usize> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let guard = 0.25 * median(&mut spacing);
    // The record start counts as an edge, which drops detector start-up
    // transitions.
    let mut kept: Vec<usize> = Vec::new();
    for &e in &edges {
        if (e - kept.last().copied().unwrap_or(0)) as f64 >= guard {
            kept.push(e);
        }
    }
    if kept.len() < 2 {
        return Err(Error::InsufficientSignal("edges collapse under the glitch guard".into()));
    }
    let mut spacing: Vec<usize> = kept.windows(2).map(|w| w[1] - w[0]).collect();
    let f_env = square.sample_rate / median(&mut spacing);
    Ok(TimingReference {
        f_env,
        pulse_indices: kept,
        sample_rate: square.sample_rate,
    })
}

/// Constant-current sawtooth generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SawtoothGeneratorModel {
    pub v_sup: f64,
    pub v_z: f64,
    pub v_be: f64,
    pub c: f64,
    pub r_set: f64,
    pub v_max: f64,
}

impl Default for SawtoothGeneratorModel {
    fn default() -> Self {
        Self {
            v_sup: 3.3,
            v_z: 1.6,
            v_be: 0.7,
            c: 500e-12,
            r_set: 121.2e3,
            v_max: 3.3,
        }
    }
}

impl SawtoothGeneratorModel {
    pub fn headroom(&self) -> f64 {
        self.v_sup - self.v_z - self.v_be
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.headroom() > 0.0) {
            return Err(Error::Config(format!(
                "sawtooth: v_sup - v_z - v_be must be positive, got {}",
                self.headroom()
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config("sawtooth.c must be positive".into()));
        }
        if !(self.r_set > 0.0) {
            return Err(Error::Config("sawtooth.r_set must be positive".into()));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config("sawtooth.v_max must be positive".into()));
        }
        Ok(())
    }

    /// Charging current `(V_sup - V_Z - V_BE) / R_set`.
    pub fn charge_current(&self) -> f64 {
        self.headroom() / self.r_set
    }

    /// Ramp slope in volts per second.
    pub fn slope(&self) -> f64 {
        self.charge_current() / self.c
    }
}

/// Resistor that makes the ramp reach `v_max` in one envelope period.
pub fn required_rset(model: &SawtoothGeneratorModel, f_env: f64) -> Result<f64> {
    if !(model.headroom() > 0.0) {
        return Err(Error::Config(format!(
            "sawtooth headroom v_sup - v_z - v_be must be positive, got {}",
            model.headroom()
        )));
    }
    if !(f_env > 0.0 && model.v_max > 0.0 && model.c > 0.0) {
        return Err(Error::Config("f_env, v_max and c must be positive".into()));
    }
    Ok(model.headroom() / (f_env * model.v_max * model.c))
}

/// Linear ramp from 0 restarted at every pulse, clipped at `2 v_max`.
/// Samples before the first pulse ramp from index 0.
pub fn sawtooth_from_pulses(
    reference: &TimingReference,
    model: &SawtoothGeneratorModel,
    sample_rate: f64,
    len: usize,
) -> Result<SampleSeries> {
    model.validate()?;
    let step = model.slope() / sample_rate;
    let clip = 2.0 * model.v_max;
    let mut samples = vec![0.0; len];
    let mut resets = reference.pulse_indices.iter().peekable();
    let mut origin = 0usize;
    for (i, s) in samples.iter_mut().enumerate() {
        while resets.peek().is_some_and(|&&p| p <= i) {
            origin = *resets.next().unwrap();
        }
        *s = (step * (i - origin) as f64).min(clip);
    }
    SampleSeries::new(samples, sample_rate)
}

/// Binary PWM output of one comparator channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwmStream {
    pub levels: SampleSeries,
    pub v_s: f64,
    /// Start index of every period, including a leading partial one at 0.
    pub period_starts: Vec<usize>,
    /// First sample per period where the ramp reaches the input; equals the
    /// period end when it never does.
    pub cross_indices: Vec<usize>,
    /// Falling-edge index per period (`cross + epsilon`, capped at the
    /// period end).
    pub fall_indices: Vec<usize>,
    /// Input samples clipped into `[0, v_max]`.
    pub clipped_samples: usize,
}

impl PwmStream {
    pub fn period_end(&self, k: usize) -> usize {
        self.period_starts
            .get(k + 1)
            .copied()
            .unwrap_or(self.levels.len())
    }

    pub fn high_samples(&self, k: usize) -> usize {
        self.fall_indices[k] - self.period_starts[k]
    }
}

/// Period starts are the sawtooth resets (index 0 plus every drop).
pub fn sawtooth_period_starts(sawtooth: &SampleSeries) -> Vec<usize> {
    let s = &sawtooth.samples;
    let mut starts = vec![0];
    starts.extend((1..s.len()).filter(|&i| s[i] < s[i - 1]));
    starts
}

/// Compares every sensor against the shared sawtooth. Each period is high
/// from its start until the first sample where the ramp reaches the input,
/// extended by `epsilon` seconds rounded to whole samples.
pub fn pwm_encode(
    sensors: &[SampleSeries],
    sawtooth: &SampleSeries,
    v_max: f64,
    v_s: f64,
    epsilon: f64,
) -> Result<Vec<PwmStream>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    for (i, s) in sensors.iter().enumerate() {
        if s.len() != sawtooth.len() || s.sample_rate != sawtooth.sample_rate {
            return Err(Error::Dimension(format!(
                "sensor {} has {} samples at {} Hz, sawtooth has {} at {} Hz",
                i + 1,
                s.len(),
                s.sample_rate,
                sawtooth.len(),
                sawtooth.sample_rate
            )));
        }
    }
    let starts = sawtooth_period_starts(sawtooth);
    let ext = (epsilon * sawtooth.sample_rate).round() as usize;
    let n = sawtooth.len();
    let saw = &sawtooth.samples;
    Ok(sensors
        .iter()
        .map(|sensor| {
            let clipped_samples = sensor
                .samples
                .iter()
                .filter(|v| !(**v >= 0.0 && **v <= v_max))
                .count();
            let mut levels = vec![0.0; n];
            let mut falls = Vec::with_capacity(starts.len());
            let mut crosses = Vec::with_capacity(starts.len());
            for (k, &a) in starts.iter().enumerate() {
                let b = starts.get(k + 1).copied().unwrap_or(n);
                let cross = (a..b)
                    .find(|&i| saw[i] >= sensor.samples[i].clamp(0.0, v_max))
                    .unwrap_or(b);
                let fall = (cross + ext).min(b);
                levels[a..fall].fill(v_s);
                falls.push(fall);
                crosses.push(cross);
            }
            PwmStream {
                levels: SampleSeries {
                    samples: levels,
                    sample_rate: sawtooth.sample_rate,
                    t0: sawtooth.t0,
                },
                v_s,
                period_starts: starts.clone(),
                cross_indices: crosses,
                fall_indices: falls,
                clipped_samples,
            }
        })
        .collect())
}
