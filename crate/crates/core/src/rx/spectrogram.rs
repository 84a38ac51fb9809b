use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::czt::{Czt, CztMethod};
use crate::error::{Error, Result};
use crate::signal::IqCapture;

/// Window duration used when the window length is derived from the rate.
pub const DEFAULT_WINDOW_SECONDS: f64 = 6e-6;

/// Ceiling on the estimated capture SNR. Float32 samples and the nearest-bin
/// mismatch of the level frequencies leave a residual of about this size even
/// without noise.
pub const MAX_SNR_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    Rect,
    Hann,
}

impl Taper {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Taper::Rect => vec![1.0; n],
            Taper::Hann if n == 1 => vec![1.0],
            Taper::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CztPlan {
    pub window_len: usize,
    pub bins: usize,
    pub f_start: f64,
    pub f_end: f64,
    pub taper: Taper,
    pub hop: usize,
}

impl CztPlan {
    /// Defaults for a capture rate: 6 us window, 1024 bins over
    /// [100 kHz, 1 MHz], rectangular taper, hop 8.
    pub fn for_rate(sample_rate: f64) -> Self {
        Self {
            window_len: window_for_rate(sample_rate),
            bins: 1024,
            f_start: 100e3,
            f_end: 1e6,
            taper: Taper::Rect,
            hop: 8,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(0.0 < self.f_start && self.f_start < self.f_end && self.f_end <= sample_rate) {
            return Err(Error::Config(format!(
                "plan: need 0 < f_start ({}) < f_end ({}) <= sample_rate ({sample_rate})",
                self.f_start, self.f_end
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("plan.bins must be >= 2, got {}", self.bins)));
        }
        if self.hop < 1 {
            return Err(Error::Config("plan.hop must be >= 1".into()));
        }
        if self.window_len < 2 {
            return Err(Error::Config(format!(
                "plan.window_len must be >= 2, got {}",
                self.window_len
            )));
        }
        Ok(())
    }

    /// Whether the window alone separates adjacent levels (`N >= fs / df`).
    pub fn resolvable(&self, sample_rate: f64, level_spacing_hz: f64) -> bool {
        self.window_len as f64 >= sample_rate / level_spacing_hz
    }

    pub fn bin_spacing(&self) -> f64 {
        (self.f_end - self.f_start) / (self.bins - 1) as f64
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        self.f_start + k as f64 * self.bin_spacing()
    }

    pub fn nearest_bin(&self, f: f64) -> usize {
        let k = ((f - self.f_start) / self.bin_spacing()).round();
        k.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    /// Same durations at another sample rate.
    pub fn rescaled(&self, from_rate: f64, to_rate: f64) -> Self {
        let r = to_rate / from_rate;
        Self {
            window_len: ((self.window_len as f64 * r).round() as usize).max(2),
            hop: ((self.hop as f64 * r).round() as usize).max(1),
            ..*self
        }
    }
}

pub fn window_for_rate(sample_rate: f64) -> usize {
    ((DEFAULT_WINDOW_SECONDS * sample_rate).round() as usize).max(8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomSpectrogram {
    /// Row-major `num_frames x bins` magnitudes.
    pub frames: Vec<f32>,
    pub frame_times: Vec<usize>,
    pub plan: CztPlan,
    pub sample_rate: f64,
    /// Per-sample SNR of the capture (linear), see [`envelope_snr`].
    pub snr: f64,
}

impl ZoomSpectrogram {
    /// Log-likelihood, in nats, that one frame adds per unit of relative
    /// level magnitude under white noise. Overlapping frames share samples,
    /// so each counts `H / N` of a frame.
    pub fn evidence_gain(&self) -> f64 {
        let w = self.plan.taper.weights(self.plan.window_len);
        let s1: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|v| v * v).sum();
        2.0 * self.snr * s1 * s1 / s2 * self.plan.hop as f64 / self.plan.window_len as f64
    }

    pub fn num_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let m = self.plan.bins;
        &self.frames[i * m..(i + 1) * m]
    }

    pub fn magnitude(&self, frame: usize, bin: usize) -> f32 {
        self.frames[frame * self.plan.bins + bin]
    }

    /// Magnitude over time at one bin.
    pub fn trace(&self, bin: usize) -> Vec<f64> {
        (0..self.num_frames())
            .map(|i| self.magnitude(i, bin) as f64)
            .collect()
    }

    pub fn argmax(&self, frame: usize) -> usize {
        let row = self.frame(frame);
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        best
    }
}

/// Magnitude frames `|CZT(taper * iq[t..t+N])|` at `t = 0, H, 2H, ...`.
pub fn sliding_spectrogram(iq: &IqCapture, plan: &CztPlan) -> Result<ZoomSpectrogram> {
    plan.validate(iq.sample_rate)?;
    let n = plan.window_len;
    if iq.len() < n {
        return Err(Error::InsufficientSignal(format!(
            "capture has {} samples, window needs {n}",
            iq.len()
        )));
    }
    let czt = Czt::new(n, plan.bins, plan.f_start, plan.f_end, iq.sample_rate, CztMethod::Auto)?;
    let taper = plan.taper.weights(n);
    let num_frames = (iq.len() - n) / plan.hop + 1;
    let frame_times: Vec<usize> = (0..num_frames).map(|i| i * plan.hop).collect();
    let m = plan.bins;
    let mut frames = vec![0f32; num_frames * m];
    frames
        .par_chunks_mut(m)
        .zip(frame_times.par_iter())
        .for_each_init(
            || (vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); m]),
            |(block, spec), (row, &t)| {
                for (i, b) in block.iter_mut().enumerate() {
                    let s = iq.samples[t + i];
                    *b = Complex64::new(s.re as f64, s.im as f64) * taper[i];
                }
                czt.process_into(block, spec).expect("sizes fixed by plan");
                for (r, v) in row.iter_mut().zip(spec.iter()) {
                    *r = v.norm() as f32;
                }
            },
        );
    Ok(ZoomSpectrogram {
        frames,
        frame_times,
        plan: *plan,
        sample_rate: iq.sample_rate,
        snr: envelope_snr(iq),
    })
}

/// Second/fourth-moment SNR estimate, exact for a constant-envelope tone in
/// circular Gaussian noise: `S^2 = 2 M2^2 - M4`, `N = M2 - S`. Capped at
/// [`MAX_SNR_DB`].
pub fn envelope_snr(iq: &IqCapture) -> f64 {
    let cap = 10f64.powf(MAX_SNR_DB / 10.0);
    if iq.is_empty() {
        return 0.0;
    }
    let n = iq.len() as f64;
    let (m2, m4) = iq.samples.iter().fold((0.0, 0.0), |(a, b), z| {
        let p = (z.re as f64).powi(2) + (z.im as f64).powi(2);
        (a + p, b + p * p)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    let s = (2.0 * m2 * m2 - m4).max(0.0).sqrt();
    let noise = m2 - s;
    if noise <= s / cap {
        cap
    } else {
        s / noise
    }
}
