//! VCO backscatter modulation and the channel model.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{IqCapture, Rng, SampleSeries};

/// Affine voltage-to-frequency map, parameterized by its two calibration
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VcoModel {
    pub f_at_zero: f64,
    pub f_at_vset: f64,
    pub v_set: f64,
    pub n_div: f64,
    pub f_min_abs: f64,
    pub f_max_abs: f64,
}

impl Default for VcoModel {
    fn default() -> Self {
        Self {
            f_at_zero: 1e6,
            f_at_vset: 100e3,
            v_set: 1.0,
            n_div: 1.0,
            f_min_abs: 488.0,
            f_max_abs: 1e6,
        }
    }
}

/// Random stream reserved for channel noise.
pub const NOISE_STREAM: u64 = 0x6e6f697365;

/// Scale constant of the oscillator equation, in Hz * ohm.
const VCO_SCALE: f64 = 1e6 * 50e3;

impl VcoModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_at_vset < self.f_at_zero) {
            return Err(Error::Config(format!(
                "vco.f_at_vset ({}) must be below vco.f_at_zero ({}) for a decreasing map",
                self.f_at_vset, self.f_at_zero
            )));
        }
        if !(self.v_set > 0.0) {
            return Err(Error::Config("vco.v_set must be positive".into()));
        }
        if !(self.n_div > 0.0) {
            return Err(Error::Config("vco.n_div must be positive".into()));
        }
        if !(0.0 < self.f_min_abs && self.f_min_abs < self.f_max_abs) {
            return Err(Error::Config("vco: need 0 < f_min_abs < f_max_abs".into()));
        }
        Ok(())
    }

    pub(crate) fn unclamped_hz(&self, v: f64) -> f64 {
        self.f_at_zero + (self.f_at_vset - self.f_at_zero) * (v / self.v_set)
    }

    pub fn volts_to_hz(&self, v: f64) -> Result<f64> {
        volts_to_hz(self, v)
    }

    /// `(R_VCO, R_SET)` that give the same map through
    /// `f = S / (N_DIV R_VCO) * (1 + R_VCO/R_SET - V/V_SET)`.
    pub fn equivalent_resistors(&self) -> (f64, f64) {
        let span = self.f_at_zero - self.f_at_vset;
        let r_vco = VCO_SCALE / (self.n_div * span);
        let r_set = r_vco * span / self.f_at_vset;
        (r_vco, r_set)
    }
}

pub fn volts_to_hz(vco: &VcoModel, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("VCO input must be >= 0 V, got {v}")));
    }
    Ok(vco.unclamped_hz(v).clamp(vco.f_min_abs, vco.f_max_abs))
}

/// Running phase of the VCO, `theta[n+1] = theta[n] + 2 pi f(v[n]) / fs`,
/// kept in `[0, 2 pi)`.
pub fn vco_phase(v_out: &SampleSeries, vco: &VcoModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let freqs = v_out
        .samples
        .iter()
        .map(|&v| vco.volts_to_hz(v))
        .collect::<Result<Vec<_>>>()?;
    let mut theta = Vec::with_capacity(freqs.len());
    let mut th = 0.0f64;
    for f in &freqs {
        theta.push(th);
        th = (th + 2.0 * PI * f / v_out.sample_rate).rem_euclid(2.0 * PI);
    }
    Ok((theta, freqs))
}

/// Phase-continuous unit-amplitude complex tone following the summed voltage.
/// With `harmonics`, odd harmonics `k = 3, 5, ...` at amplitude `1/k` are
/// added while `k f` stays inside the band.
pub fn modulate(v_out: &SampleSeries, vco: &VcoModel, harmonics: bool) -> Result<IqCapture> {
    vco.validate()?;
    let (theta, freqs) = vco_phase(v_out, vco)?;
    let f_peak = freqs.iter().cloned().fold(0.0, f64::max);
    if v_out.sample_rate < 2.2 * f_peak {
        return Err(Error::Config(format!(
            "sample_rate {} is below 2.2 x peak VCO frequency {f_peak}",
            v_out.sample_rate
        )));
    }
    let samples = theta
        .iter()
        .zip(&freqs)
        .map(|(&th, &f)| {
            let mut z = Complex64::from_polar(1.0, th);
            if harmonics {
                let mut k = 3.0;
                while k * f <= vco.f_max_abs {
                    z += Complex64::from_polar(1.0 / k, k * th);
                    k += 2.0;
                }
            }
            Complex32::new(z.re as f32, z.im as f32)
        })
        .collect();
    IqCapture::new(samples, v_out.sample_rate, vco.f_min_abs, vco.f_max_abs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub gain: Complex64,
    /// Signal-to-noise ratio in dB; `+inf` disables noise.
    pub noise_snr_db: f64,
    pub dc_leak: Complex64,
    pub cfo_hz: f64,
    pub seed: u64,
}

impl ChannelModel {
    pub fn identity(seed: u64) -> Self {
        Self {
            gain: Complex64::new(1.0, 0.0),
            noise_snr_db: f64::INFINITY,
            dc_leak: Complex64::new(0.0, 0.0),
            cfo_hz: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.norm() > 0.0 && self.gain.norm().is_finite()) {
            return Err(Error::Config("channel gain magnitude must be positive".into()));
        }
        if self.noise_snr_db.is_nan() || self.noise_snr_db == f64::NEG_INFINITY {
            return Err(Error::Config("channel.noise_snr_db must be finite or +inf".into()));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.gain == Complex64::new(1.0, 0.0)
            && self.dc_leak == Complex64::new(0.0, 0.0)
            && self.cfo_hz == 0.0
            && self.noise_snr_db == f64::INFINITY
    }
}

/// `y = g x e^{j 2 pi cfo n / fs} + dc + w`, with complex white Gaussian `w`
/// scaled to `noise_snr_db` relative to the mean power of the impaired signal.
pub fn apply_channel(iq: &IqCapture, ch: &ChannelModel) -> Result<IqCapture> {
    ch.validate()?;
    if ch.is_identity() {
        return Ok(iq.clone());
    }
    let fs = iq.sample_rate;
    let mut y: Vec<Complex64> = iq
        .samples
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let x = Complex64::new(x.re as f64, x.im as f64);
            let rot = if ch.cfo_hz == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                let turns = (ch.cfo_hz * n as f64 / fs).fract();
                Complex64::from_polar(1.0, 2.0 * PI * turns)
            };
            ch.gain * x * rot + ch.dc_leak
        })
        .collect();
    if ch.noise_snr_db.is_finite() && !y.is_empty() {
        let power = iq
            .samples
            .iter()
            .map(|x| (x.re as f64).powi(2) + (x.im as f64).powi(2))
            .sum::<f64>()
            / iq.len() as f64
            * ch.gain.norm_sqr();
        let sigma = (power / 10f64.powf(ch.noise_snr_db / 10.0) / 2.0).sqrt();
        let mut rng = Rng::with_stream(ch.seed, NOISE_STREAM);
        for s in &mut y {
            let re = rng.normal();
            let im = rng.normal();
            *s += Complex64::new(sigma * re, sigma * im);
        }
    }
    let mut out = iq.clone();
    out.samples = y
        .into_iter()
        .map(|z| Complex32::new(z.re as f32, z.im as f32))
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let v = VcoModel::default();
        assert_eq!(v.volts_to_hz(0.0).unwrap(), 1e6);
        assert!((v.volts_to_hz(1.0).unwrap() - 100e3).abs() < 1e-6);
        assert!((v.volts_to_hz(0.5).unwrap() - 550e3).abs() < 1e-6);
        assert!(matches!(v.volts_to_hz(-0.1), Err(Error::Domain(_))));
        assert_eq!(v.volts_to_hz(5.0).unwrap(), 488.0);
    }

    #[test]
    fn resistor_form_matches_affine_map() {
        let v = VcoModel::default();
        let (r_vco, r_set) = v.equivalent_resistors();
        for volts in [0.0, 0.25, 0.6, 1.0] {
            let f = VCO_SCALE / (v.n_div * r_vco) * (1.0 + r_vco / r_set - volts / v.v_set);
            assert!((f - v.volts_to_hz(volts).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_channel_is_bitwise() {
        let v = SampleSeries::new(vec![0.2; 64], 4e6).unwrap();
        let iq = modulate(&v, &VcoModel::default(), false).unwrap();
        let out = apply_channel(&iq, &ChannelModel::identity(1)).unwrap();
        assert_eq!(out, iq);
    }

    #[test]
    fn nyquist_guard() {
        let v = SampleSeries::new(vec![0.0; 8], 1e6).unwrap();
        assert!(matches!(modulate(&v, &VcoModel::default(), false), Err(Error::Config(_))));
    }
}
