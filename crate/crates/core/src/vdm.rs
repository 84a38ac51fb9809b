//! Voltage-division multiplexing: binary-weighted summing and the
//! subset <-> voltage <-> frequency codebook.
//!
//! Sensor 1 carries the largest weight. In a bitmask, bit `i` stands for
//! sensor `i + 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::VcoModel;
use crate::signal::SampleSeries;
use crate::tag::PwmStream;

pub const MAX_SENSORS: usize = 8;

/// Smallest frequency step between adjacent levels the VCO can resolve.
pub const MIN_LEVEL_SPACING_HZ: f64 = 488.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdmConfig {
    pub n: usize,
    pub v_s: f64,
    pub alpha: f64,
    pub r_f: f64,
    pub v_target_max: f64,
}

impl VdmConfig {
    /// Picks `alpha` so that the full-set sum equals `v_target_max`.
    pub fn normalized(n: usize, v_s: f64, r_f: f64, v_target_max: f64) -> Self {
        let k = ((1u64 << n) - 1) as f64;
        let alpha = (v_s / v_target_max) * k / 2f64.powi(n as i32 - 1);
        Self {
            n,
            v_s,
            alpha,
            r_f,
            v_target_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_SENSORS).contains(&self.n) {
            return Err(Error::Config(format!(
                "vdm.n must be in 1..={MAX_SENSORS}, got {}",
                self.n
            )));
        }
        for (name, v) in [
            ("vdm.v_s", self.v_s),
            ("vdm.alpha", self.alpha),
            ("vdm.r_f", self.r_f),
            ("vdm.v_target_max", self.v_target_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let full = self.weights().iter().sum::<f64>();
        if ((full - self.v_target_max) / self.v_target_max).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "vdm.alpha {} gives a full-set sum of {full} V instead of v_target_max {}",
                self.alpha, self.v_target_max
            )));
        }
        Ok(())
    }

    /// Input resistors `R_i = alpha R_f 2^(i-1)`.
    pub fn resistors(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.alpha * self.r_f * 2f64.powi(i as i32))
            .collect()
    }

    /// Voltage contribution of each sensor when high, `R_f V_s / R_i`.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.v_s / (self.alpha * 2f64.powi(i as i32)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdmCodebook {
    pub n: usize,
    pub v_s: f64,
    pub weights: Vec<f64>,
    /// Subset sums, ascending; level `k` is `k / (2^N - 1) * v_target_max`.
    pub levels: Vec<f64>,
    pub subset_of_level: Vec<u32>,
    pub level_of_subset: Vec<usize>,
    pub freq_of_level: Vec<f64>,
}

/// Integer code of a mask: sensor 1 counts `2^(N-1)`, sensor N counts 1.
pub fn mask_code(mask: u32, n: usize) -> usize {
    (0..n)
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| 1usize << (n - 1 - i))
        .sum()
}

pub fn build_codebook(cfg: &VdmConfig, vco: &VcoModel) -> Result<VdmCodebook> {
    cfg.validate()?;
    vco.validate()?;
    let n = cfg.n;
    let count = 1usize << n;
    let k_max = (count - 1) as f64;

    let mut subset_of_level = vec![0u32; count];
    let mut level_of_subset = vec![0usize; count];
    for mask in 0..count as u32 {
        let code = mask_code(mask, n);
        subset_of_level[code] = mask;
        level_of_subset[mask as usize] = code;
    }
    // mask_code is a bijection on 0..2^N, so every code is hit once.
    let mut seen = vec![false; count];
    for &code in &level_of_subset {
        if std::mem::replace(&mut seen[code], true) {
            return Err(Error::Config("duplicate subset sum".into()));
        }
    }

    let levels: Vec<f64> = (0..count).map(|k| k as f64 / k_max * cfg.v_target_max).collect();
    let weights = cfg.weights();
    let step = weights[n - 1];
    for w in levels.windows(2) {
        if ((w[1] - w[0] - step) / step).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "level spacing {} differs from smallest weight {step}",
                w[1] - w[0]
            )));
        }
    }

    for (v, name) in [(0.0, "0 V"), (cfg.v_target_max, "v_target_max")] {
        let raw = vco.unclamped_hz(v);
        if raw < vco.f_min_abs || raw > vco.f_max_abs {
            return Err(Error::Config(format!(
                "VCO maps {name} to {raw} Hz, outside its range [{}, {}]",
                vco.f_min_abs, vco.f_max_abs
            )));
        }
    }
    let freq_of_level = levels
        .iter()
        .map(|&v| vco.volts_to_hz(v))
        .collect::<Result<Vec<_>>>()?;
    let spacing = (freq_of_level[0] - freq_of_level[1]).abs();
    if spacing < MIN_LEVEL_SPACING_HZ {
        return Err(Error::Config(format!(
            "level frequency spacing {spacing} Hz is below the VCO resolution {MIN_LEVEL_SPACING_HZ} Hz"
        )));
    }

    Ok(VdmCodebook {
        n,
        v_s: cfg.v_s,
        weights,
        levels,
        subset_of_level,
        level_of_subset,
        freq_of_level,
    })
}

impl VdmCodebook {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn full_mask(&self) -> u32 {
        ((1u64 << self.n) - 1) as u32
    }

    /// Frequency step between adjacent levels.
    pub fn level_spacing_hz(&self) -> f64 {
        (self.freq_of_level[1] - self.freq_of_level[0]).abs()
    }

    pub fn freq_of_mask(&self, mask: u32) -> f64 {
        self.freq_of_level[self.level_of_subset[mask as usize]]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level_index,bitmask,volts,hertz")?;
        for (k, mask) in self.subset_of_level.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{}",
                mask_string(*mask, self.n),
                self.levels[k],
                self.freq_of_level[k]
            )?;
        }
        Ok(())
    }
}

/// Mask as a string of sensor states, sensor 1 first (e.g. `101`).
pub fn mask_string(mask: u32, n: usize) -> String {
    (0..n).map(|i| if mask >> i & 1 == 1 { '1' } else { '0' }).collect()
}

/// Weighted sum of the PWM channels. Each output sample is looked up from
/// the codebook so that it equals a level exactly.
pub fn sum_streams(pwms: &[PwmStream], book: &VdmCodebook) -> Result<SampleSeries> {
    if pwms.len() != book.n {
        return Err(Error::Dimension(format!(
            "{} PWM channels for a {}-sensor codebook",
            pwms.len(),
            book.n
        )));
    }
    let len = pwms[0].levels.len();
    let rate = pwms[0].levels.sample_rate;
    if pwms.iter().any(|p| p.levels.len() != len || p.levels.sample_rate != rate) {
        return Err(Error::Dimension("PWM channels differ in length or rate".into()));
    }
    let samples = (0..len)
        .map(|t| {
            let mask = pwms
                .iter()
                .enumerate()
                .filter(|(_, p)| p.levels.samples[t] > 0.5 * p.v_s)
                .fold(0u32, |m, (i, _)| m | 1 << i);
            book.levels[book.level_of_subset[mask as usize]]
        })
        .collect();
    SampleSeries::with_t0(samples, rate, pwms[0].levels.t0)
}

pub fn decode_level(book: &VdmCodebook, level_index: usize) -> Result<u32> {
    book.subset_of_level
        .get(level_index)
        .copied()
        .ok_or_else(|| Error::Domain(format!(
            "level index {level_index} out of range 0..{}",
            book.num_levels()
        )))
}

/// Row `L` marks the sensors active in level `L`.
pub fn duty_matrix(book: &VdmCodebook) -> Vec<Vec<u8>> {
    book.subset_of_level
        .iter()
        .map(|mask| (0..book.n).map(|i| (mask >> i & 1) as u8).collect())
        .collect()
}
