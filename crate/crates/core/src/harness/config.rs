//! Experiment configuration: a TOML file with dotted key paths, overridable
//! per key from the command line.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::{ChannelModel, VcoModel};
use crate::rx::{CztPlan, DecodeOptions, Taper};
use crate::rx::spectrogram::window_for_rate;
use crate::tag::{SawtoothGeneratorModel, TwoToneConfig};
use crate::vdm::VdmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    Constant,
    Sine,
    PulseTrain,
    File,
}

/// Per-channel overrides of the shared sensor settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SensorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorsConfig {
    pub count: usize,
    pub kind: SensorKind,
    /// Sine: peak deviation around `v_max / 2`. Constant: the level.
    /// Pulse train: pulse height.
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    /// Draw each sine's phase uniformly from `[0, 2 pi)`.
    pub random_phase: bool,
    /// Scale each sine's amplitude by a factor drawn from `[0.5, 1)`.
    pub random_amplitude: bool,
    /// Pulse width in seconds.
    pub width: f64,
    pub path: String,
    pub channels: Vec<ChannelSpec>,
}

impl Default for SensorsConfig {
    fn default() -> Self {
        Self {
            count: 3,
            kind: SensorKind::Sine,
            amplitude: 1.5,
            frequency: 1e3,
            phase: 0.0,
            random_phase: true,
            random_amplitude: true,
            width: 0.08,
            path: String::new(),
            channels: Vec::new(),
        }
    }
}

/// Fully resolved settings of one sensor channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub width: f64,
    pub path: String,
    pub random_phase: bool,
    pub random_amplitude: bool,
}

impl SensorsConfig {
    pub fn spec(&self, i: usize) -> SensorSpec {
        let ch = self.channels.get(i).cloned().unwrap_or_default();
        SensorSpec {
            kind: ch.kind.unwrap_or(self.kind),
            amplitude: ch.amplitude.unwrap_or(self.amplitude),
            frequency: ch.frequency.unwrap_or(self.frequency),
            random_phase: self.random_phase && ch.phase.is_none(),
            phase: ch.phase.unwrap_or(self.phase),
            random_amplitude: self.random_amplitude && ch.amplitude.is_none(),
            width: ch.width.unwrap_or(self.width),
            path: ch.path.unwrap_or_else(|| self.path.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoToneSection {
    /// Lower tone; the upper tone sits `f_env` above it.
    pub carrier_hz: f64,
    pub amplitude: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// Envelope low-pass cutoff; 0 selects `2 f_env`.
    pub cutoff_hz: f64,
}

impl Default for TwoToneSection {
    fn default() -> Self {
        Self {
            carrier_hz: 400e3,
            amplitude: 1.0,
            alpha1: 0.9,
            alpha2: 0.5,
            phi1: 0.0,
            phi2: 0.0,
            cutoff_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SawtoothSection {
    pub v_sup: f64,
    pub v_z: f64,
    pub v_be: f64,
    pub c: f64,
    /// Charging resistor; 0 selects the value matched to `f_env`.
    pub r_set: f64,
}

impl Default for SawtoothSection {
    fn default() -> Self {
        let m = SawtoothGeneratorModel::default();
        Self {
            v_sup: m.v_sup,
            v_z: m.v_z,
            v_be: m.v_be,
            c: m.c,
            r_set: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VdmSection {
    pub v_target_max: f64,
    pub r_f: f64,
}

impl Default for VdmSection {
    fn default() -> Self {
        Self {
            v_target_max: 1.0,
            r_f: 10e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub gain_re: f64,
    pub gain_im: f64,
    /// `inf` disables noise.
    pub noise_snr_db: f64,
    pub dc_re: f64,
    pub dc_im: f64,
    pub cfo_hz: f64,
    /// Noise seed; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            gain_re: 1.0,
            gain_im: 0.0,
            noise_snr_db: f64::INFINITY,
            dc_re: 0.0,
            dc_im: 0.0,
            cfo_hz: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    /// 0 selects a 6 us window at the simulation rate.
    pub window_len: usize,
    pub bins: usize,
    pub f_start: f64,
    pub f_end: f64,
    pub taper: Taper,
    pub hop: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            window_len: 0,
            bins: 1024,
            f_start: 100e3,
            f_end: 1e6,
            taper: Taper::Rect,
            hop: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    pub lambda: f64,
    pub drop_penalty: f64,
    pub peak_frac: f64,
    pub gradient_frac: f64,
    pub depth_frac: f64,
    pub dominance: f64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let d = DecodeOptions::default();
        Self {
            lambda: d.lambda,
            drop_penalty: d.drop_penalty,
            peak_frac: d.peak_frac,
            gradient_frac: d.gradient_frac,
            depth_frac: d.depth_frac,
            dominance: d.dominance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    pub tone_hz: f64,
    pub amplitude: f64,
    /// Delay of channels 2.. relative to channel 1, in seconds.
    pub offset_s: f64,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            tone_hz: 1e3,
            amplitude: 1.0,
            offset_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sample_rate: f64,
    pub duration: f64,
    pub f_env: f64,
    pub v_max: f64,
    pub v_s: f64,
    pub epsilon: f64,
    /// Add odd VCO harmonics to the capture.
    pub harmonics: bool,
    pub sensors: SensorsConfig,
    pub two_tone: TwoToneSection,
    pub sawtooth: SawtoothSection,
    pub vdm: VdmSection,
    pub vco: VcoModel,
    pub channel: ChannelSection,
    pub plan: PlanSection,
    pub decoder: DecoderSection,
    pub demo: DemoSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sample_rate: 4e6,
            duration: 0.02,
            f_env: 10e3,
            v_max: 3.3,
            v_s: 3.3,
            epsilon: 0.0,
            harmonics: false,
            sensors: SensorsConfig::default(),
            two_tone: TwoToneSection::default(),
            sawtooth: SawtoothSection::default(),
            vdm: VdmSection::default(),
            vco: VcoModel::default(),
            channel: ChannelSection::default(),
            plan: PlanSection::default(),
            decoder: DecoderSection::default(),
            demo: DemoSection::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key` (dot-separated; numeric segments index arrays) in `root`.
pub fn set_path(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key path `{key}`")));
    }
    let mut tree = toml::Value::Table(std::mem::take(root));
    let res = set_in(&mut tree, &parts, parse_scalar(raw), key);
    if let toml::Value::Table(t) = tree {
        *root = t;
    }
    res
}

fn set_in(node: &mut toml::Value, parts: &[&str], value: toml::Value, key: &str) -> Result<()> {
    let (part, rest) = (parts[0], &parts[1..]);
    let fresh = || match rest.first() {
        Some(p) if p.parse::<usize>().is_ok() => toml::Value::Array(Vec::new()),
        _ => toml::Value::Table(toml::Table::new()),
    };
    let child = match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(part.to_string(), value);
                return Ok(());
            }
            t.entry(part.to_string()).or_insert_with(fresh)
        }
        toml::Value::Array(a) => {
            let idx: usize = part
                .parse()
                .map_err(|_| Error::Config(format!("`{part}` in `{key}` must be an index")))?;
            while a.len() <= idx {
                a.push(toml::Value::Table(toml::Table::new()));
            }
            if rest.is_empty() {
                a[idx] = value;
                return Ok(());
            }
            &mut a[idx]
        }
        _ => return Err(Error::Config(format!("`{key}`: `{part}` is under a non-table value"))),
    };
    set_in(child, rest, value, key)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        match toml::Value::try_from(self).expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads an optional file, then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k.trim(), v)?;
        }
        Self::from_table(table)
    }

    /// Copy with one key replaced.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        let mut t = self.to_table();
        set_path(&mut t, key, raw)?;
        Self::from_table(t)
    }

    /// Invariant checks. Each message names the offending field.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let pos = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("sample_rate", self.sample_rate)?;
        pos("duration", self.duration)?;
        pos("f_env", self.f_env)?;
        pos("v_max", self.v_max)?;
        pos("v_s", self.v_s)?;
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.duration < 3.0 / self.f_env {
            return Err(Error::Config(format!(
                "duration {} s must be at least 3/f_env = {} s",
                self.duration,
                3.0 / self.f_env
            )));
        }
        let s = &self.sensors;
        if !(1..=crate::vdm::MAX_SENSORS).contains(&s.count) {
            return Err(Error::Config(format!("sensors.count must be in 1..=8, got {}", s.count)));
        }
        if s.channels.len() > s.count {
            return Err(Error::Config(format!(
                "sensors.channels has {} entries for sensors.count = {}",
                s.channels.len(),
                s.count
            )));
        }
        let mut max_freq: f64 = 0.0;
        for i in 0..s.count {
            let sp = s.spec(i);
            let ch = s.channels.get(i);
            // Blame the key that actually set the value.
            let key = |field: &str, set: bool| {
                if set {
                    format!("sensors.channels.{i}.{field}")
                } else {
                    format!("sensors.{field}")
                }
            };
            let amp_key = key("amplitude", ch.is_some_and(|c| c.amplitude.is_some()));
            let freq_key = key("frequency", ch.is_some_and(|c| c.frequency.is_some()));
            let width_key = key("width", ch.is_some_and(|c| c.width.is_some()));
            let path_key = key("path", ch.is_some_and(|c| c.path.is_some()));
            if !(sp.amplitude >= 0.0 && sp.amplitude <= self.v_max) {
                return Err(Error::Config(format!(
                    "{amp_key} ({}) must lie in [0, v_max = {}]",
                    sp.amplitude, self.v_max
                )));
            }
            match sp.kind {
                SensorKind::Sine | SensorKind::PulseTrain => {
                    if !(sp.frequency > 0.0) {
                        return Err(Error::Config(format!(
                            "{freq_key} must be positive, got {}",
                            sp.frequency
                        )));
                    }
                    max_freq = max_freq.max(sp.frequency);
                }
                SensorKind::File if sp.path.is_empty() => {
                    return Err(Error::Config(format!("{path_key} is required for kind = file")));
                }
                _ => {}
            }
            if sp.kind == SensorKind::PulseTrain && !(sp.width > 0.0 && sp.width * sp.frequency < 1.0) {
                return Err(Error::Config(format!(
                    "{width_key} must be positive and shorter than the pulse period"
                )));
            }
        }
        if max_freq > 0.0 && self.f_env < 2.0 * max_freq {
            warnings.push(format!(
                "f_env {} Hz is below twice the highest sensor frequency {max_freq} Hz; inputs alias",
                self.f_env
            ));
        }
        if s.kind == SensorKind::Sine && s.amplitude > self.v_max / 2.0 {
            warnings.push(format!(
                "sensors.amplitude {} exceeds v_max/2; sine peaks will clip",
                s.amplitude
            ));
        }
        self.two_tone_config().validate()?;
        self.sawtooth_model(1.0).validate()?;
        self.vdm_config().validate()?;
        self.vco.validate()?;
        self.channel_model().validate()?;
        let plan = self.plan();
        plan.validate(self.sample_rate)?;
        if self.decoder.lambda < 0.0 || self.decoder.drop_penalty < 0.0 {
            return Err(Error::Config("decoder.lambda and decoder.drop_penalty must be >= 0".into()));
        }
        Ok(warnings)
    }

    pub fn two_tone_config(&self) -> TwoToneConfig {
        let t = &self.two_tone;
        TwoToneConfig {
            amplitude: t.amplitude,
            f1: t.carrier_hz,
            f2: t.carrier_hz + self.f_env,
            alpha1: t.alpha1,
            alpha2: t.alpha2,
            phi1: t.phi1,
            phi2: t.phi2,
        }
    }

    pub fn envelope_cutoff(&self) -> f64 {
        if self.two_tone.cutoff_hz > 0.0 {
            self.two_tone.cutoff_hz
        } else {
            2.0 * self.f_env
        }
    }

    pub fn sawtooth_model(&self, r_set: f64) -> SawtoothGeneratorModel {
        let s = &self.sawtooth;
        SawtoothGeneratorModel {
            v_sup: s.v_sup,
            v_z: s.v_z,
            v_be: s.v_be,
            c: s.c,
            r_set,
            v_max: self.v_max,
        }
    }

    pub fn vdm_config(&self) -> VdmConfig {
        VdmConfig::normalized(self.sensors.count, self.v_s, self.vdm.r_f, self.vdm.v_target_max)
    }

    pub fn channel_model(&self) -> ChannelModel {
        let c = &self.channel;
        ChannelModel {
            gain: Complex64::new(c.gain_re, c.gain_im),
            noise_snr_db: c.noise_snr_db,
            dc_leak: Complex64::new(c.dc_re, c.dc_im),
            cfo_hz: c.cfo_hz,
            seed: c.seed.unwrap_or(self.seed),
        }
    }

    pub fn plan(&self) -> CztPlan {
        let p = &self.plan;
        CztPlan {
            window_len: if p.window_len == 0 {
                window_for_rate(self.sample_rate)
            } else {
                p.window_len
            },
            bins: p.bins,
            f_start: p.f_start,
            f_end: p.f_end,
            taper: p.taper,
            hop: p.hop,
        }
    }

    pub fn decode_options(&self) -> DecodeOptions {
        let d = &self.decoder;
        DecodeOptions {
            lambda: d.lambda,
            drop_penalty: d.drop_penalty,
            peak_frac: d.peak_frac,
            gradient_frac: d.gradient_frac,
            depth_frac: d.depth_frac,
            dominance: d.dominance,
            v_max: self.v_max,
            epsilon: self.epsilon,
        }
    }
}
