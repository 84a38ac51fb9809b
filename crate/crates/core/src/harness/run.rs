//! End-to-end runs: sensors -> tag -> multiplexer -> VCO -> channel -> receiver.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, SensorKind, SensorSpec};
use crate::error::{Error, Result, StageExt};
use crate::iqfile;
use crate::modem::{apply_channel, modulate};
use crate::rx::{demultiplex, DecodeResult, PeriodStatus};
use crate::signal::{aligned_snr_db, resample_hold, snr_for_report, IqCapture, Rng, SampleSeries};
use crate::tag::{
    check_cutoff, envelope_detect, pwm_encode, required_rset, reset_pulses, sawtooth_from_pulses,
    square_from_envelope, synth_two_tone, PwmStream, TimingReference,
};
use crate::vdm::{build_codebook, sum_streams, VdmCodebook};

/// Random stream of sensor `i` is `SENSOR_STREAM_BASE + i`.
pub const SENSOR_STREAM_BASE: u64 = 1;

/// Generates one sensor input. Sines sit on `v_max / 2`.
pub fn gen_sensor_waveform(
    spec: &SensorSpec,
    v_max: f64,
    duration: f64,
    sample_rate: f64,
    rng: &mut Rng,
) -> Result<SampleSeries> {
    let n = (duration * sample_rate).round() as usize;
    let t = |i: usize| i as f64 / sample_rate;
    let samples = match spec.kind {
        SensorKind::Constant => vec![spec.amplitude; n],
        SensorKind::Sine => {
            let amp = if spec.random_amplitude {
                spec.amplitude * rng.uniform(0.5, 1.0)
            } else {
                spec.amplitude
            };
            let phase = if spec.random_phase {
                rng.uniform(0.0, 2.0 * PI)
            } else {
                spec.phase
            };
            (0..n)
                .map(|i| v_max / 2.0 + amp * (2.0 * PI * spec.frequency * t(i) + phase).sin())
                .collect()
        }
        SensorKind::PulseTrain => {
            // Half-sine bumps of the given width, one per period.
            let period = 1.0 / spec.frequency;
            let shift = spec.phase / (2.0 * PI) * period;
            (0..n)
                .map(|i| {
                    let u = (t(i) - shift).rem_euclid(period);
                    if u < spec.width {
                        spec.amplitude * (PI * u / spec.width).sin()
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        SensorKind::File => {
            let f = std::fs::File::open(&spec.path)?;
            let src = SampleSeries::read_csv(std::io::BufReader::new(f))?;
            let mut held = resample_hold(&src, sample_rate)?.samples;
            let last = *held.last().unwrap();
            held.resize(n, last);
            held
        }
    };
    SampleSeries::new(samples, sample_rate)
}

/// Everything the simulator produced for one run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub sensors: Vec<SampleSeries>,
    pub timing: TimingReference,
    pub r_set: f64,
    pub sawtooth: SampleSeries,
    pub pwm: Vec<PwmStream>,
    pub book: VdmCodebook,
    pub v_out: SampleSeries,
    pub capture: IqCapture,
    pub warnings: Vec<String>,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    simulate_with(cfg, None)
}

/// As [`simulate`], with sensor inputs supplied by the caller.
pub fn simulate_with(cfg: &ExperimentConfig, inputs: Option<Vec<SampleSeries>>) -> Result<Simulation> {
    let mut warnings = cfg.validate().stage("config")?;
    let fs = cfg.sample_rate;
    let n = (cfg.duration * fs).round() as usize;
    let sensors = match inputs {
        Some(v) => {
            if v.len() != cfg.sensors.count {
                return Err(Error::Config(format!(
                    "{} input series for sensors.count = {}",
                    v.len(),
                    cfg.sensors.count
                )));
            }
            v
        }
        None => (0..cfg.sensors.count)
            .map(|i| {
                let mut rng = Rng::with_stream(cfg.seed, SENSOR_STREAM_BASE + i as u64);
                gen_sensor_waveform(&cfg.sensors.spec(i), cfg.v_max, cfg.duration, fs, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
            .stage("sensors")?,
    };

    let tones = cfg.two_tone_config();
    let cutoff = cfg.envelope_cutoff();
    check_cutoff(&tones, cutoff).stage("timing")?;
    let rf = synth_two_tone(&tones, cfg.duration, fs).stage("timing")?;
    let env = envelope_detect(&rf, cutoff).stage("timing")?;
    let square = square_from_envelope(&env, cfg.v_s).stage("timing")?;
    let timing = reset_pulses(&square).stage("timing")?;
    let rel = (timing.f_env - cfg.f_env).abs() / cfg.f_env;
    if rel > 0.01 {
        warnings.push(format!(
            "extracted f_env {} Hz differs from configured {} Hz",
            timing.f_env, cfg.f_env
        ));
    }

    let r_set = if cfg.sawtooth.r_set > 0.0 {
        cfg.sawtooth.r_set
    } else {
        required_rset(&cfg.sawtooth_model(1.0), cfg.f_env).stage("sawtooth")?
    };
    let model = cfg.sawtooth_model(r_set);
    let sawtooth = sawtooth_from_pulses(&timing, &model, fs, n).stage("sawtooth")?;
    let peak = sawtooth.samples.iter().cloned().fold(0.0, f64::max);
    if peak >= 2.0 * cfg.v_max {
        warnings.push("sawtooth clipped at 2 v_max; r_set too small".into());
    }
    let pwm = pwm_encode(&sensors, &sawtooth, cfg.v_max, cfg.v_s, cfg.epsilon).stage("pwm")?;
    let clipped: usize = pwm.iter().map(|p| p.clipped_samples).sum();
    if clipped > 0 {
        warnings.push(format!("{clipped} sensor samples clipped to [0, v_max]"));
    }

    let book = build_codebook(&cfg.vdm_config(), &cfg.vco).stage("codebook")?;
    let v_out = sum_streams(&pwm, &book).stage("vdm")?;
    let clean = modulate(&v_out, &cfg.vco, cfg.harmonics).stage("modem")?;
    let mut capture = apply_channel(&clean, &cfg.channel_model()).stage("channel")?;
    capture.meta.insert("seed".into(), cfg.seed.to_string());
    capture.meta.insert("n_sensors".into(), cfg.sensors.count.to_string());
    capture.meta.insert("f_env".into(), cfg.f_env.to_string());

    Ok(Simulation {
        sensors,
        timing,
        r_set,
        sawtooth,
        pwm,
        book,
        v_out,
        capture,
        warnings,
    })
}

/// The value the comparator latched in each complete period: the input at
/// the crossing sample, or at the last sample when the ramp never reached it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub period_starts: Vec<usize>,
    pub period_ends: Vec<usize>,
    /// `[sensor][period]`
    pub latched: Vec<Vec<f64>>,
    /// Input at each period start, `[sensor][period]`.
    pub at_start: Vec<Vec<f64>>,
}

pub fn ground_truth(sim: &Simulation, v_max: f64) -> GroundTruth {
    let p0 = &sim.pwm[0];
    // Skip the partial period before the first reset and after the last.
    let ks: Vec<usize> = (1..p0.period_starts.len().saturating_sub(1)).collect();
    let period_starts: Vec<usize> = ks.iter().map(|&k| p0.period_starts[k]).collect();
    let period_ends: Vec<usize> = ks.iter().map(|&k| p0.period_end(k)).collect();
    let latched = sim
        .pwm
        .iter()
        .zip(&sim.sensors)
        .map(|(p, s)| {
            ks.iter()
                .map(|&k| {
                    let idx = p.cross_indices[k].min(p.period_end(k) - 1);
                    s.samples[idx].clamp(0.0, v_max)
                })
                .collect()
        })
        .collect();
    let at_start = sim
        .sensors
        .iter()
        .map(|s| period_starts.iter().map(|&a| s.samples[a].clamp(0.0, v_max)).collect())
        .collect();
    GroundTruth {
        period_starts,
        period_ends,
        latched,
        at_start,
    }
}

/// Decoded values placed on the true period grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Matched {
    /// Range of true periods covered by the decode.
    pub first: usize,
    pub last: usize,
    /// `[sensor][period - first]`
    pub values: Vec<Vec<f64>>,
    pub unmatched: usize,
}

/// Pairs every true period with the decoded period starting within half a
/// period of it. Unmatched periods inside the covered range hold the
/// previous decoded value and are counted.
pub fn match_periods(truth: &GroundTruth, decode: &DecodeResult, period: f64) -> Option<Matched> {
    let ok: Vec<_> = decode
        .periods
        .iter()
        .filter(|p| p.chain.status == PeriodStatus::Ok)
        .collect();
    let find = |a: usize| {
        ok.iter()
            .find(|p| (p.chain.start as f64 - a as f64).abs() <= period / 2.0)
            .copied()
    };
    let hits: Vec<Option<_>> = truth.period_starts.iter().map(|&a| find(a)).collect();
    let first = hits.iter().position(Option::is_some)?;
    let last = hits.iter().rposition(Option::is_some)?;
    let n = decode.n_sensors;
    let mut values = vec![Vec::new(); n];
    let mut unmatched = 0;
    let mut prev: Vec<f64> = hits[first].unwrap().voltages.clone();
    for h in &hits[first..=last] {
        match h {
            Some(p) => prev = p.voltages.clone(),
            None => unmatched += 1,
        }
        for (i, v) in values.iter_mut().enumerate() {
            v.push(prev[i]);
        }
    }
    Some(Matched {
        first,
        last,
        values,
        unmatched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_sensors: usize,
    pub f_env: f64,
    pub f_env_measured: f64,
    pub r_set_ohms: f64,
    pub sample_rate: f64,
    pub num_samples: usize,
    /// Per sensor: decoded vs comparator-latched value, one per period.
    pub snr_db: Vec<f64>,
    pub mean_snr_db: f64,
    /// Per sensor: decoded vs input at the period start.
    pub snr_uniform_db: Vec<f64>,
    pub mean_snr_uniform_db: f64,
    pub lag_periods: Vec<i64>,
    pub periods_true: usize,
    pub periods_decoded: usize,
    pub periods_scored: usize,
    pub unmatched_periods: usize,
    pub discarded_periods: usize,
    pub ambiguous_transitions: usize,
    pub decode_failures: usize,
    pub pulse_spacing_min: usize,
    pub pulse_spacing_max: usize,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub decode: DecodeResult,
    pub truth: GroundTruth,
    pub sim: Simulation,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Decoder stage alone, as applied to a capture.
pub fn decode_capture(cfg: &ExperimentConfig, capture: &IqCapture) -> Result<DecodeResult> {
    let book = build_codebook(&cfg.vdm_config(), &cfg.vco).stage("codebook")?;
    let mut plan = cfg.plan();
    let mut note = None;
    if capture.sample_rate != cfg.sample_rate {
        plan = plan.rescaled(cfg.sample_rate, capture.sample_rate);
        note = Some(format!(
            "capture rate {} Hz differs from configured {} Hz; window rescaled to {} and hop to {}",
            capture.sample_rate, cfg.sample_rate, plan.window_len, plan.hop
        ));
    }
    let mut out = demultiplex(capture, &book, &plan, cfg.f_env, &cfg.decode_options()).stage("decode")?;
    if let Some(n) = note {
        out.diagnostics.warnings.push(n);
    }
    Ok(out)
}

/// Scores a decode against the simulation's ground truth.
pub fn score(cfg: &ExperimentConfig, sim: &Simulation, decode: &DecodeResult, truth: &GroundTruth) -> Result<(Vec<f64>, Vec<f64>, Vec<i64>, usize, usize)> {
    let period = cfg.sample_rate / cfg.f_env;
    let matched = match_periods(truth, decode, period)
        .ok_or_else(|| Error::SyncFailure("no decoded period matches the true periods".into()))?;
    let n = sim.sensors.len();
    let (mut snr, mut snr_u, mut lags) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let range = matched.first..=matched.last;
        let est = SampleSeries::new(matched.values[i].clone(), cfg.f_env)?;
        let latched = SampleSeries::new(truth.latched[i][range.clone()].to_vec(), cfg.f_env)?;
        let start = SampleSeries::new(truth.at_start[i][range].to_vec(), cfg.f_env)?;
        let (lag, s) = scored(&latched, &est)?;
        let (_, su) = scored(&start, &est)?;
        lags.push(lag);
        snr.push(snr_for_report(s));
        snr_u.push(snr_for_report(su));
    }
    Ok((snr, snr_u, lags, matched.last + 1 - matched.first, matched.unmatched))
}

/// Aligned SNR; constant series cannot be aligned and are scored at lag 0.
fn scored(reference: &SampleSeries, estimate: &SampleSeries) -> Result<(i64, f64)> {
    if reference.len() < 3 {
        return Err(Error::InsufficientSignal("fewer than 3 scored periods".into()));
    }
    match aligned_snr_db(reference, estimate, 1) {
        Ok(r) => Ok(r),
        Err(Error::AlignmentUndefined(_)) => Ok((0, crate::signal::snr_db(reference, estimate)?)),
        Err(e) => Err(e),
    }
}

pub fn run_once(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let sim = simulate(cfg)?;
    run_decoded(cfg, sim, out_dir)
}

pub fn run_decoded(cfg: &ExperimentConfig, sim: Simulation, out_dir: Option<&Path>) -> Result<RunOutput> {
    let decode = decode_capture(cfg, &sim.capture)?;
    let truth = ground_truth(&sim, cfg.v_max);
    let (snr, snr_u, lags, scored_periods, unmatched) = score(cfg, &sim, &decode, &truth).stage("score")?;
    let spacing: Vec<usize> = sim.timing.pulse_indices.windows(2).map(|w| w[1] - w[0]).collect();
    let mut warnings = sim.warnings.clone();
    warnings.extend(decode.diagnostics.warnings.iter().cloned());
    let discarded = decode.diagnostics.discarded_periods;
    let mut report = RunReport {
        seed: cfg.seed,
        n_sensors: cfg.sensors.count,
        f_env: cfg.f_env,
        f_env_measured: sim.timing.f_env,
        r_set_ohms: sim.r_set,
        sample_rate: cfg.sample_rate,
        num_samples: sim.capture.len(),
        mean_snr_db: mean(&snr),
        mean_snr_uniform_db: mean(&snr_u),
        snr_db: snr,
        snr_uniform_db: snr_u,
        lag_periods: lags,
        periods_true: truth.period_starts.len(),
        periods_decoded: decode.periods.len(),
        periods_scored: scored_periods,
        unmatched_periods: unmatched,
        discarded_periods: discarded,
        ambiguous_transitions: decode.diagnostics.ambiguous_transitions,
        decode_failures: discarded + unmatched,
        pulse_spacing_min: spacing.iter().copied().min().unwrap_or(0),
        pulse_spacing_max: spacing.iter().copied().max().unwrap_or(0),
        warnings,
        artifacts: Vec::new(),
    };
    if let Some(dir) = out_dir {
        report.artifacts = write_artifacts(dir, cfg, &sim, &decode, &truth, &report)?;
    }
    Ok(RunOutput {
        report,
        decode,
        truth,
        sim,
    })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], names: &mut Vec<String>) -> Result<()> {
    std::fs::write(dir.join(name), bytes)?;
    names.push(name.to_string());
    Ok(())
}

fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    sim: &Simulation,
    decode: &DecodeResult,
    truth: &GroundTruth,
    report: &RunReport,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    let mut buf = Vec::new();
    iqfile::write_iq(&sim.capture, &mut buf)?;
    write_file(dir, "capture.vdmiq", &buf, &mut names)?;
    write_file(dir, "decode.json", decode.to_json().as_bytes(), &mut names)?;
    buf.clear();
    sim.book.write_csv(&mut buf)?;
    write_file(dir, "codebook.csv", &buf, &mut names)?;
    for i in 0..sim.sensors.len() {
        buf.clear();
        decode.sensor_series(i).write_csv(&mut buf)?;
        write_file(dir, &format!("sensor_{}.csv", i + 1), &buf, &mut names)?;
        buf.clear();
        let t0 = truth.period_starts.first().map_or(0.0, |&a| a as f64 / cfg.sample_rate);
        SampleSeries::with_t0(truth.latched[i].clone(), cfg.f_env, t0)?.write_csv(&mut buf)?;
        write_file(dir, &format!("truth_{}.csv", i + 1), &buf, &mut names)?;
    }
    write_file(dir, "config.toml", cfg.to_toml_string().as_bytes(), &mut names)?;
    names.push("report.json".into());
    let mut full = report.clone();
    full.artifacts = names.clone();
    let json = serde_json::to_string_pretty(&full).expect("report serializes");
    std::fs::write(dir.join("report.json"), json)?;
    Ok(names)
}

/// Reads a capture and decodes it with the codebook and plan of `cfg`.
pub fn decode_file(iq_path: &Path, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<DecodeResult> {
    let capture = iqfile::load_iq(iq_path)?;
    let decode = decode_capture(cfg, &capture)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("decode.json"), decode.to_json())?;
        for i in 0..decode.n_sensors {
            let mut buf = Vec::new();
            decode.sensor_series(i).write_csv(&mut buf)?;
            std::fs::write(dir.join(format!("sensor_{}.csv", i + 1)), buf)?;
        }
    }
    Ok(decode)
}
