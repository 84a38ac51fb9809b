//! Period segmentation, per-period subset-chain decoding and voltage
//! reconstruction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectrogram::{sliding_spectrogram, CztPlan, ZoomSpectrogram};
use super::transitions::{derivative, find_peaks};
use crate::error::{Error, Result};
use crate::signal::{IqCapture, SampleSeries};
use crate::vdm::{mask_string, VdmCodebook};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeOptions {
    /// Path cost of one transition in the chain search, in nats.
    pub lambda: f64,
    /// Extra cost per additional sensor dropped in a single transition, in
    /// nats.
    pub drop_penalty: f64,
    /// Onset peak threshold, as a fraction of the steepest rise.
    pub peak_frac: f64,
    /// Backtracking threshold, as a fraction of the steepest rise.
    pub gradient_frac: f64,
    /// Minimum rise of the full-set trace after an onset, as a fraction of
    /// its dynamic range.
    pub depth_frac: f64,
    /// Minimum relative magnitude the full-set level must reach after an onset.
    pub dominance: f64,
    pub v_max: f64,
    pub epsilon: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            drop_penalty: 2.5,
            peak_frac: 0.35,
            gradient_frac: 0.05,
            depth_frac: 0.35,
            dominance: 0.5,
            v_max: 3.3,
            epsilon: 0.0,
        }
    }
}

/// Level magnitudes per frame, indexed by subset mask.
#[derive(Debug, Clone)]
pub struct LevelTraces {
    pub levels: usize,
    pub mags: Vec<f64>,
    pub frame_times: Vec<usize>,
    pub window_len: usize,
    pub hop: usize,
    /// Nats per unit of relative magnitude, from the capture SNR.
    pub gain: f64,
}

impl LevelTraces {
    pub fn from_spectrogram(spec: &ZoomSpectrogram, book: &VdmCodebook) -> Self {
        let levels = book.num_levels();
        let bins: Vec<usize> = (0..levels as u32)
            .map(|m| spec.plan.nearest_bin(book.freq_of_mask(m)))
            .collect();
        let mut mags = Vec::with_capacity(spec.num_frames() * levels);
        for f in 0..spec.num_frames() {
            let row = spec.frame(f);
            mags.extend(bins.iter().map(|&b| row[b] as f64));
        }
        Self {
            levels,
            mags,
            frame_times: spec.frame_times.clone(),
            window_len: spec.plan.window_len,
            hop: spec.plan.hop,
            gain: spec.evidence_gain(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn get(&self, frame: usize, mask: u32) -> f64 {
        self.mags[frame * self.levels + mask as usize]
    }

    fn row(&self, frame: usize) -> &[f64] {
        &self.mags[frame * self.levels..(frame + 1) * self.levels]
    }

    fn trace(&self, mask: u32) -> Vec<f64> {
        (0..self.num_frames()).map(|f| self.get(f, mask)).collect()
    }

    /// Magnitudes divided by the frame's strongest level.
    fn relative_row(&self, frame: usize) -> Vec<f64> {
        let row = self.row(frame);
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            row.iter().map(|v| v / peak).collect()
        } else {
            vec![0.0; row.len()]
        }
    }

    fn strongest_except(&self, frame: usize, skip: u32) -> u32 {
        let row = self.row(frame);
        let mut best: Option<u32> = None;
        for m in 0..self.levels as u32 {
            if m != skip && best.is_none_or(|b| row[m as usize] > row[b as usize]) {
                best = Some(m);
            }
        }
        best.unwrap_or(0)
    }

    /// Frame time (in samples) where `|S_from| - |S_to|` first changes sign
    /// from positive to non-positive within `[lo, hi)`, interpolated between
    /// frames. Returned as the sample at the window centre.
    fn crossing(&self, from: u32, to: u32, lo: usize, hi: usize) -> Option<f64> {
        let hi = hi.min(self.num_frames());
        let y = |f: usize| self.get(f, from) - self.get(f, to);
        for f in lo.max(1)..hi {
            let (a, b) = (y(f - 1), y(f));
            if a > 0.0 && b <= 0.0 {
                let c = (f - 1) as f64 + a / (a - b);
                return Some(c * self.hop as f64 + self.window_len as f64 / 2.0);
            }
        }
        None
    }

    fn span(&self) -> usize {
        self.window_len.div_ceil(self.hop)
    }
}

/// Outcome of period segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub periods: Vec<(usize, usize)>,
    pub onsets_found: usize,
    pub filled: usize,
    pub period_estimate: f64,
}

/// Finds period boundaries from the rises of the full-set level.
///
/// With `nominal_period` unset, the median spacing of the detected onsets
/// is used to merge and fill.
pub fn segment_periods(
    spec: &ZoomSpectrogram,
    book: &VdmCodebook,
    nominal_period: Option<f64>,
    opts: &DecodeOptions,
) -> Result<Segmentation> {
    segment_traces(&LevelTraces::from_spectrogram(spec, book), book, nominal_period, opts)
}

fn segment_traces(
    tr: &LevelTraces,
    book: &VdmCodebook,
    nominal_period: Option<f64>,
    opts: &DecodeOptions,
) -> Result<Segmentation> {
    let full = book.full_mask();
    let trace = tr.trace(full);
    let n_frames = trace.len();
    let capture_len = tr.frame_times.last().map_or(0, |t| t + tr.window_len);
    if n_frames < 3 {
        return Err(Error::SyncFailure(format!("only {n_frames} frames")));
    }
    // Rises of the full-set trace are falls of its negation.
    let neg_trace: Vec<f64> = trace.iter().map(|v| -v).collect();
    let fall: Vec<f64> = derivative(&neg_trace).iter().map(|d| -d).collect();
    let steepest = fall.iter().cloned().fold(0.0, f64::max);
    let (hi, lo) = trace
        .iter()
        .fold((f64::MIN, f64::MAX), |(h, l), v| (h.max(*v), l.min(*v)));
    let range = hi - lo;
    if !(steepest > 0.0 && range > 0.0) {
        return Err(Error::SyncFailure(
            "full-set level never rises; no periodic structure".into(),
        ));
    }
    let span = tr.span();
    let mut onsets = Vec::new();
    for p in find_peaks(&fall, opts.peak_frac * steepest) {
        let mut s = p - 1;
        while s > 0 && fall[s] >= opts.gradient_frac * steepest {
            s -= 1;
        }
        let end = (s + span + 2).min(n_frames);
        let rise = trace[s..end].iter().cloned().fold(f64::MIN, f64::max) - trace[s];
        if rise < opts.depth_frac * range {
            continue;
        }
        let dominant = (s..end).any(|f| tr.relative_row(f)[full as usize] >= opts.dominance);
        if !dominant {
            continue;
        }
        let prev = tr.strongest_except(s, full);
        let t = tr
            .crossing(prev, full, s, end + 1)
            .unwrap_or((tr.frame_times[s] + tr.window_len) as f64);
        onsets.push(t.round().max(0.0) as usize);
    }
    onsets.sort_unstable();
    onsets.dedup();
    let onsets_found = onsets.len();
    let period = match nominal_period {
        Some(p) => p,
        None => {
            if onsets.len() < 2 {
                return Err(Error::SyncFailure(format!(
                    "found {} period onsets; cannot estimate the period",
                    onsets.len()
                )));
            }
            let mut gaps: Vec<usize> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
            gaps.sort_unstable();
            gaps[gaps.len() / 2] as f64
        }
    };
    let mut kept: Vec<usize> = Vec::new();
    for t in onsets {
        if kept.last().is_none_or(|&k| (t - k) as f64 > 0.6 * period) {
            kept.push(t);
        }
    }
    if kept.is_empty() {
        return Err(Error::SyncFailure("no full-set onsets found".into()));
    }
    let mut bounds = Vec::new();
    let mut filled = 0;
    for w in kept.windows(2) {
        let gap = (w[1] - w[0]) as f64;
        let k = ((gap / period).round() as usize).max(1);
        filled += k - 1;
        for j in 0..k {
            bounds.push(w[0] + (j as f64 * gap / k as f64).round() as usize);
        }
    }
    bounds.push(*kept.last().unwrap());
    // Complete periods that touch the capture edges.
    let tol = 2.0 * tr.hop as f64;
    let first = bounds[0] as f64;
    if first - period >= -tol && first > tol {
        bounds.insert(0, (first - period).round().max(0.0) as usize);
    }
    let last = *bounds.last().unwrap() as f64;
    if last + period <= capture_len as f64 + tol && (capture_len as f64 - last) > tol {
        bounds.push(((last + period).round() as usize).min(capture_len));
    }
    if bounds.len() < 2 {
        return Err(Error::SyncFailure(format!(
            "only one period boundary found (at sample {})",
            bounds[0]
        )));
    }
    Ok(Segmentation {
        periods: bounds.windows(2).map(|w| (w[0], w[1])).collect(),
        onsets_found,
        filled,
        period_estimate: period,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub mask: u32,
    /// Sensor states, sensor 1 first.
    pub sensors: String,
    pub start: usize,
    pub end: usize,
}

impl ChainLink {
    pub fn duration(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodStatus {
    Ok,
    /// Too short to hold a decodable frame.
    TooShort,
    /// No level rose above the magnitude floor.
    NoSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodChain {
    pub start: usize,
    pub end: usize,
    pub status: PeriodStatus,
    pub chain: Vec<ChainLink>,
    pub ambiguous_transitions: usize,
}

/// Subset-constrained best path over the frames of one period.
/// `rel[k][s]` is the relative magnitude of subset `s` in frame `k`.
fn chain_path(rel: &[Vec<f64>], levels: usize, lambda: f64, drop_penalty: f64) -> Vec<u32> {
    let mut score = rel[0].clone();
    let mut back = vec![vec![0u32; levels]; rel.len()];
    let mut next = vec![0.0; levels];
    for k in 1..rel.len() {
        for s in 0..levels as u32 {
            let mut best = score[s as usize];
            let mut arg = s;
            // Strict supersets of s, ascending.
            let mut p = (s + 1) | s;
            while (p as usize) < levels {
                let dropped = (p.count_ones() - s.count_ones()) as f64;
                let v = score[p as usize] - lambda - drop_penalty * (dropped - 1.0);
                if v > best {
                    best = v;
                    arg = p;
                }
                p = (p + 1) | s;
            }
            next[s as usize] = best + rel[k][s as usize];
            back[k][s as usize] = arg;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut s = 0u32;
    for m in 0..levels as u32 {
        if score[m as usize] > score[s as usize] {
            s = m;
        }
    }
    let mut path = vec![s; rel.len()];
    for k in (1..rel.len()).rev() {
        s = back[k][s as usize];
        path[k - 1] = s;
    }
    path
}

fn decode_one(tr: &LevelTraces, n: usize, a0: usize, a1: usize, opts: &DecodeOptions, floor: f64) -> PeriodChain {
    let half = tr.window_len as f64 / 2.0;
    let centre = |f: usize| tr.frame_times[f] as f64 + half;
    let f0 = tr.frame_times.partition_point(|&t| (t as f64 + half) < a0 as f64);
    let f1 = tr.frame_times.partition_point(|&t| (t as f64 + half) < a1 as f64);
    let mut out = PeriodChain {
        start: a0,
        end: a1,
        status: PeriodStatus::Ok,
        chain: Vec::new(),
        ambiguous_transitions: 0,
    };
    if f1 < f0 + 2 {
        out.status = PeriodStatus::TooShort;
        return out;
    }
    let peak = (f0..f1)
        .map(|f| tr.row(f).iter().cloned().fold(0.0, f64::max))
        .fold(0.0, f64::max);
    if peak <= floor {
        out.status = PeriodStatus::NoSignal;
        return out;
    }
    let rel: Vec<Vec<f64>> = (f0..f1)
        .map(|f| tr.relative_row(f).into_iter().map(|v| v * tr.gain).collect())
        .collect();
    let path = chain_path(&rel, tr.levels, opts.lambda, opts.drop_penalty);
    let span = tr.span();
    let mut start = a0;
    for k in 1..path.len() {
        let (from, to) = (path[k - 1], path[k]);
        if from == to {
            continue;
        }
        let f = f0 + k;
        // Frames of neighbouring periods may cross too; stay inside this one.
        let t = match tr.crossing(from, to, f.saturating_sub(span + 1).max(f0), (f + span + 1).min(f1)) {
            Some(t) => t,
            None => {
                out.ambiguous_transitions += 1;
                centre(f) - tr.hop as f64 / 2.0
            }
        };
        let b = (t.round().max(0.0) as usize).clamp(start, a1);
        out.chain.push(ChainLink {
            mask: from,
            sensors: mask_string(from, n),
            start,
            end: b,
        });
        start = b;
    }
    let last = *path.last().unwrap();
    out.chain.push(ChainLink {
        mask: last,
        sensors: mask_string(last, n),
        start,
        end: a1,
    });
    out.chain.retain(|l| l.end > l.start);
    // A window straddling a multi-sensor drop can peak at a level in between.
    // A state shorter than half a window never holds the majority of a frame,
    // so such dwells are taken as that artifact.
    let mut i = 1;
    while i + 1 < out.chain.len() {
        let l = &out.chain[i];
        if l.end - l.start < tr.window_len / 2 {
            let mid = (l.start + l.end) / 2;
            out.chain.remove(i);
            out.chain[i - 1].end = mid;
            out.chain[i].start = mid;
        } else {
            i += 1;
        }
    }
    out
}

/// Decodes the subset chain of the period `[a0, a1)`.
pub fn decode_period(
    spec: &ZoomSpectrogram,
    book: &VdmCodebook,
    a0: usize,
    a1: usize,
    opts: &DecodeOptions,
) -> PeriodChain {
    let tr = LevelTraces::from_spectrogram(spec, book);
    let floor = magnitude_floor(&tr);
    decode_one(&tr, book.n, a0, a1, opts, floor)
}

fn magnitude_floor(tr: &LevelTraces) -> f64 {
    let mut peaks: Vec<f64> = (0..tr.num_frames())
        .map(|f| tr.row(f).iter().cloned().fold(0.0, f64::max))
        .collect();
    if peaks.is_empty() {
        return 0.0;
    }
    peaks.sort_by(|a, b| a.total_cmp(b));
    1e-6 * peaks[peaks.len() / 2]
}

/// Per-period reconstruction of every sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDecode {
    #[serde(flatten)]
    pub chain: PeriodChain,
    pub duty_samples: Vec<usize>,
    pub voltages: Vec<f64>,
    pub saturated: Vec<bool>,
    /// Some duty exceeded the nominal period by more than one hop.
    pub overlong: bool,
}

/// Converts chains to per-sensor duties and voltages,
/// `V = (T_d - epsilon) V_max f_s`, clamped to `[0, V_max]`.
pub fn reconstruct(
    chains: &[PeriodChain],
    book: &VdmCodebook,
    sample_rate: f64,
    f_s: f64,
    v_max: f64,
    epsilon: f64,
    hop: usize,
) -> Vec<PeriodDecode> {
    let nominal = sample_rate / f_s;
    chains
        .iter()
        .map(|c| {
            let mut duty = vec![0usize; book.n];
            for link in &c.chain {
                for (i, d) in duty.iter_mut().enumerate() {
                    if link.mask >> i & 1 == 1 {
                        *d += link.duration();
                    }
                }
            }
            let len = c.end - c.start;
            let ok = c.status == PeriodStatus::Ok;
            let voltages = duty
                .iter()
                .map(|&d| ((d as f64 / sample_rate - epsilon) * v_max * f_s).clamp(0.0, v_max))
                .collect();
            PeriodDecode {
                saturated: duty.iter().map(|&d| ok && d >= len).collect(),
                overlong: duty.iter().any(|&d| d as f64 > nominal + hop as f64),
                duty_samples: duty,
                voltages,
                chain: c.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub num_frames: usize,
    pub window_len: usize,
    pub hop: usize,
    pub bins: usize,
    pub level_spacing_hz: f64,
    /// Whether the window alone resolves adjacent levels.
    pub resolvable: bool,
    pub onsets_found: usize,
    pub filled_periods: usize,
    pub discarded_periods: usize,
    pub ambiguous_transitions: usize,
    pub overlong_periods: usize,
    /// Timing quantization of the frame grid, in samples.
    pub hop_quantization_samples: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub n_sensors: usize,
    pub sample_rate: f64,
    pub f_s: f64,
    pub periods: Vec<PeriodDecode>,
    pub diagnostics: Diagnostics,
}

impl DecodeResult {
    /// One value per period for `sensor` (0-based) at rate `f_s`. Periods
    /// that could not be decoded hold the previous value.
    pub fn sensor_series(&self, sensor: usize) -> SampleSeries {
        let mut last = 0.0;
        let samples = self
            .periods
            .iter()
            .map(|p| {
                if p.chain.status == PeriodStatus::Ok {
                    last = p.voltages[sensor];
                }
                last
            })
            .collect();
        let t0 = self.periods.first().map_or(0.0, |p| p.chain.start as f64 / self.sample_rate);
        SampleSeries {
            samples,
            sample_rate: self.f_s,
            t0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decode result serializes")
    }
}

/// Spectrogram, segmentation, per-period decoding and reconstruction.
pub fn demultiplex(
    iq: &IqCapture,
    book: &VdmCodebook,
    plan: &CztPlan,
    f_s: f64,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    if iq.is_empty() {
        return Err(Error::InsufficientSignal("empty capture".into()));
    }
    if !(f_s > 0.0) {
        return Err(Error::Config(format!("f_s must be positive, got {f_s}")));
    }
    let spec = sliding_spectrogram(iq, plan)?;
    let tr = LevelTraces::from_spectrogram(&spec, book);
    drop(spec);
    let nominal = iq.sample_rate / f_s;
    let seg = segment_traces(&tr, book, Some(nominal), opts)?;
    let floor = magnitude_floor(&tr);
    let chains: Vec<PeriodChain> = seg
        .periods
        .par_iter()
        .map(|&(a0, a1)| decode_one(&tr, book.n, a0, a1, opts, floor))
        .collect();
    let periods = reconstruct(&chains, book, iq.sample_rate, f_s, opts.v_max, opts.epsilon, plan.hop);
    let resolvable = plan.resolvable(iq.sample_rate, book.level_spacing_hz());
    let mut warnings = Vec::new();
    if !resolvable {
        warnings.push(format!(
            "window of {} samples is shorter than fs/level_spacing = {:.1}; levels are told apart by relative magnitude",
            plan.window_len,
            iq.sample_rate / book.level_spacing_hz()
        ));
    }
    let diagnostics = Diagnostics {
        num_frames: tr.num_frames(),
        window_len: plan.window_len,
        hop: plan.hop,
        bins: plan.bins,
        level_spacing_hz: book.level_spacing_hz(),
        resolvable,
        onsets_found: seg.onsets_found,
        filled_periods: seg.filled,
        discarded_periods: periods.iter().filter(|p| p.chain.status != PeriodStatus::Ok).count(),
        ambiguous_transitions: chains.iter().map(|c| c.ambiguous_transitions).sum(),
        overlong_periods: periods.iter().filter(|p| p.overlong).count(),
        hop_quantization_samples: plan.hop,
        warnings,
    };
    Ok(DecodeResult {
        n_sensors: book.n,
        sample_rate: iq.sample_rate,
        f_s,
        periods,
        diagnostics,
    })
}
