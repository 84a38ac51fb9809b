//! End-to-end acceptance suite. Every criterion runs, prints one PASS/FAIL
//! line with its measurement and runtime, and the test fails if any did.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use vdmbs::harness::config::ChannelSpec;
use vdmbs::harness::{
    decode_file, demo_phase_alignment, run_once, simulate, ExperimentConfig,
};
use vdmbs::modem::VcoModel;
use vdmbs::rx::{czt, demultiplex, Czt, CztMethod, CztPlan, DecodeOptions, PeriodStatus};
use vdmbs::signal::Rng;
use vdmbs::tag::{envelope_detect, square_from_envelope, synth_two_tone, TwoToneConfig};
use vdmbs::vdm::{build_codebook, VdmConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cfg(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(None, &o).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn seed_means(c: &ExperimentConfig, seeds: std::ops::Range<u64>) -> Vec<f64> {
    seeds
        .into_par_iter()
        .map(|s| {
            let mut c = c.clone();
            c.seed = s;
            run_once(&c, None).map_or(f64::NAN, |o| o.report.mean_snr_db)
        })
        .collect()
}

fn codebook_levels() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 1..=8 {
        let book = build_codebook(&VdmConfig::normalized(n, 3.3, 10e3, 1.0), &VcoModel::default())
            .map_err(|e| e.to_string())?;
        // Brute-force subset sums from the weights alone.
        let mut sums: Vec<f64> = (0u32..1 << n)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| book.weights[i]).sum())
            .collect();
        sums.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = sums.windows(2).map(|w| w[1] - w[0]).collect();
        let g0 = gaps[0];
        if !(g0 > 0.0) {
            return Err(format!("N={n}: repeated level"));
        }
        worst = gaps.iter().map(|g| (g - g0).abs() / g0).fold(worst, f64::max);
        if book.num_levels() != 1 << n {
            return Err(format!("N={n}: {} levels", book.num_levels()));
        }
    }
    let five = build_codebook(&VdmConfig::normalized(5, 3.3, 10e3, 1.0), &VcoModel::default()).unwrap();
    check(
        worst <= 1e-12 && five.num_levels() == 32,
        format!("worst relative gap spread {worst:.1e}, N=5 gives {} levels", five.num_levels()),
    )
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn czt_fidelity() -> Outcome {
    let mut rng = Rng::new(2);
    let (mut dft_err, mut blu_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let n = 2 + rng.below(2047) as usize;
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.normal(), rng.normal())).collect();
        let mut dft = x.clone();
        FftPlanner::new().plan_fft_forward(n).process(&mut dft);
        let fs = 4e6;
        let got = czt(&x, n, 0.0, fs * (n - 1) as f64 / n as f64, fs).map_err(|e| e.to_string())?;
        dft_err = dft_err.max(rel_err(&got, &dft));

        let m = 2 + rng.below(2047) as usize;
        let f0 = rng.uniform(0.0, 1e6);
        let f1 = rng.uniform(f0 + 1e3, 2e6);
        let d = Czt::new(n, m, f0, f1, fs, CztMethod::Direct).unwrap().process(&x).unwrap();
        let b = Czt::new(n, m, f0, f1, fs, CztMethod::Bluestein).unwrap().process(&x).unwrap();
        blu_err = blu_err.max(rel_err(&b, &d));
    }
    check(
        dft_err <= 1e-9 && blu_err <= 1e-9,
        format!("max relative error vs DFT {dft_err:.1e}, Bluestein vs direct {blu_err:.1e}"),
    )
}

/// Duties on the sample grid whose distinct falls sit at least `gap` apart
/// and `edge` from either end of the period, so every state owns at least
/// one whole window. About one in five copies an earlier sensor's duty to
/// produce a tie.
fn random_duties(rng: &mut Rng, n: usize, period: usize, gap: usize, edge: usize) -> Vec<usize> {
    'draw: loop {
        let mut d: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && rng.below(5) == 0 {
                let j = rng.below(i as u64) as usize;
                d.push(d[j]);
            } else {
                d.push(edge + rng.below((period - 2 * edge) as u64) as usize);
            }
        }
        let mut u = d.clone();
        u.sort_unstable();
        u.dedup();
        if u.windows(2).any(|w| w[1] - w[0] < gap) {
            continue 'draw;
        }
        return d;
    }
}

fn fsm_oracle() -> Outcome {
    const P: usize = 800;
    let plan = CztPlan::for_rate(common::FS);
    let (win, hop) = (plan.window_len, plan.hop);
    let tol = 2 * hop + win / 8;
    let trials: Vec<(usize, u64)> = (0..10).map(|t| ([2, 3, 5][t % 3], t as u64)).collect();
    let results: Vec<Result<(usize, usize), String>> = trials
        .par_iter()
        .map(|&(n, seed)| {
            let mut rng = Rng::new(1000 + seed);
            let duties: Vec<Vec<usize>> = (0..10).map(|_| random_duties(&mut rng, n, P, win + hop, win + hop)).collect();
            let book = common::book(n);
            let iq = common::capture(&book, &duties, P, 0);
            let r = demultiplex(&iq, &book, &plan, common::FS / P as f64, &DecodeOptions::default())
                .map_err(|e| format!("N={n}: {e}"))?;
            let mut seen = vec![false; duties.len()];
            let mut worst = 0;
            for p in &r.periods {
                let k = (p.chain.start + P / 2) / P;
                let (masks, times) = common::oracle_chain(&duties[k], P, k * P);
                let got: Vec<u32> = p.chain.chain.iter().map(|l| l.mask).collect();
                if p.chain.status != PeriodStatus::Ok || got != masks {
                    let at: Vec<usize> = p.chain.chain.iter().map(|l| l.start).collect();
                    return Err(format!("N={n} period {k}: {got:?} at {at:?} vs oracle {masks:?} at {times:?}, duties {:?}", duties[k]));
                }
                for (l, t) in p.chain.chain.iter().skip(1).zip(&times) {
                    worst = worst.max(l.start.abs_diff(*t));
                }
                seen[k] = true;
            }
            let missing = seen.iter().filter(|s| !**s).count();
            if missing > 0 {
                return Err(format!("N={n}: {missing} periods not decoded"));
            }
            Ok((duties.len(), worst))
        })
        .collect();
    let mut count = 0;
    let mut worst = 0;
    for r in results {
        let (c, w) = r?;
        count += c;
        worst = worst.max(w);
    }
    check(
        count == 100 && worst <= tol,
        format!("{count} duty vectors matched, worst transition error {worst} samples (limit {tol})"),
    )
}

fn constants(levels: &[f64]) -> ExperimentConfig {
    let mut c = cfg(&["f_env=5e3", "sensors.kind=\"constant\""]);
    c.sensors.channels = levels
        .iter()
        .map(|&v| ChannelSpec { amplitude: Some(v), ..Default::default() })
        .collect();
    c
}

fn noiseless_round_trip() -> Outcome {
    let c = constants(&[0.33, 1.65, 2.97]);
    let bound = c.v_max * c.f_env * c.plan.hop as f64 / c.sample_rate;
    let mut worst: f64 = 0.0;
    for levels in [[0.33, 1.65, 2.97], [0.33, 1.65, 3.3]] {
        let c = constants(&levels);
        let out = run_once(&c, None).map_err(|e| e.to_string())?;
        for p in &out.decode.periods {
            for (v, want) in p.voltages.iter().zip(levels) {
                worst = worst.max((v - want).abs());
            }
        }
    }
    let sine = run_once(&cfg(&["f_env=5e3"]), None).map_err(|e| e.to_string())?;
    let min_snr = sine.report.snr_db.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        worst <= bound && min_snr >= 30.0,
        format!("worst constant error {:.1} mV (limit {:.1} mV), worst sine SNR {min_snr:.1} dB", worst * 1e3, bound * 1e3),
    )
}

fn paper_snr_target() -> Outcome {
    let snr = seed_means(&cfg(&["channel.noise_snr_db=20"]), 1..11);
    let m = mean(&snr);
    check(m >= 15.0, format!("mean SNR {m:.2} dB over 10 seeds (min {:.2})", snr.iter().cloned().fold(f64::INFINITY, f64::min)))
}

fn bandwidth_scaling() -> Outcome {
    let three = mean(&seed_means(
        &cfg(&["sensors.count=3", "sensors.frequency=18e3", "f_env=40e3", "channel.noise_snr_db=25"]),
        1..6,
    ));
    let five = mean(&seed_means(
        &cfg(&["sensors.count=5", "sensors.frequency=5e3", "f_env=12e3", "channel.noise_snr_db=25"]),
        1..6,
    ));
    check(
        three >= 15.0 && five >= 15.0,
        format!("3 x 18 kHz at 40 kHz: {three:.2} dB, 5 x 5 kHz at 12 kHz: {five:.2} dB"),
    )
}

fn stream_ordering() -> Outcome {
    let three = seed_means(&cfg(&["sensors.count=3", "channel.noise_snr_db=20"]), 1..6);
    let five = seed_means(&cfg(&["sensors.count=5", "channel.noise_snr_db=20"]), 1..6);
    let wins = three.iter().zip(&five).filter(|(a, b)| a >= b).count();
    check(
        wins == 5,
        format!("3 streams at or above 5 streams on {wins}/5 seeds (means {:.2} vs {:.2} dB)", mean(&three), mean(&five)),
    )
}

fn rising_edges(x: &[f64], mid: f64) -> Vec<usize> {
    (1..x.len()).filter(|&i| x[i - 1] <= mid && x[i] > mid).collect()
}

fn timing_reference() -> Outcome {
    let fs = 4e6;
    let mut rng = Rng::new(8);
    let cases: Vec<TwoToneConfig> = (0..50)
        .map(|_| {
            let a1 = rng.uniform(0.2, 1.0);
            TwoToneConfig {
                amplitude: 1.0,
                f1: 400e3,
                f2: 405e3,
                alpha1: a1,
                alpha2: a1 * rng.uniform(0.2, 0.9),
                phi1: rng.uniform(0.0, 2.0 * PI),
                phi2: rng.uniform(0.0, 2.0 * PI),
            }
        })
        .collect();
    let results: Vec<(f64, bool)> = cases
        .par_iter()
        .map(|c| {
            let square = |c: &TwoToneConfig| {
                let r = synth_two_tone(c, 106.0 / 5e3, fs).unwrap();
                square_from_envelope(&envelope_detect(&r, 10e3).unwrap(), 3.3).unwrap().samples
            };
            let sq = square(c);
            let e: Vec<usize> = rising_edges(&sq, 1.65).into_iter().filter(|&i| i >= 3200).collect();
            let e = &e[..101.min(e.len())];
            let f = (e.len() - 1) as f64 * fs / (e[e.len() - 1] - e[0]) as f64;
            let err = if e.len() == 101 { (f / 5e3 - 1.0).abs() } else { f64::INFINITY };
            (err, sq == square(&c.scaled(7.5)) && sq == square(&c.scaled(0.1)))
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let invariant = results.iter().all(|r| r.1);
    check(
        worst <= 1e-4 && invariant,
        format!("worst frequency error {:.4}% over 100 cycles, amplitude invariant: {invariant}", worst * 100.0),
    )
}

fn synchronization() -> Outcome {
    let mut c = cfg(&["sensors.count=4", "sensors.random_phase=false", "sensors.random_amplitude=false"]);
    c.sensors.amplitude = 1.2;
    let sim = simulate(&c).map_err(|e| e.to_string())?;
    let same = sim.pwm.iter().all(|p| p.fall_indices == sim.pwm[0].fall_indices);
    let demo = demo_phase_alignment(&cfg(&["demo.offset_s=0"])).map_err(|e| e.to_string())?;
    let worst = demo.measured_delay_s.iter().map(|d| d.abs()).fold(0.0, f64::max);
    check(
        same && demo.fall_mismatches == 0 && worst <= demo.resolution_s,
        format!(
            "identical falls: {same}, demo delay {:.1} us (one sample {:.0} us)",
            worst * 1e6,
            demo.resolution_s * 1e6
        ),
    )
}

fn determinism() -> Outcome {
    let c = cfg(&["seed=42", "channel.noise_snr_db=20"]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_once(&c, Some(a.path())).map_err(|e| e.to_string())?;
    run_once(&c, Some(b.path())).map_err(|e| e.to_string())?;
    let differing: Vec<&String> = ra
        .report
        .artifacts
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .collect();
    let d = decode_file(&a.path().join("capture.vdmiq"), &c, None).map_err(|e| e.to_string())?;
    check(
        differing.is_empty() && d == ra.decode,
        format!(
            "{} artifacts compared, differing {differing:?}, file decode matches memory: {}",
            ra.report.artifacts.len(),
            d == ra.decode
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("codebook levels distinct and uniform", Duration::from_secs(1), codebook_levels),
        ("CZT fidelity", Duration::from_secs(10), czt_fidelity),
        ("subset chains match the PWM oracle", Duration::from_secs(120), fsm_oracle),
        ("noiseless round trip", Duration::from_secs(30), noiseless_round_trip),
        ("mean SNR at 20 dB channel", Duration::from_secs(180), paper_snr_target),
        ("bandwidth scaling", Duration::from_secs(300), bandwidth_scaling),
        ("stream-count ordering", Duration::from_secs(180), stream_ordering),
        ("timing reference robustness", Duration::from_secs(30), timing_reference),
        ("synchronization", Duration::from_secs(30), synchronization),
        ("determinism and file round trip", Duration::from_secs(60), determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = t.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        // Straight to stderr so the lines survive output capture.
        let _ = writeln!(
            std::io::stderr(),
            "{} {:>2} {name}: {detail} [{:.2} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
