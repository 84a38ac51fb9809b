use std::f64::consts::PI;

use num_complex::Complex32;
use proptest::prelude::*;
use vdmbs::iqfile::{parse_iq, write_iq};
use vdmbs::signal::{align_and_lag, resample_hold, snr_db, IqCapture, Rng, SampleSeries};
use vdmbs::Error;

fn series(v: Vec<f64>, rate: f64) -> SampleSeries {
    SampleSeries::new(v, rate).unwrap()
}

#[test]
fn third_harmonic_residual_gives_twenty_db() {
    // Power ratio of a unit sine to a 0.1 sine is 100, i.e. 20 dB.
    let fs = 100e3;
    let n = (0.01 * fs) as usize;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 1e3 * i as f64 / fs).sin()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| x[i] + 0.1 * (2.0 * PI * 3e3 * i as f64 / fs).sin())
        .collect();
    let s = snr_db(&series(x, fs), &series(y, fs)).unwrap();
    assert!((s - 20.0).abs() < 0.1, "{s}");
}

#[test]
fn snr_of_all_zero_reference_is_undefined() {
    let z = series(vec![0.0; 4], 1.0);
    assert!(matches!(snr_db(&z, &z), Err(Error::UndefinedMetric(_))));
}

#[test]
fn hold_drops_to_first_sample() {
    let out = resample_hold(&series(vec![0.0, 1.0, 0.0], 3.0), 1.0).unwrap();
    assert_eq!(out.samples, vec![0.0]);
    let out = resample_hold(&series(vec![1.0, 2.0], 1.0), 2.0).unwrap();
    assert_eq!(out.samples, vec![1.0, 1.0, 2.0, 2.0]);
}

#[test]
fn impulse_lag_matches_exhaustive_scan() {
    let mut x = vec![0.0; 256];
    let mut y = vec![0.0; 256];
    x[100] = 1.0;
    y[103] = 1.0;
    let a = align_and_lag(&series(x, 1.0), &series(y, 1.0), 10).unwrap();
    assert_eq!(a.lag, 3);
    assert_eq!(a.aligned.samples[100], 1.0);
}

#[test]
fn slices_keep_rate_and_shift_origin() {
    let s = SampleSeries::with_t0((0..10).map(f64::from).collect(), 2.0, 1.0).unwrap();
    let t = s.slice(4, 8);
    assert_eq!(t.sample_rate, 2.0);
    assert_eq!(t.t0, 3.0);
    assert_eq!(t.duration(), 2.0);
}

#[test]
fn rng_streams_are_independent_and_repeatable() {
    let a: Vec<u64> = {
        let mut r = Rng::with_stream(7, 1);
        (0..8).map(|_| r.next_u64()).collect()
    };
    let b: Vec<u64> = {
        let mut r = Rng::with_stream(7, 1);
        (0..8).map(|_| r.next_u64()).collect()
    };
    let c: Vec<u64> = {
        let mut r = Rng::with_stream(7, 2);
        (0..8).map(|_| r.next_u64()).collect()
    };
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn iq_capture_rejects_band_above_rate() {
    let r = IqCapture::new(vec![Complex32::new(1.0, 0.0)], 1e6, 1e5, 2e6);
    assert!(r.is_err());
}

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snr_is_scale_invariant(x in finite_vec(4..64), noise in finite_vec(64..65), a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let y: Vec<f64> = x.iter().zip(&noise).map(|(v, e)| v + 0.01 * e).collect();
        let s1 = snr_db(&series(x.clone(), 1.0), &series(y.clone(), 1.0)).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ys: Vec<f64> = y.iter().map(|v| a * v).collect();
        let s2 = snr_db(&series(xs, 1.0), &series(ys, 1.0)).unwrap();
        if s1.is_finite() {
            prop_assert!((s1 - s2).abs() < 1e-6 * s1.abs().max(1.0));
        }
    }

    #[test]
    fn hold_up_then_down_is_identity(x in finite_vec(1..50), k in 1usize..6) {
        let s = series(x.clone(), 10.0);
        let up = resample_hold(&s, 10.0 * k as f64).unwrap();
        prop_assert_eq!(up.len(), x.len() * k);
        let back = resample_hold(&up, 10.0).unwrap();
        prop_assert_eq!(back.samples, x);
    }

    #[test]
    fn constant_stays_constant_under_hold(c in -5.0f64..5.0, n in 1usize..40, rate in 0.5f64..50.0) {
        let out = resample_hold(&series(vec![c; n], 10.0), rate).unwrap();
        prop_assert!(out.samples.iter().all(|v| *v == c));
        // Duration preserved to within one output sample.
        prop_assert!((out.duration() - n as f64 / 10.0).abs() <= 1.0 / rate + 1e-9);
    }

    #[test]
    fn constructed_shift_is_recovered(seed in any::<u64>(), shift in 0usize..10) {
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let mut y = vec![0.0; shift];
        y.extend_from_slice(&x[..200 - shift]);
        let a = align_and_lag(&series(x, 1.0), &series(y, 1.0), 10).unwrap();
        prop_assert_eq!(a.lag, shift as i64);
        prop_assert_eq!(a.aligned.len(), a.reference.len());
    }

    #[test]
    fn iq_round_trip_is_bit_exact(re in prop::collection::vec(any::<f32>(), 0..64), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let samples: Vec<Complex32> = re.iter().map(|&r| Complex32::new(r, rng.normal() as f32)).collect();
        let mut cap = IqCapture::new(samples, 4e6, 100e3, 1e6).unwrap();
        cap.meta.insert("k".into(), "v".into());
        let mut buf = Vec::new();
        write_iq(&cap, &mut buf).unwrap();
        let back = parse_iq(&buf).unwrap();
        prop_assert_eq!(back.samples.len(), cap.samples.len());
        for (a, b) in back.samples.iter().zip(&cap.samples) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        prop_assert_eq!(back.meta, cap.meta);
        prop_assert_eq!(back.sample_rate, cap.sample_rate);
    }

    #[test]
    fn truncated_iq_is_a_format_error(cut in 1usize..40) {
        let cap = IqCapture::new(vec![Complex32::new(0.5, -0.5); 8], 4e6, 100e3, 1e6).unwrap();
        let mut buf = Vec::new();
        write_iq(&cap, &mut buf).unwrap();
        let end = buf.len() - cut;
        let r = parse_iq(&buf[..end]);
        prop_assert!(matches!(r, Err(Error::Format { .. })), "{:?}", r);
    }
}
