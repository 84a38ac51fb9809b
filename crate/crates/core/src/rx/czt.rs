//! Chirp-Z transform on a unit-circle arc.
//!
//! `X[k] = sum_n x[n] z_k^-n` with `z_k = exp(j 2 pi (f_start + k df) / fs)`
//! and `df = (f_end - f_start) / (M - 1)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CztMethod {
    Auto,
    Direct,
    Bluestein,
}

/// `exp(j pi r)` for a phase given in half-turns, reduced first so large
/// arguments keep their precision.
fn half_turns(r: f64) -> Complex64 {
    let r = r.rem_euclid(2.0);
    Complex64::from_polar(1.0, PI * r)
}

/// Reusable transform for fixed `(N, M, f_start, f_end, fs)`.
pub struct Czt {
    n: usize,
    m: usize,
    kind: Kind,
}

enum Kind {
    /// Row-major `M x N` kernel.
    Direct(Vec<Complex64>),
    Bluestein(Bluestein),
}

struct Bluestein {
    l: usize,
    /// `A^-n W^(n^2/2)` for `n < N`.
    pre: Vec<Complex64>,
    /// `W^(k^2/2)` for `k < M`.
    post: Vec<Complex64>,
    /// FFT of the chirp filter `W^(-m^2/2)`.
    filter: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn check_arc(n: usize, m: usize, f_start: f64, f_end: f64, fs: f64) -> Result<()> {
    if n == 0 || m < 2 {
        return Err(Error::Domain(format!("czt needs N >= 1 and M >= 2, got N={n}, M={m}")));
    }
    if !(fs > 0.0) {
        return Err(Error::Domain("czt sample rate must be positive".into()));
    }
    if !(f_start < f_end && f_start >= -fs && f_end <= fs) {
        return Err(Error::Domain(format!(
            "arc [{f_start}, {f_end}] Hz must be increasing and within [-{fs}, {fs}]"
        )));
    }
    Ok(())
}

impl Czt {
    pub fn new(n: usize, m: usize, f_start: f64, f_end: f64, fs: f64, method: CztMethod) -> Result<Self> {
        check_arc(n, m, f_start, f_end, fs)?;
        // Frequencies in turns per sample.
        let a = f_start / fs;
        let w = (f_end - f_start) / fs / (m - 1) as f64;
        let l = (n + m - 1).next_power_of_two();
        let direct = match method {
            CztMethod::Direct => true,
            CztMethod::Bluestein => false,
            CztMethod::Auto => {
                let fft_cost = 2 * l * (l.trailing_zeros() as usize).max(1) * 2;
                n * m <= fft_cost && n * m <= 1 << 22
            }
        };
        let kind = if direct {
            let mut kernel = Vec::with_capacity(n * m);
            for k in 0..m {
                let fk = a + k as f64 * w;
                for i in 0..n {
                    kernel.push(half_turns(-2.0 * ((i as f64 * fk).fract())));
                }
            }
            Kind::Direct(kernel)
        } else {
            // Half-turn phase of W^(x^2/2) is -w x^2.
            let chirp = |x: f64| half_turns(-w * x * x);
            let pre = (0..n)
                .map(|i| half_turns(-2.0 * (a * i as f64).fract()) * chirp(i as f64))
                .collect();
            let post = (0..m).map(|k| chirp(k as f64)).collect();
            let mut filter = vec![Complex64::new(0.0, 0.0); l];
            for k in 0..m {
                filter[k] = chirp(k as f64).conj();
            }
            for i in 1..n {
                filter[l - i] = chirp(i as f64).conj();
            }
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(l);
            let inv = planner.plan_fft_inverse(l);
            fwd.process(&mut filter);
            Kind::Bluestein(Bluestein {
                l,
                pre,
                post,
                filter,
                fwd,
                inv,
            })
        };
        Ok(Self { n, m, kind })
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        self.m
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.kind, Kind::Direct(_))
    }

    pub fn process(&self, block: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.m];
        self.process_into(block, &mut out)?;
        Ok(out)
    }

    pub fn process_into(&self, block: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        if block.len() != self.n || out.len() != self.m {
            return Err(Error::Dimension(format!(
                "czt planned for {} -> {}, got {} -> {}",
                self.n,
                self.m,
                block.len(),
                out.len()
            )));
        }
        match &self.kind {
            Kind::Direct(kernel) => {
                for (k, o) in out.iter_mut().enumerate() {
                    let row = &kernel[k * self.n..(k + 1) * self.n];
                    *o = row.iter().zip(block).map(|(c, x)| c * x).sum();
                }
            }
            Kind::Bluestein(b) => {
                let mut buf = vec![Complex64::new(0.0, 0.0); b.l];
                for (dst, (x, p)) in buf.iter_mut().zip(block.iter().zip(&b.pre)) {
                    *dst = x * p;
                }
                b.fwd.process(&mut buf);
                for (v, h) in buf.iter_mut().zip(&b.filter) {
                    *v *= h;
                }
                b.inv.process(&mut buf);
                let scale = 1.0 / b.l as f64;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = buf[k] * b.post[k] * scale;
                }
            }
        }
        Ok(())
    }
}

/// One-shot CZT; picks direct evaluation when it is cheaper.
pub fn czt(block: &[Complex64], m: usize, f_start: f64, f_end: f64, sample_rate: f64) -> Result<Vec<Complex64>> {
    Czt::new(block.len(), m, f_start, f_end, sample_rate, CztMethod::Auto)?.process(block)
}

/// Direct `O(N M)` evaluation without any phase reduction tricks.
pub fn czt_reference(block: &[Complex64], m: usize, f_start: f64, f_end: f64, sample_rate: f64) -> Result<Vec<Complex64>> {
    check_arc(block.len(), m, f_start, f_end, sample_rate)?;
    let df = (f_end - f_start) / (m - 1) as f64;
    Ok((0..m)
        .map(|k| {
            let f = f_start + k as f64 * df;
            block
                .iter()
                .enumerate()
                .map(|(i, x)| x * Complex64::from_polar(1.0, -2.0 * PI * f * i as f64 / sample_rate))
                .sum()
        })
        .collect())
}
