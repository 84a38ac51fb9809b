//! Captures built straight from per-period duty cycles, plus the
//! brute-force chain they imply.
#![allow(dead_code)]

use vdmbs::modem::{modulate, VcoModel};
use vdmbs::signal::{IqCapture, SampleSeries};
use vdmbs::tag::PwmStream;
use vdmbs::vdm::{build_codebook, sum_streams, VdmCodebook, VdmConfig};

pub const FS: f64 = 4e6;

pub fn book(n: usize) -> VdmCodebook {
    build_codebook(&VdmConfig::normalized(n, 3.3, 10e3, 1.0), &VcoModel::default()).unwrap()
}

/// `duties[k][i]`: high samples of sensor `i` in period `k`. Periods are
/// `period` samples long and start at `offset`; the samples before `offset`
/// belong to a partial period with duties of the last entry.
pub fn capture(book: &VdmCodebook, duties: &[Vec<usize>], period: usize, offset: usize) -> IqCapture {
    let n = book.n;
    let len = offset + period * duties.len();
    let mut starts = vec![0];
    starts.extend((0..duties.len()).map(|k| offset + k * period).filter(|&s| s > 0));
    let streams: Vec<PwmStream> = (0..n)
        .map(|i| {
            let mut levels = vec![0.0; len];
            let mut falls = Vec::new();
            for (j, &a) in starts.iter().enumerate() {
                let b = starts.get(j + 1).copied().unwrap_or(len);
                let k = if a < offset { duties.len() - 1 } else { (a - offset) / period };
                let d = if a < offset {
                    duties[k][i].saturating_sub(period - offset).min(b - a)
                } else {
                    duties[k][i].min(b - a)
                };
                levels[a..a + d].fill(3.3);
                falls.push(a + d);
            }
            PwmStream {
                levels: SampleSeries::new(levels, FS).unwrap(),
                v_s: 3.3,
                period_starts: starts.clone(),
                cross_indices: falls.clone(),
                fall_indices: falls,
                clipped_samples: 0,
            }
        })
        .collect();
    let v = sum_streams(&streams, book).unwrap();
    modulate(&v, &VcoModel::default(), false).unwrap()
}

/// Chain of masks the duties imply, with absolute transition times.
pub fn oracle_chain(duties: &[usize], period: usize, start: usize) -> (Vec<u32>, Vec<usize>) {
    let mut mask: u32 = duties
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0)
        .fold(0, |m, (i, _)| m | 1 << i);
    let mut masks = vec![mask];
    let mut times = Vec::new();
    let mut falls: Vec<usize> = duties.iter().copied().filter(|&d| d > 0 && d < period).collect();
    falls.sort_unstable();
    falls.dedup();
    for f in falls {
        for (i, &d) in duties.iter().enumerate() {
            if d == f {
                mask &= !(1 << i);
            }
        }
        masks.push(mask);
        times.push(start + f);
    }
    (masks, times)
}
