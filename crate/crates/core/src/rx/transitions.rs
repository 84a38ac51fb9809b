//! Fall-onset detection on magnitude traces.

/// Local maxima of `x` with value `>= height`. A flat-topped peak is
/// reported at the middle of its plateau. End points are never peaks.
pub fn find_peaks(x: &[f64], height: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] && x[i] >= height {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Backward difference `d[i] = x[i] - x[i-1]`, with `d[0] = 0`.
pub fn derivative(trace: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; trace.len()];
    for i in 1..trace.len() {
        d[i] = trace[i] - trace[i - 1];
    }
    d
}

/// Start indices of the steep falls in `trace`.
///
/// Peaks of the negated derivative at or above `peak_height` mark the
/// steepest part of each fall. From each one the search steps back while
/// the negated derivative is still at or above `gradient_threshold`, and the
/// index where it stops is the last sample before the fall began.
pub fn find_decrease_points(trace: &[f64], peak_height: f64, gradient_threshold: f64) -> Vec<usize> {
    if trace.len() < 3 {
        return Vec::new();
    }
    let neg: Vec<f64> = derivative(trace).iter().map(|d| -d).collect();
    let mut out: Vec<usize> = find_peaks(&neg, peak_height)
        .into_iter()
        .filter(|&p| neg[p] > 0.0)
        .map(|p| {
            let mut s = p - 1;
            while s > 0 && neg[s] >= gradient_threshold {
                s -= 1;
            }
            s
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_fall() {
        let t = [1.0, 1.0, 1.0, 1.0, 0.7, 0.3, 0.0, 0.0, 0.0];
        assert_eq!(find_decrease_points(&t, 0.35, 0.05), vec![3]);
    }

    #[test]
    fn rising_trace_has_no_falls() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(find_decrease_points(&t, 0.0, 0.0).is_empty());
    }

    #[test]
    fn double_staircase() {
        let t = [2.0, 2.0, 2.0, 1.5, 1.0, 1.0, 1.0, 1.0, 0.5, 0.0, 0.0];
        assert_eq!(find_decrease_points(&t, 0.3, 0.05), vec![2, 7]);
    }

    #[test]
    fn plateau_peak_is_centered() {
        assert_eq!(find_peaks(&[0.0, 1.0, 1.0, 1.0, 0.0], 0.5), vec![2]);
        assert_eq!(find_peaks(&[0.0, 1.0, 1.0, 0.0], 0.5), vec![1]);
        assert!(find_peaks(&[0.0, 1.0, 1.0], 0.5).is_empty());
    }
}
