use alloc::vec::Vec;
use core::f64::consts::PI;

use super::TimeSeries;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel kept on each side of the output sample.
const HALF_ZEROS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The kernel cutoff sits at the lower of the two Nyquist frequencies, so
/// downsampling applies the anti-alias low-pass in the same step. For a
/// rational rate ratio this is the polyphase filter evaluated one output
/// phase at a time. Samples beyond the edges are mirrored. Taps are
/// normalized per output sample, so constants pass through exactly.
pub fn resample(ts: &TimeSeries, target_fs: f64) -> Result<TimeSeries> {
    if ts.is_empty() {
        return Err(Error::Empty);
    }
    if !(target_fs > 0.0) || !target_fs.is_finite() {
        return Err(Error::invalid("target_fs", "must be positive and finite"));
    }
    let fs = ts.fs();
    if (target_fs - fs).abs() <= 1e-12 * fs {
        return Ok(ts.clone());
    }
    let ratio = target_fs / fs;
    // cutoff as a fraction of the input sampling rate's Nyquist band
    let cutoff = ratio.min(1.0);
    let half_width = HALF_ZEROS / cutoff;
    let x = ts.samples();
    let n_in = x.len() as isize;
    let n_out = libm::round(x.len() as f64 * ratio).max(1.0) as usize;
    let i0_beta = bessel_i0(KAISER_BETA);

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let pos = j as f64 / ratio;
        let lo = libm::ceil(pos - half_width) as isize;
        let hi = libm::floor(pos + half_width) as isize;
        let (mut acc, mut norm) = (0.0, 0.0);
        for i in lo..=hi {
            let d = pos - i as f64;
            let u = d / half_width;
            if u.abs() > 1.0 {
                continue;
            }
            let w = cutoff * sinc(cutoff * d) * bessel_i0(KAISER_BETA * libm::sqrt(1.0 - u * u))
                / i0_beta;
            acc += w * x[mirror(i, n_in)];
            norm += w;
        }
        out.push(acc / norm);
    }
    Ok(TimeSeries::new(out, target_fs, ts.t0()).expect("resampled samples are finite"))
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

/// Whole-sample symmetric reflection into `0..n`.
fn mirror(i: isize, n: isize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

/// Modified Bessel function of the first kind, order zero (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_reflects_without_repeating_edges() {
        let idx: Vec<usize> = (-3..8).map(|i| mirror(i, 5)).collect();
        assert_eq!(idx, [3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn i0_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) = 1.2660658777520082, I0(8.6) = 804.7766...
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-11);
    }

    #[test]
    fn constant_passes_unchanged() {
        let ts = TimeSeries::new(alloc::vec![2.5; 1000], 100.0, 3.0).unwrap();
        let r = resample(&ts, 10.0).unwrap();
        assert_eq!(r.len(), 100);
        assert_eq!(r.t0(), 3.0);
        assert!(r.samples().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_input() {
        let empty = TimeSeries::new(Vec::new(), 10.0, 0.0).unwrap();
        assert_eq!(resample(&empty, 5.0), Err(Error::Empty));
        let ts = TimeSeries::new(alloc::vec![1.0; 4], 10.0, 0.0).unwrap();
        assert!(resample(&ts, 0.0).is_err());
        assert!(resample(&ts, -1.0).is_err());
    }
}
