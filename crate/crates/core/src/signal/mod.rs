//! Uniformly sampled signals and the preprocessing applied before
//! time-frequency analysis: resampling, local quadratic detrending,
//! zero-phase Butterworth low-pass filtering and differentiation.

mod butterworth;
mod detrend;
mod resample;

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use self::butterworth::{butterworth_lowpass, Biquad, ButterworthLowpass};
pub use self::detrend::detrend_local_quadratic;
pub use self::resample::resample;

/// A real signal sampled at `fs` Hz; sample `i` sits at `t0 + i / fs` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    fs: f64,
    t0: f64,
}

impl TimeSeries {
    /// Validates that every sample is finite and that `fs > 0`.
    pub fn new(samples: Vec<f64>, fs: f64, t0: f64) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid(
                "fs",
                "sampling rate must be positive and finite",
            ));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("t0", "start time must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(TimeSeries { samples, fs, t0 })
    }

    /// Sampled from `f(t)` for `t = t0 + i / fs`, `i < n`.
    pub fn from_fn(n: usize, fs: f64, t0: f64, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let samples = (0..n).map(|i| f(t0 + i as f64 / fs)).collect();
        Self::new(samples, fs, t0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    /// `len / fs` seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Same timing, new samples. Samples produced by the preprocessing
    /// operators are finite whenever the inputs are, so this skips validation.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert!(samples.iter().all(|v| v.is_finite()));
        TimeSeries {
            samples,
            fs: self.fs,
            t0: self.t0,
        }
    }

    /// Samples `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        TimeSeries {
            samples: self.samples[start..end].to_vec(),
            fs: self.fs,
            t0: self.time(start),
        }
    }
}

/// Central differences scaled by `fs`, one-sided at both ends.
pub fn differentiate(ts: &TimeSeries) -> Result<TimeSeries> {
    let x = ts.samples();
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let fs = ts.fs();
    let mut d = Vec::with_capacity(n);
    d.push((x[1] - x[0]) * fs);
    for i in 1..n - 1 {
        d.push((x[i + 1] - x[i - 1]) * 0.5 * fs);
    }
    d.push((x[n - 1] - x[n - 2]) * fs);
    Ok(ts.with_samples(d))
}
