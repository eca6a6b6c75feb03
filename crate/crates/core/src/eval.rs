//! Accuracy and calibration metrics for flow predictions.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::signal::{differentiate, ButterworthLowpass, TimeSeries};

fn check_pair(yhat: &[f64], y: &[f64]) -> Result<()> {
    if yhat.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} observations",
            yhat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

/// `1 - ||yhat - y|| / ||y||`. Fails with [`Error::ZeroEnergy`] when `y` is
/// identically zero.
pub fn rmse_reduction(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(yhat, y)?;
    let mut err = 0.0;
    let mut energy = 0.0;
    for (p, o) in yhat.iter().zip(y) {
        err += (p - o) * (p - o);
        energy += o * o;
    }
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(1.0 - libm::sqrt(err / energy))
}

/// [`rmse_reduction`] of the low-pass filtered derivatives.
pub fn diff_rmse_reduction(
    yhat: &[f64],
    y: &[f64],
    fs: f64,
    cutoff_hz: f64,
    order: usize,
) -> Result<f64> {
    check_pair(yhat, y)?;
    let filter = ButterworthLowpass::new(cutoff_hz, order, fs)?;
    let smooth_derivative = |x: &[f64]| -> Result<Vec<f64>> {
        let d = differentiate(&TimeSeries::new(x.to_vec(), fs, 0.0)?)?;
        Ok(filter.filtfilt(d.samples()))
    };
    rmse_reduction(&smooth_derivative(yhat)?, &smooth_derivative(y)?)
}

/// Two-sided standard normal quantile: the `z` with
/// `P(|Z| <= z) = level`.
pub fn normal_interval_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(
            "level",
            format!("must be in (0, 1), got {level}"),
        ));
    }
    // P(|Z| <= z) = erf(z / sqrt 2)
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if libm::erf(mid / core::f64::consts::SQRT_2) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fraction of samples with `|y - yhat| <= z sd` for the two-sided normal
/// interval at `level`.
pub fn coverage_rate(yhat: &[f64], sd: &[f64], y: &[f64], level: f64) -> Result<f64> {
    check_pair(yhat, y)?;
    if sd.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sds vs {} observations",
            sd.len(),
            y.len()
        )));
    }
    if let Some(i) = sd.iter().position(|s| !(*s >= 0.0)) {
        return Err(Error::invalid(
            "sd",
            format!("negative or NaN at index {i}"),
        ));
    }
    let z = normal_interval_z(level)?;
    let inside = yhat
        .iter()
        .zip(sd)
        .zip(y)
        .filter(|((p, s), o)| (*o - *p).abs() <= z * **s)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `yhat[i + lag]` is paired with `y[i]`.
    pub lag: isize,
    pub yhat: Vec<f64>,
    pub y: Vec<f64>,
}

/// Shifts `yhat` by the integer lag in `[-max_lag, max_lag]` samples that
/// maximizes the Pearson correlation of the overlapping parts, dropping the
/// overhang from both series. Ties go to the smaller `|lag|`, then to the
/// negative lag.
pub fn global_align(yhat: &[f64], y: &[f64], max_lag: usize) -> Result<Alignment> {
    check_pair(yhat, y)?;
    let n = y.len();
    if n < 2 * max_lag + 2 {
        return Err(Error::TooShort {
            needed: 2 * max_lag + 2,
            got: n,
        });
    }
    let mut best = (0isize, overlap_correlation(yhat, y, 0));
    for d in 1..=max_lag as isize {
        for lag in [-d, d] {
            let r = overlap_correlation(yhat, y, lag);
            // tolerance keeps exact periodic repeats from beating a shorter lag
            if r > best.1 + 1e-12 {
                best = (lag, r);
            }
        }
    }
    let lag = best.0;
    let (ph, po) = overlap(yhat, y, lag);
    Ok(Alignment {
        lag,
        yhat: ph.to_vec(),
        y: po.to_vec(),
    })
}

fn overlap<'a>(yhat: &'a [f64], y: &'a [f64], lag: isize) -> (&'a [f64], &'a [f64]) {
    let n = y.len();
    let k = lag.unsigned_abs();
    if lag >= 0 {
        (&yhat[k..], &y[..n - k])
    } else {
        (&yhat[..n - k], &y[k..])
    }
}

fn overlap_correlation(yhat: &[f64], y: &[f64], lag: isize) -> f64 {
    let (a, b) = overlap(yhat, y, lag);
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        sab += (p - ma) * (q - mb);
        saa += (p - ma) * (p - ma);
        sbb += (q - mb) * (q - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// Lower median of the finite values (`None` if there are none).
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Metric settings shared by every window of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub fs: f64,
    pub cutoff_hz: f64,
    pub order: usize,
    pub coverage_level: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            fs: 10.0,
            cutoff_hz: 1.0,
            order: 6,
            coverage_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub window: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// `None` when the observed flow has zero energy.
    pub rmse_reduction: Option<f64>,
    pub diff_rmse_reduction: Option<f64>,
    pub coverage: f64,
    pub n_samples: usize,
    /// Global lag applied before scoring, seconds.
    pub alignment_lag_s: f64,
}

/// Scores one window of aligned predictions.
pub fn window_metrics(
    window: usize,
    span: (f64, f64),
    mean: &[f64],
    sd: &[f64],
    y: &[f64],
    lag_s: f64,
    cfg: &MetricConfig,
) -> Result<WindowMetrics> {
    let missing_on_zero = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroEnergy) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(WindowMetrics {
        window,
        t_start: span.0,
        t_end: span.1,
        rmse_reduction: missing_on_zero(rmse_reduction(mean, y))?,
        diff_rmse_reduction: missing_on_zero(diff_rmse_reduction(
            mean,
            y,
            cfg.fs,
            cfg.cutoff_hz,
            cfg.order,
        ))?,
        coverage: coverage_rate(mean, sd, y, cfg.coverage_level)?,
        n_samples: y.len(),
        alignment_lag_s: lag_s,
    })
}

/// Metrics for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMetrics {
    /// Global lag applied to the predictions, samples.
    pub lag: isize,
    pub windows: Vec<WindowMetrics>,
}

/// Scores a recording window by window.
///
/// `mean` and `sd` are per-sample predictions aligned with `flow`, NaN where
/// nothing was predicted. Windows are consecutive blocks of `window_len`
/// samples; a window is scored if any of its samples was predicted. With
/// `max_lag = Some(m)` the predictions are first shifted by the lag from
/// [`global_align`] over all predicted samples.
pub fn evaluate_recording(
    mean: &[f64],
    sd: &[f64],
    flow: &[f64],
    t0: f64,
    window_len: usize,
    max_lag: Option<usize>,
    cfg: &MetricConfig,
) -> Result<RecordingMetrics> {
    let n = flow.len();
    if mean.len() != n || sd.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} means and {} sds for {n} flow samples",
            mean.len(),
            sd.len()
        )));
    }
    if window_len == 0 {
        return Err(Error::invalid("window_len", "must be positive"));
    }
    let predicted: Vec<usize> = (0..n).filter(|&i| mean[i].is_finite()).collect();
    let lag = match max_lag {
        Some(m) if !predicted.is_empty() => {
            let yhat: Vec<f64> = predicted.iter().map(|&i| mean[i]).collect();
            let y: Vec<f64> = predicted.iter().map(|&i| flow[i]).collect();
            global_align(&yhat, &y, m)?.lag
        }
        _ => 0,
    };
    let lag_s = lag as f64 / cfg.fs;
    let mut windows = Vec::new();
    for w in 0..n / window_len {
        let (start, end) = (w * window_len, (w + 1) * window_len);
        if !mean[start..end].iter().any(|v| v.is_finite()) {
            continue;
        }
        let (mut m, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for i in start..end {
            let j = i as isize + lag;
            if j < 0 || j >= n as isize || !mean[j as usize].is_finite() {
                continue;
            }
            m.push(mean[j as usize]);
            s.push(sd[j as usize]);
            y.push(flow[i]);
        }
        if y.len() < 2 {
            continue;
        }
        let span = (t0 + start as f64 / cfg.fs, t0 + end as f64 / cfg.fs);
        windows.push(window_metrics(w, span, &m, &s, &y, lag_s, cfg)?);
    }
    Ok(RecordingMetrics { lag, windows })
}
