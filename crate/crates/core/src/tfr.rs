//! Short-time Fourier transform with a Gaussian window, the reassignment
//! rule, and the synchrosqueezing transform (SST) on a uniform frequency
//! grid.
//!
//! Every sample of the input is a frame. The STFT at frame `l` and frequency
//! `xi` is the Riemann sum
//! `V(l, xi) = sum_k f[l + k] h(k / fs) exp(-i 2 pi xi k / fs) / fs`
//! over the truncated window support, with zeros outside the signal.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::TimeSeries;

/// Uniform frequency axis `f_min + m * df`, `m < bins`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyGrid {
    f_min: f64,
    df: f64,
    bins: usize,
}

impl FrequencyGrid {
    /// Grid covering `[f_min, f_max]` with `floor((f_max - f_min) / df) + 1`
    /// bins.
    pub fn new(f_min: f64, f_max: f64, df: f64) -> Result<Self> {
        if !(f_min >= 0.0) || !f_min.is_finite() {
            return Err(Error::invalid("f_min", "must be finite and >= 0"));
        }
        if !(df > 0.0) || !df.is_finite() {
            return Err(Error::invalid("df", "must be positive"));
        }
        if !(f_max > f_min) || !f_max.is_finite() {
            return Err(Error::invalid("f_max", "must exceed f_min"));
        }
        // the epsilon absorbs representation error in e.g. 2.0 / 1e-3
        let bins = libm::floor((f_max - f_min) / df + 1e-9) as usize + 1;
        Ok(FrequencyGrid { f_min, df, bins })
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Frequency of the last bin.
    pub fn f_max(&self) -> f64 {
        self.freq(self.bins - 1)
    }

    #[inline]
    pub fn freq(&self, m: usize) -> f64 {
        self.f_min + m as f64 * self.df
    }

    /// Bin whose cell `[freq - df/2, freq + df/2)` contains `f`.
    #[inline]
    pub fn nearest_bin(&self, f: f64) -> Option<usize> {
        let q = libm::floor((f - self.f_min) / self.df + 0.5);
        if q >= 0.0 && q < self.bins as f64 {
            Some(q as usize)
        } else {
            None
        }
    }

    /// Bins with frequency in `[lo, hi]`, as a half-open index range.
    pub fn bins_within(&self, lo: f64, hi: f64) -> core::ops::Range<usize> {
        let tol = 1e-9 * self.df;
        let first = libm::ceil((lo - self.f_min - tol) / self.df).max(0.0) as usize;
        let last = libm::floor((hi - self.f_min + tol) / self.df);
        if last < 0.0 {
            return 0..0;
        }
        let end = (last as usize + 1).min(self.bins);
        first.min(end)..end
    }
}

/// Gaussian window `h(t) = exp(-t^2 / scale)`, truncated at `|t| <=
/// half_support` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowSpec {
    pub scale: f64,
    pub half_support: f64,
}

impl WindowSpec {
    /// Truncates at six standard deviations, `6 * sqrt(scale / 2)`.
    pub fn gaussian(scale: f64) -> Self {
        WindowSpec {
            scale,
            half_support: 6.0 * libm::sqrt(scale / 2.0),
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        libm::exp(-t * t / self.scale)
    }

    /// Closed-form derivative `-2t/scale * h(t)`.
    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        -2.0 * t / self.scale * self.value(t)
    }

    /// Continuous Fourier transform `sqrt(pi s) exp(-pi^2 s w^2)` of the
    /// untruncated window.
    pub fn fourier(&self, w: f64) -> f64 {
        libm::sqrt(PI * self.scale) * libm::exp(-PI * PI * self.scale * w * w)
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::gaussian(32.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfrKind {
    Stft,
    Sst,
}

/// Complex time-frequency representation, frames x bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Tfr {
    values: Matrix<Complex64>,
    grid: FrequencyGrid,
    t0: f64,
    fs: f64,
    kind: TfrKind,
}

impl Tfr {
    pub fn from_parts(
        values: Matrix<Complex64>,
        grid: FrequencyGrid,
        t0: f64,
        fs: f64,
        kind: TfrKind,
    ) -> Result<Self> {
        if values.cols() != grid.bins() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} columns for a {}-bin grid",
                values.cols(),
                grid.bins()
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::invalid("fs", "must be positive"));
        }
        if let Some(i) = values
            .as_slice()
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Tfr {
            values,
            grid,
            t0,
            fs,
            kind,
        })
    }

    pub fn values(&self) -> &Matrix<Complex64> {
        &self.values
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn kind(&self) -> TfrKind {
        self.kind
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    /// Frame rate; frame `l` is centred at `t0 + l / fs`.
    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn frame_time(&self, l: usize) -> f64 {
        self.t0 + l as f64 / self.fs
    }

    pub fn row(&self, l: usize) -> &[Complex64] {
        self.values.row(l)
    }

    pub fn magnitude(&self) -> Matrix<f64> {
        self.values.map(|v| v.norm())
    }
}

/// Threshold `upsilon` below which STFT coefficients are not reassigned.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of the largest `|V_h|` over the whole recording.
    Relative(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(1e-8)
    }
}

/// Frame-by-frame evaluation of the window and derivative-window STFTs.
pub struct StftEngine<'a> {
    x: &'a [f64],
    taps_h: Vec<f64>,
    taps_dh: Vec<f64>,
    half: usize,
    grid: FrequencyGrid,
    backend: Backend,
}

enum Backend {
    #[cfg(feature = "std")]
    Fft {
        fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
        first_bin: usize,
        buf: Vec<Complex64>,
        scratch: Vec<Complex64>,
    },
    Direct {
        // e^{-i 2 pi xi_m / fs} per bin
        steps: Vec<Complex64>,
    },
}

impl<'a> StftEngine<'a> {
    pub fn new(ts: &'a TimeSeries, window: &WindowSpec, grid: &FrequencyGrid) -> Result<Self> {
        validate(ts, window, grid)?;
        let fs = ts.fs();
        let half = libm::floor(window.half_support * fs + 1e-9) as usize;
        let dt = 1.0 / fs;
        let taps_h = (0..=2 * half)
            .map(|k| window.value((k as f64 - half as f64) * dt) * dt)
            .collect();
        let taps_dh = (0..=2 * half)
            .map(|k| window.derivative((k as f64 - half as f64) * dt) * dt)
            .collect();
        let backend = Backend::choose(fs, grid);
        Ok(StftEngine {
            x: ts.samples(),
            taps_h,
            taps_dh,
            half,
            grid: *grid,
            backend,
        })
    }

    pub fn frames(&self) -> usize {
        self.x.len()
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Writes `V_h(l, .)` and `V_Dh(l, .)` into the two output rows.
    pub fn frame(&mut self, l: usize, vh: &mut [Complex64], vdh: &mut [Complex64]) {
        let bins = self.grid.bins();
        assert!(vh.len() == bins && vdh.len() == bins);
        let n = self.x.len() as isize;
        let half = self.half as isize;
        let lo = (l as isize - half).max(0);
        let hi = (l as isize + half).min(n - 1);
        match &mut self.backend {
            #[cfg(feature = "std")]
            Backend::Fft {
                fft,
                first_bin,
                buf,
                scratch,
            } => {
                let n_fft = buf.len();
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for idx in lo..=hi {
                    let k = idx - l as isize;
                    let tap = (k + half) as usize;
                    let v = self.x[idx as usize];
                    // real and imaginary parts carry the two real windowed
                    // segments through a single complex FFT
                    let slot = k.rem_euclid(n_fft as isize) as usize;
                    buf[slot] += Complex64::new(v * self.taps_h[tap], v * self.taps_dh[tap]);
                }
                fft.process_with_scratch(buf, scratch);
                for m in 0..bins {
                    let j = *first_bin + m;
                    let z = buf[j];
                    let zc = buf[(n_fft - j) % n_fft].conj();
                    vh[m] = (z + zc) * 0.5;
                    let d = (z - zc) * 0.5;
                    vdh[m] = Complex64::new(d.im, -d.re);
                }
            }
            Backend::Direct { steps } => {
                for m in 0..bins {
                    let step = steps[m];
                    let mut rot = pow_c(step, lo - l as isize);
                    let (mut acc_h, mut acc_dh) =
                        (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                    for idx in lo..=hi {
                        let tap = (idx - l as isize + half) as usize;
                        let v = self.x[idx as usize];
                        acc_h += rot * (v * self.taps_h[tap]);
                        acc_dh += rot * (v * self.taps_dh[tap]);
                        rot *= step;
                    }
                    vh[m] = acc_h;
                    vdh[m] = acc_dh;
                }
            }
        }
    }

    /// Largest `|V_h|` over all frames and bins.
    pub fn max_magnitude(&mut self) -> f64 {
        let bins = self.grid.bins();
        let mut vh = vec![Complex64::new(0.0, 0.0); bins];
        let mut vdh = vh.clone();
        let mut best = 0.0f64;
        for l in 0..self.frames() {
            self.frame(l, &mut vh, &mut vdh);
            for v in &vh {
                best = best.max(v.norm());
            }
        }
        best
    }
}

impl Backend {
    fn choose(fs: f64, grid: &FrequencyGrid) -> Self {
        #[cfg(feature = "std")]
        {
            // the FFT path needs the grid to land on FFT bins exactly
            let n_ratio = fs / grid.df();
            let n_fft = libm::round(n_ratio);
            let first = grid.f_min() / grid.df();
            let first_bin = libm::round(first);
            if (n_ratio - n_fft).abs() <= 1e-9 * n_ratio
                && (first - first_bin).abs() <= 1e-9 * first.max(1.0)
                && n_fft >= 2.0
            {
                let n_fft = n_fft as usize;
                let fft = rustfft::FftPlanner::new().plan_fft_forward(n_fft);
                let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                return Backend::Fft {
                    fft,
                    first_bin: first_bin as usize,
                    buf: vec![Complex64::new(0.0, 0.0); n_fft],
                    scratch,
                };
            }
        }
        Backend::Direct {
            steps: (0..grid.bins())
                .map(|m| {
                    let w = -2.0 * PI * grid.freq(m) / fs;
                    Complex64::new(libm::cos(w), libm::sin(w))
                })
                .collect(),
        }
    }
}

fn pow_c(z: Complex64, k: isize) -> Complex64 {
    // unit-modulus rotation, so the conjugate is the inverse
    let base = if k < 0 { z.conj() } else { z };
    let mut e = k.unsigned_abs();
    let (mut acc, mut b) = (Complex64::new(1.0, 0.0), base);
    while e > 0 {
        if e & 1 == 1 {
            acc *= b;
        }
        b *= b;
        e >>= 1;
    }
    acc
}

fn validate(ts: &TimeSeries, window: &WindowSpec, grid: &FrequencyGrid) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::Empty);
    }
    if !(window.scale > 0.0) || !(window.half_support > 0.0) {
        return Err(Error::invalid(
            "window",
            "scale and half_support must be positive",
        ));
    }
    if window.half_support >= ts.duration() {
        return Err(Error::invalid(
            "window",
            alloc::format!(
                "half support {} s is not shorter than the {} s signal",
                window.half_support,
                ts.duration()
            ),
        ));
    }
    let nyquist = ts.fs() / 2.0;
    if grid.f_max() > nyquist * (1.0 + 1e-12) {
        return Err(Error::AboveNyquist {
            freq_hz: grid.f_max(),
            nyquist_hz: nyquist,
        });
    }
    Ok(())
}

/// STFT with window `h`.
pub fn stft(ts: &TimeSeries, window: &WindowSpec, grid: &FrequencyGrid) -> Result<Tfr> {
    Ok(stft_pair(ts, window, grid)?.0)
}

/// STFTs with window `h` and with its derivative `Dh`.
pub fn stft_pair(ts: &TimeSeries, window: &WindowSpec, grid: &FrequencyGrid) -> Result<(Tfr, Tfr)> {
    let mut engine = StftEngine::new(ts, window, grid)?;
    let (frames, bins) = (engine.frames(), grid.bins());
    let mut vh = Matrix::zeros(frames, bins);
    let mut vdh = Matrix::zeros(frames, bins);
    for l in 0..frames {
        engine.frame(l, vh.row_mut(l), vdh.row_mut(l));
    }
    let wrap = |values| Tfr {
        values,
        grid: *grid,
        t0: ts.t0(),
        fs: ts.fs(),
        kind: TfrKind::Stft,
    };
    Ok((wrap(vh), wrap(vdh)))
}

/// Instantaneous-frequency estimate `xi - Im(V_Dh / (2 pi V_h))` for every
/// coefficient with `|V_h| > upsilon`, `-inf` (discard) elsewhere.
pub fn reassignment_map(vh: &Tfr, vdh: &Tfr, upsilon: f64) -> Result<Matrix<f64>> {
    if vh.grid != vdh.grid || vh.frames() != vdh.frames() {
        return Err(Error::DimensionMismatch(
            "STFT pair grids or frames differ".into(),
        ));
    }
    if !(upsilon > 0.0) {
        return Err(Error::invalid("upsilon", "must be positive"));
    }
    let grid = vh.grid;
    Ok(Matrix::from_fn(vh.frames(), grid.bins(), |l, m| {
        reassign(vh.values[(l, m)], vdh.values[(l, m)], grid.freq(m), upsilon)
    }))
}

#[inline]
fn reassign(vh: Complex64, vdh: Complex64, xi: f64, upsilon: f64) -> f64 {
    let power = vh.norm_sqr();
    if !(libm::sqrt(power) > upsilon) {
        return f64::NEG_INFINITY;
    }
    let im_ratio = (vdh * vh.conj()).im / power;
    xi - im_ratio / (2.0 * PI)
}

/// Moves each retained coefficient of one frame to the bin nearest its
/// reassigned frequency. Coefficients landing off the grid are dropped.
pub(crate) fn squeeze_frame(
    vh: &[Complex64],
    vdh: &[Complex64],
    grid: &FrequencyGrid,
    upsilon: f64,
    out: &mut [Complex64],
) {
    out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    for m in 0..grid.bins() {
        let omega = reassign(vh[m], vdh[m], grid.freq(m), upsilon);
        if !omega.is_finite() {
            continue;
        }
        if let Some(q) = grid.nearest_bin(omega) {
            out[q] += vh[m];
        }
    }
}

/// Resolves a threshold against the recording (one extra STFT pass for
/// [`Threshold::Relative`]).
pub fn resolve_threshold(engine: &mut StftEngine<'_>, threshold: Threshold) -> Result<f64> {
    let upsilon = match threshold {
        Threshold::Absolute(u) => u,
        Threshold::Relative(r) => {
            if !(r > 0.0) {
                return Err(Error::invalid(
                    "threshold",
                    "relative threshold must be positive",
                ));
            }
            let peak = engine.max_magnitude();
            if peak > 0.0 {
                r * peak
            } else {
                // all-zero input: any positive threshold discards everything
                f64::MIN_POSITIVE
            }
        }
    };
    if !(upsilon > 0.0) || !upsilon.is_finite() {
        return Err(Error::invalid("threshold", "must be positive and finite"));
    }
    Ok(upsilon)
}

/// Streams SST frames to `visit` without materializing the full matrix.
/// Returns the absolute threshold that was applied.
pub fn for_each_sst_frame(
    ts: &TimeSeries,
    window: &WindowSpec,
    grid: &FrequencyGrid,
    threshold: Threshold,
    mut visit: impl FnMut(usize, &[Complex64]),
) -> Result<f64> {
    let mut engine = StftEngine::new(ts, window, grid)?;
    let upsilon = resolve_threshold(&mut engine, threshold)?;
    let bins = grid.bins();
    let zero = Complex64::new(0.0, 0.0);
    let (mut vh, mut vdh, mut row) = (vec![zero; bins], vec![zero; bins], vec![zero; bins]);
    for l in 0..engine.frames() {
        engine.frame(l, &mut vh, &mut vdh);
        squeeze_frame(&vh, &vdh, grid, upsilon, &mut row);
        visit(l, &row);
    }
    Ok(upsilon)
}

/// Synchrosqueezed STFT.
pub fn sst(
    ts: &TimeSeries,
    window: &WindowSpec,
    grid: &FrequencyGrid,
    threshold: Threshold,
) -> Result<Tfr> {
    let mut values = Matrix::zeros(ts.len(), grid.bins());
    for_each_sst_frame(ts, window, grid, threshold, |l, row| {
        values.row_mut(l).copy_from_slice(row);
    })?;
    Ok(Tfr {
        values,
        grid: *grid,
        t0: ts.t0(),
        fs: ts.fs(),
        kind: TfrKind::Sst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_bin_count_and_lookup() {
        let g = FrequencyGrid::new(0.0, 2.0, 1e-3).unwrap();
        assert_eq!(g.bins(), 2001);
        assert!((g.f_max() - 2.0).abs() < 1e-12);
        assert_eq!(g.nearest_bin(0.3004), Some(300));
        assert_eq!(g.nearest_bin(0.3006), Some(301));
        assert_eq!(g.nearest_bin(-0.01), None);
        assert_eq!(g.nearest_bin(2.1), None);
        assert_eq!(g.bins_within(0.1, 0.5), 100..501);
        assert!(FrequencyGrid::new(0.5, 0.5, 0.1).is_err());
        assert!(FrequencyGrid::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn window_shape() {
        let w = WindowSpec::default();
        assert_eq!(w.value(0.0), 1.0);
        assert_eq!(w.value(1.7), w.value(-1.7));
        assert!((w.half_support - 24.0).abs() < 1e-12);
        let h = 1e-6;
        let fd = (w.value(2.0 + h) - w.value(2.0 - h)) / (2.0 * h);
        assert!((fd - w.derivative(2.0)).abs() < 1e-8);
    }

    #[test]
    fn rejects_grid_above_nyquist_and_wide_window() {
        let ts = TimeSeries::new(vec![0.0; 600], 10.0, 0.0).unwrap();
        let w = WindowSpec::default();
        let g = FrequencyGrid::new(0.0, 6.0, 0.01).unwrap();
        assert!(matches!(stft(&ts, &w, &g), Err(Error::AboveNyquist { .. })));
        let short = TimeSeries::new(vec![0.0; 200], 10.0, 0.0).unwrap();
        let g = FrequencyGrid::new(0.0, 2.0, 0.01).unwrap();
        assert!(stft(&short, &w, &g).is_err());
    }

    #[test]
    fn fft_and_direct_backends_agree() {
        let ts = TimeSeries::from_fn(700, 10.0, 0.0, |t| {
            libm::cos(2.0 * PI * 0.31 * t) + 0.2 * libm::sin(1.7 * t * t / 30.0)
        })
        .unwrap();
        let w = WindowSpec::default();
        let grid = FrequencyGrid::new(0.0, 1.0, 0.01).unwrap();
        let mut a = StftEngine::new(&ts, &w, &grid).unwrap();
        let mut b = StftEngine::new(&ts, &w, &grid).unwrap();
        b.backend = Backend::Direct {
            steps: (0..grid.bins())
                .map(|m| {
                    let w = -2.0 * PI * grid.freq(m) / 10.0;
                    Complex64::new(libm::cos(w), libm::sin(w))
                })
                .collect(),
        };
        let bins = grid.bins();
        let z = Complex64::new(0.0, 0.0);
        let (mut ah, mut adh, mut bh, mut bdh) =
            (vec![z; bins], vec![z; bins], vec![z; bins], vec![z; bins]);
        for l in [0, 5, 350, 699] {
            a.frame(l, &mut ah, &mut adh);
            b.frame(l, &mut bh, &mut bdh);
            for m in 0..bins {
                assert!((ah[m] - bh[m]).norm() < 1e-9, "h l={l} m={m}");
                assert!((adh[m] - bdh[m]).norm() < 1e-9, "dh l={l} m={m}");
            }
        }
    }
}
