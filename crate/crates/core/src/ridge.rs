//! Penalized ridge extraction on SST magnitudes and band-integrated
//! reconstruction of the fundamental and its harmonics.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::TimeSeries;
use crate::tfr::{self, FrequencyGrid, StftEngine, Tfr, Threshold, WindowSpec};

/// Grid resolution at which the ridge penalty is calibrated. On a grid with
/// bin width `df` a jump of `d` bins costs `lambda * (d * df / DF_REF)^2`.
pub const PENALTY_REFERENCE_DF: f64 = 1e-4;

/// Largest per-frame ridge jump considered by the DP, in Hz.
pub const MAX_JUMP_HZ: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCurve {
    /// Per-frame bin index into the full grid (zero-based).
    pub bin_index: Vec<usize>,
    pub if_hz: Vec<f64>,
    pub lambda: f64,
    /// Value of the maximized objective.
    pub objective: f64,
}

impl RidgeCurve {
    pub fn len(&self) -> usize {
        self.bin_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_index.is_empty()
    }
}

/// One reconstructed oscillatory component `A(t) exp(i 2 pi phi(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicComponent {
    /// 1 for the fundamental.
    pub harmonic: usize,
    pub amplitude: Vec<f64>,
    pub phase_cos: Vec<f64>,
    pub phase_sin: Vec<f64>,
    pub complex_form: Vec<Complex64>,
    /// Centre frequency of the integration band, per frame.
    pub center_hz: Vec<f64>,
    /// The integration band reached past the grid on at least one frame.
    pub band_clipped: bool,
    /// The harmonic fell outside the grid on at least one frame; those
    /// frames are zero.
    pub out_of_grid: bool,
}

impl HarmonicComponent {
    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    fn with_capacity(harmonic: usize, n: usize) -> Self {
        HarmonicComponent {
            harmonic,
            amplitude: Vec::with_capacity(n),
            phase_cos: Vec::with_capacity(n),
            phase_sin: Vec::with_capacity(n),
            complex_form: Vec::with_capacity(n),
            center_hz: Vec::with_capacity(n),
            band_clipped: false,
            out_of_grid: false,
        }
    }

    fn push(&mut self, value: Complex64, center_hz: f64) {
        let a = value.norm();
        let (c, s) = if a > 0.0 {
            (value.re / a, value.im / a)
        } else {
            (1.0, 0.0)
        };
        self.amplitude.push(a);
        self.phase_cos.push(c);
        self.phase_sin.push(s);
        self.complex_form.push(value);
        self.center_hz.push(center_hz);
    }
}

/// Maximizes
/// `sum_l log(mag[l, c_l] / total) - lambda * sum_l ((c_l - c_{l-1}) df / DF_REF)^2`
/// over curves `c` restricted to the bins within `band`, where `total` is the
/// sum of the whole matrix. Zero magnitudes are unusable (`log 0 = -inf`).
/// Ties go to the lowest bin index.
pub fn extract_ridge(
    mag: &Matrix<f64>,
    grid: &FrequencyGrid,
    lambda: f64,
    band: (f64, f64),
) -> Result<RidgeCurve> {
    if mag.cols() != grid.bins() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} magnitude columns for a {}-bin grid",
            mag.cols(),
            grid.bins()
        )));
    }
    let range = band_range(grid, band)?;
    if let Some(i) = mag
        .as_slice()
        .iter()
        .position(|v| !(*v >= 0.0) || !v.is_finite())
    {
        return Err(Error::NonFinite(i));
    }
    let mut total = 0.0;
    for v in mag.as_slice() {
        total += *v;
    }
    let band_mag = Matrix::from_fn(mag.rows(), range.len(), |l, j| mag[(l, range.start + j)]);
    ridge_dp(&band_mag, total, range.start, grid, lambda)
}

fn band_range(grid: &FrequencyGrid, band: (f64, f64)) -> Result<core::ops::Range<usize>> {
    let range = grid.bins_within(band.0, band.1);
    if range.is_empty() {
        return Err(Error::EmptyBand);
    }
    Ok(range)
}

/// Dynamic program over band-restricted magnitudes. `offset` maps band
/// columns back to grid bins.
fn ridge_dp(
    band_mag: &Matrix<f64>,
    total: f64,
    offset: usize,
    grid: &FrequencyGrid,
    lambda: f64,
) -> Result<RidgeCurve> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be finite and >= 0"));
    }
    let (frames, width) = (band_mag.rows(), band_mag.cols());
    if frames == 0 {
        return Err(Error::Empty);
    }
    if !(total > 0.0) || band_mag.as_slice().iter().all(|v| *v == 0.0) {
        return Err(Error::NoRidgeMass);
    }
    let scale = grid.df() / PENALTY_REFERENCE_DF;
    let penalty = lambda * scale * scale;
    let max_jump = (libm::ceil(MAX_JUMP_HZ / grid.df() - 1e-9) as usize).max(1);

    let data_term = |l: usize, out: &mut [f64]| {
        let row = band_mag.row(l);
        // frames without any usable bin carry no information and leave the
        // curve free to move
        if row.iter().all(|v| *v == 0.0) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        for (o, &v) in out.iter_mut().zip(row) {
            *o = if v > 0.0 {
                libm::log(v / total)
            } else {
                f64::NEG_INFINITY
            };
        }
    };

    let mut score = vec![0.0; width];
    let mut next = vec![0.0; width];
    let mut data = vec![0.0; width];
    let mut back: Vec<u32> = vec![0; frames * width];
    data_term(0, &mut score);

    for l in 1..frames {
        data_term(l, &mut data);
        let best_prev = score.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for m in 0..width {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            // outward search from the same bin; stops once no farther
            // predecessor can win even with the frame's best score
            for d in 0..=max_jump {
                let cost = penalty * (d * d) as f64;
                if arg != usize::MAX && best_prev - cost < best {
                    break;
                }
                let below = m.checked_sub(d);
                let above = if d > 0 && m + d < width {
                    Some(m + d)
                } else {
                    None
                };
                if below.is_none() && above.is_none() {
                    break;
                }
                for j in [below, above].into_iter().flatten() {
                    let v = score[j] - cost;
                    if v > best || (v == best && v > f64::NEG_INFINITY && j < arg) {
                        best = v;
                        arg = j;
                    }
                }
            }
            if arg == usize::MAX {
                // every reachable predecessor is unusable
                next[m] = f64::NEG_INFINITY;
                back[l * width + m] = m as u32;
            } else {
                next[m] = best + data[m];
                back[l * width + m] = arg as u32;
            }
        }
        core::mem::swap(&mut score, &mut next);
    }

    let mut end = 0;
    for m in 1..width {
        if score[m] > score[end] {
            end = m;
        }
    }
    let objective = score[end];
    if objective == f64::NEG_INFINITY {
        return Err(Error::NoRidgeMass);
    }
    let mut path = vec![0usize; frames];
    path[frames - 1] = end;
    for l in (1..frames).rev() {
        path[l - 1] = back[l * width + path[l]] as usize;
    }
    let bin_index: Vec<usize> = path.iter().map(|j| j + offset).collect();
    let if_hz = bin_index.iter().map(|&m| grid.freq(m)).collect();
    Ok(RidgeCurve {
        bin_index,
        if_hz,
        lambda,
        objective,
    })
}

/// Band-sum of one SST frame: `(2 df / g(0)) * sum_{|xi_q - center| <= b} S[q]`
/// with `g(0) = 1` for the Gaussian window. Returns the value and whether
/// the band was clipped by the grid.
fn integrate_band(
    row: &[Complex64],
    grid: &FrequencyGrid,
    center: f64,
    b: f64,
) -> (Complex64, bool) {
    let range = grid.bins_within(center - b, center + b);
    let clipped = center - b < grid.f_min() - 1e-9 * grid.df()
        || center + b > grid.f_max() + 1e-9 * grid.df();
    let mut acc = Complex64::new(0.0, 0.0);
    for v in &row[range] {
        acc += *v;
    }
    (acc * (2.0 * grid.df()), clipped)
}

/// Reconstructs the component along `ridge` from an SST.
pub fn reconstruct_component(sst: &Tfr, ridge: &RidgeCurve, b: f64) -> Result<HarmonicComponent> {
    if !(b > 0.0) {
        return Err(Error::invalid("b", "band half-width must be positive"));
    }
    if ridge.len() != sst.frames() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "ridge has {} frames, SST has {}",
            ridge.len(),
            sst.frames()
        )));
    }
    let grid = sst.grid();
    let mut comp = HarmonicComponent::with_capacity(1, ridge.len());
    for l in 0..sst.frames() {
        let (v, clipped) = integrate_band(sst.row(l), grid, ridge.if_hz[l], b);
        comp.band_clipped |= clipped;
        comp.push(v, ridge.if_hz[l]);
    }
    Ok(comp)
}

/// Settings for [`harmonic_decompose`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeConfig {
    pub window: WindowSpec,
    pub grid: FrequencyGrid,
    pub threshold: Threshold,
    pub lambda: f64,
    /// Half-width `b` of the reconstruction band, Hz.
    pub band_halfwidth: f64,
    /// Search band for the fundamental ridge, Hz.
    pub fundamental_band: (f64, f64),
    /// Re-centre harmonic `k >= 2` on the largest SST bin within
    /// `band_halfwidth` of `k` times the fundamental.
    pub refine_harmonics: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            window: WindowSpec::default(),
            grid: FrequencyGrid::new(0.0, 2.0, 1e-3).expect("static grid"),
            threshold: Threshold::default(),
            lambda: 0.3,
            band_halfwidth: 0.05,
            fundamental_band: (0.1, 0.5),
            refine_harmonics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub ridge: RidgeCurve,
    /// Harmonics `1..=K` in order.
    pub components: Vec<HarmonicComponent>,
    /// Absolute SST threshold that was applied.
    pub upsilon: f64,
}

/// Extracts the fundamental ridge in the configured band and reconstructs
/// harmonics `1..=k_max` around multiples of it.
///
/// Works in streaming passes over STFT frames (threshold, ridge,
/// reconstruction) so the full SST matrix is never held in memory. A signal
/// with no SST mass in the fundamental band yields all-zero components.
pub fn harmonic_decompose(
    ts: &TimeSeries,
    k_max: usize,
    cfg: &DecomposeConfig,
) -> Result<Decomposition> {
    if k_max == 0 {
        return Err(Error::invalid("k", "need at least one harmonic"));
    }
    if !(cfg.band_halfwidth > 0.0) {
        return Err(Error::invalid("band_halfwidth", "must be positive"));
    }
    let grid = cfg.grid;
    let band = band_range(&grid, cfg.fundamental_band)?;
    let mut engine = StftEngine::new(ts, &cfg.window, &grid)?;
    let upsilon = tfr::resolve_threshold(&mut engine, cfg.threshold)?;
    let threshold = Threshold::Absolute(upsilon);

    let frames = ts.len();
    let mut band_mag = Matrix::zeros(frames, band.len());
    let mut total = 0.0;
    tfr::for_each_sst_frame(ts, &cfg.window, &grid, threshold, |l, row| {
        for v in row {
            total += v.norm();
        }
        for (j, v) in row[band.clone()].iter().enumerate() {
            band_mag[(l, j)] = v.norm();
        }
    })?;

    let ridge = match ridge_dp(&band_mag, total, band.start, &grid, cfg.lambda) {
        Ok(r) => r,
        Err(Error::NoRidgeMass) => return Ok(zero_decomposition(frames, k_max, cfg, upsilon)),
        Err(e) => return Err(e),
    };
    drop(band_mag);

    let b = cfg.band_halfwidth;
    let mut components: Vec<HarmonicComponent> = (1..=k_max)
        .map(|k| HarmonicComponent::with_capacity(k, frames))
        .collect();
    tfr::for_each_sst_frame(ts, &cfg.window, &grid, threshold, |l, row| {
        let f1 = ridge.if_hz[l];
        for comp in components.iter_mut() {
            let k = comp.harmonic;
            let mut center = k as f64 * f1;
            if center > grid.f_max() {
                comp.out_of_grid = true;
                comp.push(Complex64::new(0.0, 0.0), center);
                continue;
            }
            if k > 1 && cfg.refine_harmonics {
                center = refine_center(row, &grid, center, b);
            }
            let (v, clipped) = integrate_band(row, &grid, center, b);
            comp.band_clipped |= clipped;
            comp.push(v, center);
        }
    })?;

    Ok(Decomposition {
        ridge,
        components,
        upsilon,
    })
}

/// Frequency of the largest-magnitude bin within `b` of `center`; `center`
/// itself when that neighbourhood is empty.
fn refine_center(row: &[Complex64], grid: &FrequencyGrid, center: f64, b: f64) -> f64 {
    let mut best = 0.0;
    let mut arg = None;
    for q in grid.bins_within(center - b, center + b) {
        let v = row[q].norm();
        if v > best {
            best = v;
            arg = Some(q);
        }
    }
    arg.map_or(center, |q| grid.freq(q))
}

fn zero_decomposition(
    frames: usize,
    k_max: usize,
    cfg: &DecomposeConfig,
    upsilon: f64,
) -> Decomposition {
    let f_lo = cfg.grid.freq(
        cfg.grid
            .bins_within(cfg.fundamental_band.0, cfg.fundamental_band.1)
            .start,
    );
    let components = (1..=k_max)
        .map(|k| {
            let mut c = HarmonicComponent::with_capacity(k, frames);
            for _ in 0..frames {
                c.push(Complex64::new(0.0, 0.0), k as f64 * f_lo);
            }
            c
        })
        .collect();
    let bin = cfg.grid.nearest_bin(f_lo).unwrap_or(0);
    Decomposition {
        ridge: RidgeCurve {
            bin_index: vec![bin; frames],
            if_hz: vec![f_lo; frames],
            lambda: cfg.lambda,
            objective: f64::NEG_INFINITY,
        },
        components,
        upsilon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine_grid(bins: usize) -> FrequencyGrid {
        // df equal to the reference resolution: penalty is lambda * d^2
        FrequencyGrid::new(
            0.0,
            (bins - 1) as f64 * PENALTY_REFERENCE_DF,
            PENALTY_REFERENCE_DF,
        )
        .unwrap()
    }

    #[test]
    fn lambda_zero_is_framewise_argmax() {
        let mag = Matrix::from_vec(
            3,
            4,
            vec![1.0, 5.0, 2.0, 0.5, 3.0, 1.0, 1.0, 9.0, 2.0, 2.0, 1.0, 0.0],
        );
        let grid = fine_grid(4);
        let r = extract_ridge(&mag, &grid, 0.0, (0.0, 1.0)).unwrap();
        // frame 2 ties between bins 0 and 1: lowest wins
        assert_eq!(r.bin_index, vec![1, 3, 0]);
    }

    #[test]
    fn band_restricts_curve() {
        let mag = Matrix::from_vec(2, 4, vec![9.0, 1.0, 2.0, 0.5, 9.0, 1.0, 1.0, 3.0]);
        let grid = fine_grid(4);
        let band = (grid.freq(1), grid.freq(3));
        let r = extract_ridge(&mag, &grid, 0.0, band).unwrap();
        assert_eq!(r.bin_index, vec![2, 3]);
    }

    #[test]
    fn empty_band_and_zero_mass() {
        let grid = fine_grid(4);
        let mag = Matrix::filled(2, 4, 1.0);
        assert_eq!(
            extract_ridge(&mag, &grid, 0.3, (1.0, 2.0)),
            Err(Error::EmptyBand)
        );
        let zero = Matrix::filled(2, 4, 0.0);
        assert_eq!(
            extract_ridge(&zero, &grid, 0.3, (0.0, 1.0)),
            Err(Error::NoRidgeMass)
        );
    }

    #[test]
    fn zero_bins_are_avoided() {
        let mag = Matrix::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1e-9, 1.0, 0.0, 0.0]);
        let grid = fine_grid(3);
        let r = extract_ridge(&mag, &grid, 0.3, (0.0, 1.0)).unwrap();
        assert_eq!(r.bin_index, vec![0, 2, 0]);
    }

    #[test]
    fn free_frames_follow_neighbours() {
        let mag = Matrix::from_vec(3, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let grid = fine_grid(3);
        let r = extract_ridge(&mag, &grid, 0.3, (0.0, 1.0)).unwrap();
        assert_eq!(r.bin_index, vec![1, 1, 1]);
    }
}
