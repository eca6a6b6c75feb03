//! Synthetic signals with known ground truth: oscillations with time-varying
//! amplitude, frequency and wave shape, GP draws, and coupled
//! movement/airflow recordings.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::gp::{cov_matrix, KernelSpec};
use crate::linalg::Cholesky;
use crate::matrix::Matrix;
use crate::signal::TimeSeries;

/// Fundamental phase `phi(t)` in cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrequencyTrajectory {
    /// `phi(t) = f t`.
    Constant(f64),
    /// Instantaneous frequency moving linearly from `start_hz` at `t = 0` to
    /// `end_hz` at `t = over_s`.
    Linear {
        start_hz: f64,
        end_hz: f64,
        over_s: f64,
    },
    /// `phi(t) = center_hz t + deviation sin(2 pi rate_hz t + offset)`.
    Sinusoidal {
        center_hz: f64,
        deviation: f64,
        rate_hz: f64,
        offset: f64,
    },
}

impl FrequencyTrajectory {
    pub fn phase(&self, t: f64) -> f64 {
        match *self {
            FrequencyTrajectory::Constant(f) => f * t,
            FrequencyTrajectory::Linear {
                start_hz,
                end_hz,
                over_s,
            } => start_hz * t + 0.5 * (end_hz - start_hz) * t * t / over_s,
            FrequencyTrajectory::Sinusoidal {
                center_hz,
                deviation,
                rate_hz,
                offset,
            } => center_hz * t + deviation * libm::sin(2.0 * PI * rate_hz * t + offset),
        }
    }

    /// `phi'(t)` in Hz.
    pub fn frequency(&self, t: f64) -> f64 {
        match *self {
            FrequencyTrajectory::Constant(f) => f,
            FrequencyTrajectory::Linear {
                start_hz,
                end_hz,
                over_s,
            } => start_hz + (end_hz - start_hz) * t / over_s,
            FrequencyTrajectory::Sinusoidal {
                center_hz,
                deviation,
                rate_hz,
                offset,
            } => {
                center_hz
                    + 2.0 * PI * rate_hz * deviation * libm::cos(2.0 * PI * rate_hz * t + offset)
            }
        }
    }

    /// `phi''(t)`.
    pub fn chirp_rate(&self, t: f64) -> f64 {
        match *self {
            FrequencyTrajectory::Constant(_) => 0.0,
            FrequencyTrajectory::Linear {
                start_hz,
                end_hz,
                over_s,
            } => (end_hz - start_hz) / over_s,
            FrequencyTrajectory::Sinusoidal {
                deviation,
                rate_hz,
                offset,
                ..
            } => {
                let w = 2.0 * PI * rate_hz;
                -w * w * deviation * libm::sin(w * t + offset)
            }
        }
    }
}

/// Shared amplitude modulation `1 + depth sin(2 pi rate_hz t + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmplitudeModulation {
    pub depth: f64,
    pub rate_hz: f64,
    pub offset: f64,
}

impl AmplitudeModulation {
    pub fn factor(&self, t: f64) -> f64 {
        1.0 + self.depth * libm::sin(2.0 * PI * self.rate_hz * t + self.offset)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.rate_hz;
        self.depth * w * libm::cos(w * t + self.offset)
    }
}

/// Harmonic `k` is `amplitude_k m(t) cos(2 pi k phi(t) + offset_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnhmSpec {
    pub amplitudes: Vec<f64>,
    /// Radians; empty means all zero.
    pub phase_offsets: Vec<f64>,
    pub modulation: AmplitudeModulation,
    pub frequency: FrequencyTrajectory,
    /// Standard deviation of additive white Gaussian noise.
    pub noise_sd: f64,
    pub seed: u64,
    /// Bound on `|phi''| / min phi'` and `|a_k'| / min phi'`.
    pub epsilon: f64,
}

impl AnhmSpec {
    /// Unmodulated, noiseless cosine series with the given amplitudes.
    pub fn new(amplitudes: Vec<f64>, frequency: FrequencyTrajectory) -> Self {
        AnhmSpec {
            amplitudes,
            phase_offsets: Vec::new(),
            modulation: AmplitudeModulation::default(),
            frequency,
            noise_sd: 0.0,
            seed: 0,
            epsilon: 0.05,
        }
    }

    fn offset(&self, k: usize) -> f64 {
        self.phase_offsets.get(k).copied().unwrap_or(0.0)
    }
}

/// Ground truth for one harmonic, per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicTruth {
    pub harmonic: usize,
    pub amplitude: Vec<f64>,
    /// `k phi(t) + offset_k / (2 pi)`, in cycles.
    pub phase: Vec<f64>,
}

impl HarmonicTruth {
    pub fn value(&self, i: usize) -> f64 {
        self.amplitude[i] * libm::cos(2.0 * PI * self.phase[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnhmSignal {
    pub signal: TimeSeries,
    pub harmonics: Vec<HarmonicTruth>,
    /// `phi'(t)` per sample.
    pub fundamental_hz: Vec<f64>,
}

impl AnhmSignal {
    /// Noiseless sum of the first `count` harmonics.
    pub fn partial_sum(&self, count: usize) -> Vec<f64> {
        let n = self.signal.len();
        (0..n)
            .map(|i| self.harmonics.iter().take(count).map(|h| h.value(i)).sum())
            .collect()
    }
}

/// Samples `sum_k a_k(t) cos(2 pi phi_k(t)) + noise` at `fs` for `duration`
/// seconds starting at `t = 0`.
pub fn gen_anhm(spec: &AnhmSpec, fs: f64, duration: f64) -> Result<AnhmSignal> {
    if spec.amplitudes.is_empty() {
        return Err(Error::invalid("amplitudes", "need at least one harmonic"));
    }
    if spec.amplitudes.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::invalid("amplitudes", "must be >= 0"));
    }
    if !(spec.noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd", "must be >= 0"));
    }
    if !(spec.modulation.depth.abs() < 1.0) {
        return Err(Error::invalid("modulation", "depth must be below 1"));
    }
    if !(fs > 0.0) || !(duration > 0.0) {
        return Err(Error::invalid(
            "duration",
            "fs and duration must be positive",
        ));
    }
    let n = libm::round(duration * fs) as usize;
    let times: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();

    let mut min_rate = f64::INFINITY;
    let mut max_chirp = 0.0f64;
    let mut max_am_slope = 0.0f64;
    for &t in &times {
        min_rate = min_rate.min(spec.frequency.frequency(t));
        max_chirp = max_chirp.max(spec.frequency.chirp_rate(t).abs());
        max_am_slope = max_am_slope.max(spec.modulation.derivative(t).abs());
    }
    if !(min_rate > 0.0) {
        return Err(Error::invalid(
            "frequency",
            format!("phase must increase; min rate {min_rate} Hz"),
        ));
    }
    let peak = spec.amplitudes.iter().copied().fold(0.0, f64::max);
    let regularity = (max_chirp / min_rate).max(peak * max_am_slope / min_rate);
    if regularity > spec.epsilon {
        return Err(Error::invalid(
            "epsilon",
            format!(
                "trajectory varies too fast: {regularity:.3e} exceeds {}",
                spec.epsilon
            ),
        ));
    }

    let harmonics: Vec<HarmonicTruth> = spec
        .amplitudes
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let k = j + 1;
            let offset = spec.offset(j) / (2.0 * PI);
            HarmonicTruth {
                harmonic: k,
                amplitude: times
                    .iter()
                    .map(|&t| a * spec.modulation.factor(t))
                    .collect(),
                phase: times
                    .iter()
                    .map(|&t| k as f64 * spec.frequency.phase(t) + offset)
                    .collect(),
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = (0..n)
        .map(|i| {
            let clean: f64 = harmonics.iter().map(|h| h.value(i)).sum();
            if spec.noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                clean + spec.noise_sd * z
            } else {
                clean
            }
        })
        .collect();
    Ok(AnhmSignal {
        signal: TimeSeries::new(samples, fs, 0.0)?,
        harmonics,
        fundamental_hz: times.iter().map(|&t| spec.frequency.frequency(t)).collect(),
    })
}

/// Draws `y = mu + L z` with `L L^T = Sigma + tau2 I` and `z` standard
/// normal from a ChaCha stream seeded with `seed`.
pub fn sample_gp(
    x: &Matrix<f64>,
    kernel: &KernelSpec,
    mu: f64,
    tau2: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(tau2 >= 0.0) {
        return Err(Error::invalid("tau2", "must be >= 0"));
    }
    let mut cov = cov_matrix(x, kernel)?;
    for i in 0..cov.rows() {
        cov[(i, i)] += tau2;
    }
    let chol = Cholesky::with_ladder(&cov, kernel.sigma2 + tau2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..x.rows())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Ok(chol.mul_lower(&z).into_iter().map(|v| mu + v).collect())
}

/// Settings for [`gen_coupled_subject`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConfig {
    pub fs: f64,
    pub duration_s: f64,
    /// Standard deviation of noise added to the movement channels.
    pub movement_noise_sd: f64,
    /// Standard deviation of noise added to the flow.
    pub flow_noise_sd: f64,
    /// Saturation strength of the flow nonlinearity.
    pub saturation: f64,
    /// Weights of the ABD and THO contributions to the flow drive.
    pub weights: (f64, f64),
}

impl Default for CoupledConfig {
    fn default() -> Self {
        CoupledConfig {
            fs: 10.0,
            duration_s: 1200.0,
            movement_noise_sd: 0.0,
            flow_noise_sd: 0.0,
            saturation: 1.0,
            weights: (0.6, 0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSubject {
    pub flow: TimeSeries,
    pub abd: AnhmSignal,
    pub tho: AnhmSignal,
    pub frequency: FrequencyTrajectory,
}

/// One synthetic subject. ABD and THO share the fundamental phase `phi`
/// (with zero fundamental offset) but have different wave shapes and
/// amplitude modulations. The flow is
///
/// `flow(t) = tanh(s * (w_abd abd(t) + w_tho tho(t))) / s`
///
/// on the noiseless movement signals, plus noise.
pub fn gen_coupled_subject(seed: u64, cfg: &CoupledConfig) -> Result<CoupledSubject> {
    if !(cfg.saturation > 0.0) {
        return Err(Error::invalid("saturation", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform =
        |lo: f64, hi: f64| Uniform::new(lo, hi).expect("valid range").sample(&mut rng);

    let frequency = FrequencyTrajectory::Sinusoidal {
        center_hz: uniform(0.22, 0.3),
        deviation: uniform(0.2, 0.4),
        rate_hz: 1.0 / 120.0,
        offset: uniform(0.0, 2.0 * PI),
    };
    let shape =
        |base: [f64; 4], uniform: &mut dyn FnMut(f64, f64) -> f64| -> (Vec<f64>, Vec<f64>) {
            let amplitudes = base.iter().map(|a| a * uniform(0.85, 1.15)).collect();
            let offsets = (0..4)
                .map(|k| if k == 0 { 0.0 } else { uniform(-PI, PI) })
                .collect();
            (amplitudes, offsets)
        };
    let (abd_amp, abd_off) = shape([1.0, 0.45, 0.2, 0.1], &mut uniform);
    let (tho_amp, tho_off) = shape([0.8, 0.3, 0.25, 0.08], &mut uniform);
    let abd_mod = AmplitudeModulation {
        depth: 0.2,
        rate_hz: 1.0 / 200.0,
        offset: uniform(0.0, 2.0 * PI),
    };
    let tho_mod = AmplitudeModulation {
        depth: 0.25,
        rate_hz: 1.0 / 170.0,
        offset: uniform(0.0, 2.0 * PI),
    };
    let channel_seeds = (
        seed.wrapping_mul(3).wrapping_add(1),
        seed.wrapping_mul(3).wrapping_add(2),
    );
    let flow_seed = seed.wrapping_mul(3).wrapping_add(3);

    let channel = |amplitudes, phase_offsets, modulation, seed| AnhmSpec {
        amplitudes,
        phase_offsets,
        modulation,
        frequency,
        noise_sd: cfg.movement_noise_sd,
        seed,
        epsilon: 0.05,
    };
    let abd = gen_anhm(
        &channel(abd_amp, abd_off, abd_mod, channel_seeds.0),
        cfg.fs,
        cfg.duration_s,
    )?;
    let tho = gen_anhm(
        &channel(tho_amp, tho_off, tho_mod, channel_seeds.1),
        cfg.fs,
        cfg.duration_s,
    )?;

    let abd_clean = abd.partial_sum(usize::MAX);
    let tho_clean = tho.partial_sum(usize::MAX);
    let mut flow_rng = ChaCha8Rng::seed_from_u64(flow_seed);
    let s = cfg.saturation;
    let flow = abd_clean
        .iter()
        .zip(&tho_clean)
        .map(|(a, t)| {
            let drive = cfg.weights.0 * a + cfg.weights.1 * t;
            let clean = libm::tanh(s * drive) / s;
            if cfg.flow_noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut flow_rng);
                clean + cfg.flow_noise_sd * z
            } else {
                clean
            }
        })
        .collect();
    Ok(CoupledSubject {
        flow: TimeSeries::new(flow, cfg.fs, 0.0)?,
        abd,
        tho,
        frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelFamily;

    #[test]
    fn single_tone_is_exact() {
        let spec = AnhmSpec::new(alloc::vec![1.0], FrequencyTrajectory::Constant(0.3));
        let s = gen_anhm(&spec, 10.0, 20.0).unwrap();
        for (i, v) in s.signal.samples().iter().enumerate() {
            let t = i as f64 / 10.0;
            assert!((v - libm::cos(2.0 * PI * 0.3 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_decreasing_phase_and_fast_variation() {
        let linear = FrequencyTrajectory::Linear {
            start_hz: 0.3,
            end_hz: -0.1,
            over_s: 10.0,
        };
        assert!(gen_anhm(&AnhmSpec::new(alloc::vec![1.0], linear), 10.0, 10.0).is_err());
        let wobbly = FrequencyTrajectory::Sinusoidal {
            center_hz: 0.3,
            deviation: 1.0,
            rate_hz: 0.05,
            offset: 0.0,
        };
        assert!(gen_anhm(&AnhmSpec::new(alloc::vec![1.0], wobbly), 10.0, 60.0).is_err());
    }

    #[test]
    fn gp_draw_collapses_to_mean() {
        let x = Matrix::from_fn(5, 1, |i, _| i as f64);
        let k = KernelSpec::new(KernelFamily::Exponential, 1e-300, 1.0).unwrap();
        let y = sample_gp(&x, &k, 2.0, 0.0, 3).unwrap();
        assert!(y.iter().all(|v| (v - 2.0).abs() < 1e-100));
    }

    #[test]
    fn coupled_subject_shapes() {
        let cfg = CoupledConfig {
            duration_s: 60.0,
            ..Default::default()
        };
        let s = gen_coupled_subject(1, &cfg).unwrap();
        assert_eq!(s.flow.len(), 600);
        assert_eq!(s.abd.signal.len(), 600);
        assert_eq!(s.abd.harmonics.len(), 4);
        assert_eq!(s.abd.harmonics[0].phase, s.tho.harmonics[0].phase);
    }
}
