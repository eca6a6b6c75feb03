//! Reference implementations shared by several test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use breathtrace_core::gp::{KernelFamily, KernelSpec, Variant};
use breathtrace_core::ridge::{extract_ridge, PENALTY_REFERENCE_DF};
use breathtrace_core::tfr::FrequencyGrid;
use breathtrace_core::Matrix;
use nalgebra::{DMatrix, DVector};

/// Ridge objective of an explicit curve, written out from its definition.
pub fn objective(
    mag: &Matrix<f64>,
    grid: &FrequencyGrid,
    lambda: f64,
    curve: &[usize],
    band: (usize, usize),
) -> f64 {
    let total: f64 = mag.as_slice().iter().sum();
    let step = grid.df() / PENALTY_REFERENCE_DF;
    let mut value = 0.0;
    for (l, &c) in curve.iter().enumerate() {
        let frame_empty = (band.0..band.1).all(|m| mag[(l, m)] == 0.0);
        if !frame_empty {
            value += (mag[(l, c)] / total).ln();
        }
        if l > 0 {
            let jump = (c as f64 - curve[l - 1] as f64) * step;
            value -= lambda * jump * jump;
        }
    }
    value
}

/// Best and runner-up objective over every curve inside `band`.
pub fn brute_force(
    mag: &Matrix<f64>,
    grid: &FrequencyGrid,
    lambda: f64,
    band: (usize, usize),
) -> (Vec<usize>, f64, f64) {
    let (frames, width) = (mag.rows(), band.1 - band.0);
    let mut best = (Vec::new(), f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut digits = vec![0usize; frames];
    for _ in 0..width.pow(frames as u32) {
        let curve: Vec<usize> = digits.iter().map(|d| d + band.0).collect();
        let v = objective(mag, grid, lambda, &curve, band);
        if v > best.1 {
            best = (curve, v, best.1);
        } else if v > best.2 {
            best.2 = v;
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < width {
                break;
            }
            *d = 0;
        }
    }
    best
}

pub fn check_against_brute_force(
    mag: &Matrix<f64>,
    grid: &FrequencyGrid,
    lambda: f64,
    band_hz: (f64, f64),
) {
    let r = grid.bins_within(band_hz.0, band_hz.1);
    let band = (r.start, r.end);
    let (best_curve, best, runner_up) = brute_force(mag, grid, lambda, band);
    let ridge = extract_ridge(mag, grid, lambda, band_hz).unwrap();
    let found = objective(mag, grid, lambda, &ridge.bin_index, band);
    assert!(
        (found - best).abs() <= 1e-9 * best.abs().max(1.0),
        "dp {found} vs brute force {best}"
    );
    assert!((ridge.objective - best).abs() <= 1e-9 * best.abs().max(1.0));
    if best - runner_up > 1e-9 * best.abs().max(1.0) {
        assert_eq!(ridge.bin_index, best_curve);
    }
}

/// Grid with `bins` bins at the penalty reference spacing, so a one-bin jump
/// costs exactly `lambda`.
pub fn reference_grid(bins: usize) -> FrequencyGrid {
    FrequencyGrid::new(
        0.1,
        0.1 + (bins - 1) as f64 * PENALTY_REFERENCE_DF,
        PENALTY_REFERENCE_DF,
    )
    .unwrap()
}

fn correlation(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Exponential => (-r).exp(),
        KernelFamily::Matern15 => (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp(),
        KernelFamily::SquaredExponential => (-r * r / 2.0).exp(),
    }
}

/// `sigma2 R + tau2 I`, with `R` degree-normalized for the diffusion variant.
pub fn dense_cov(x: &Matrix<f64>, k: &KernelSpec, tau2: f64, variant: Variant) -> DMatrix<f64> {
    let n = x.rows();
    let corr = DMatrix::from_fn(n, n, |i, j| {
        let h: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        correlation(k.family, h / k.rho)
    });
    let base = match variant {
        Variant::Stationary => corr,
        Variant::Diffusion => {
            let d: Vec<f64> = (0..n).map(|i| corr.row(i).sum()).collect();
            DMatrix::from_fn(n, n, |i, j| corr[(i, j)] / (d[i] * d[j]).sqrt())
        }
    };
    base * k.sigma2 + DMatrix::identity(n, n) * tau2
}

/// Gaussian log-density with an explicit inverse and determinant.
pub fn dense_log_likelihood(cov: &DMatrix<f64>, y: &[f64], mu: f64) -> f64 {
    let n = y.len();
    let r = DVector::from_iterator(n, y.iter().map(|v| v - mu));
    let inv = cov.clone().try_inverse().unwrap();
    let quad = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * quad
}
