use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::TimeSeries;
use crate::error::{Error, Result};

/// One second-order (or first-order, when `b2 == a2 == 0`) section in
/// transposed direct form II, normalized so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Filter state that makes a constant input `level` a fixed point.
    fn steady_state(&self, level: f64) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1 * level, z2 * level]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Digital Butterworth low-pass designed by the bilinear transform with
/// frequency prewarping, so the single-pass gain at the cutoff is exactly
/// `1/sqrt(2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthLowpass {
    sections: Vec<Biquad>,
    cutoff_hz: f64,
    fs: f64,
    order: usize,
}

impl ButterworthLowpass {
    pub fn new(cutoff_hz: f64, order: usize, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("order", "must be at least 1"));
        }
        if !(fs > 0.0) {
            return Err(Error::invalid("fs", "must be positive"));
        }
        let nyquist = fs / 2.0;
        if !(cutoff_hz > 0.0) {
            return Err(Error::invalid("cutoff_hz", "must be positive"));
        }
        if cutoff_hz >= nyquist {
            return Err(Error::AboveNyquist {
                freq_hz: cutoff_hz,
                nyquist_hz: nyquist,
            });
        }
        let k = 2.0 * fs;
        let wc = k * libm::tan(PI * cutoff_hz / fs);
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            // analog pole pair at angle theta in the left half-plane
            let theta = PI * (2 * i + 1 + order) as f64 / (2 * order) as f64;
            let re = libm::cos(theta);
            let a0 = k * k - 2.0 * re * wc * k + wc * wc;
            let a1 = 2.0 * (wc * wc - k * k);
            let a2 = k * k + 2.0 * re * wc * k + wc * wc;
            let g = wc * wc / a0;
            sections.push(Biquad {
                b: [g, 2.0 * g, g],
                a: [1.0, a1 / a0, a2 / a0],
            });
        }
        if order % 2 == 1 {
            let a0 = k + wc;
            let g = wc / a0;
            sections.push(Biquad {
                b: [g, g, 0.0],
                a: [1.0, (wc - k) / a0, 0.0],
            });
        }
        Ok(ButterworthLowpass {
            sections,
            cutoff_hz,
            fs,
            order,
        })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.fs;
        let z_inv = Complex64::new(libm::cos(w), -libm::sin(w));
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    /// Causal single pass, started from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0, 0.0]);
        }
        y
    }

    /// Forward-backward application with odd extension at both ends and
    /// steady-state initial conditions; zero phase, squared magnitude.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.pass_from_steady_state(&mut ext);
        ext.reverse();
        self.pass_from_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    fn pass_from_steady_state(&self, x: &mut [f64]) {
        let mut level = x[0];
        for s in &self.sections {
            let z = s.steady_state(level);
            s.run(x, z);
            level *= s.dc_gain();
        }
    }
}

/// Zero-phase Butterworth low-pass of the given order.
pub fn butterworth_lowpass(ts: &TimeSeries, cutoff_hz: f64, order: usize) -> Result<TimeSeries> {
    let filter = ButterworthLowpass::new(cutoff_hz, order, ts.fs())?;
    Ok(ts.with_samples(filter.filtfilt(ts.samples())))
}
