//! Airflow estimation from thoracic (THO) and abdominal (ABD) respiratory
//! movement signals.
//!
//! The pipeline has two halves. The first represents each movement signal in
//! a *harmonic representation space*: the synchrosqueezed short-time Fourier
//! transform ([`tfr`]) sharpens the spectrogram, a penalized ridge
//! ([`ridge`]) follows the breathing fundamental, and band integration around
//! the fundamental and its multiples recovers per-sample amplitudes and
//! phases. The second half ([`features`], [`gp`], [`locgp`]) regresses
//! airflow on those covariates with a Gaussian process fitted per 30 s window
//! on nearest neighbours drawn from a training pool.
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is disabled.
//! Without `std` the STFT falls back to a direct (non-FFT) evaluation.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

mod error;
mod linalg;
mod matrix;
mod optim;

pub mod eval;
pub mod features;
pub mod gp;
pub mod locgp;
pub mod ridge;
pub mod signal;
pub mod synth;
pub mod tfr;

pub use crate::error::{Error, Result};
pub use crate::linalg::Cholesky;
pub use crate::matrix::Matrix;
pub use crate::optim::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use crate::signal::TimeSeries;

pub use num_complex::Complex64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
