//! Gaussian-process regression with Matérn-family covariances.
//!
//! Hyperparameters are fitted by maximum likelihood. The mean `mu` and the
//! marginal variance `sigma2` have closed-form maximizers given the range
//! `rho` and the noise ratio `eta = tau2 / sigma2`, so the simplex search runs
//! over `(log rho, log eta)` only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::matrix::Matrix;
use crate::optim::{nelder_mead, NelderMeadOptions};

pub const RHO_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1e4);

// search box for log(tau2 / sigma2); feasibility is checked on tau2 itself
const LOG_ETA_BOUNDS: (f64, f64) = (-27.631021115928547, 27.631021115928547);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum KernelFamily {
    /// Matérn with smoothness 1/2.
    #[cfg_attr(feature = "serde", serde(rename = "exponential"))]
    Exponential,
    /// Matérn with smoothness 3/2.
    #[cfg_attr(feature = "serde", serde(rename = "matern_1_5"))]
    Matern15,
    /// The infinitely smooth Matérn limit.
    #[cfg_attr(feature = "serde", serde(rename = "squared_exponential"))]
    SquaredExponential,
}

impl KernelFamily {
    pub fn smoothness(self) -> f64 {
        match self {
            KernelFamily::Exponential => 0.5,
            KernelFamily::Matern15 => 1.5,
            KernelFamily::SquaredExponential => f64::INFINITY,
        }
    }

    /// Correlation at scaled distance `r = h / rho`.
    #[inline]
    pub fn correlation(self, r: f64) -> f64 {
        match self {
            KernelFamily::Exponential => libm::exp(-r),
            KernelFamily::Matern15 => {
                let s = libm::sqrt(3.0) * r;
                (1.0 + s) * libm::exp(-s)
            }
            KernelFamily::SquaredExponential => libm::exp(-0.5 * r * r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma2: f64,
    pub rho: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma2: f64, rho: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(
                "sigma2",
                format!("must be positive, got {sigma2}"),
            ));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(
                "rho",
                format!("must be positive, got {rho}"),
            ));
        }
        Ok(KernelSpec {
            family,
            sigma2,
            rho,
        })
    }

    #[inline]
    fn eval(&self, h: f64) -> f64 {
        self.sigma2 * self.family.correlation(h / self.rho)
    }
}

/// Covariance at distance `h`.
pub fn matern_cov(h: f64, kernel: &KernelSpec) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::invalid(
            "h",
            format!("distance must be >= 0, got {h}"),
        ));
    }
    Ok(kernel.eval(h))
}

fn check_finite(x: &Matrix<f64>) -> Result<()> {
    match x.as_slice().iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

#[inline]
fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (p, q) in a.iter().zip(b) {
        let d = p - q;
        s += d * d;
    }
    libm::sqrt(s)
}

/// Euclidean distances between all pairs of rows.
pub fn pairwise_distances(x: &Matrix<f64>) -> Result<Matrix<f64>> {
    check_finite(x)?;
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = distance(x.row(i), x.row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Covariance matrix of the rows of `x`.
pub fn cov_matrix(x: &Matrix<f64>, kernel: &KernelSpec) -> Result<Matrix<f64>> {
    if x.rows() == 0 {
        return Err(Error::Empty);
    }
    let d = pairwise_distances(x)?;
    Ok(d.map(|h| kernel.eval(*h)))
}

/// `D^{-1/2} S D^{-1/2}` with `D` the diagonal of row sums of `S`.
pub fn diffusion_normalize(s: &Matrix<f64>) -> Result<Matrix<f64>> {
    if s.rows() != s.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} is not square",
            s.rows(),
            s.cols()
        )));
    }
    let d = degrees(s)?;
    Ok(Matrix::from_fn(s.rows(), s.cols(), |i, j| {
        s[(i, j)] / libm::sqrt(d[i] * d[j])
    }))
}

fn degrees(s: &Matrix<f64>) -> Result<Vec<f64>> {
    s.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row.iter().sum();
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonPositiveDegree(i))
            }
        })
        .collect()
}

/// How the kernel matrix enters the model covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// `sigma2 * R`.
    #[default]
    Stationary,
    /// `sigma2 * D^{-1/2} R D^{-1/2}` with `D` the row sums of the
    /// correlation matrix `R`.
    Diffusion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    pub mu: f64,
    pub kernel: KernelSpec,
    pub tau2: f64,
    pub variant: Variant,
}

impl GpParams {
    /// Exact Gaussian log-likelihood of `y` at inputs `x`.
    pub fn log_likelihood(&self, x: &Matrix<f64>, y: &[f64]) -> Result<f64> {
        check_rows(x, y)?;
        let dist = pairwise_distances(x)?;
        let (chol, _) = self.factor(&dist)?;
        Ok(gaussian_log_density(&chol, y, self.mu))
    }

    /// Factor of `Sigma + tau2 I`, plus the correlation row sums for the
    /// diffusion variant.
    fn factor(&self, dist: &Matrix<f64>) -> Result<(Cholesky, Option<Vec<f64>>)> {
        if !(self.tau2 >= 0.0) {
            return Err(Error::invalid("tau2", "must be >= 0"));
        }
        let (unit, degrees) =
            unit_covariance(dist, self.kernel.family, self.kernel.rho, self.variant)?;
        let n = unit.rows();
        let total = Matrix::from_fn(n, n, |i, j| {
            self.kernel.sigma2 * unit[(i, j)] + if i == j { self.tau2 } else { 0.0 }
        });
        Ok((Cholesky::with_ladder(&total, self.kernel.sigma2)?, degrees))
    }
}

/// Log-likelihood of the stationary model.
pub fn log_likelihood(
    mu: f64,
    kernel: &KernelSpec,
    tau2: f64,
    x: &Matrix<f64>,
    y: &[f64],
) -> Result<f64> {
    GpParams {
        mu,
        kernel: *kernel,
        tau2,
        variant: Variant::Stationary,
    }
    .log_likelihood(x, y)
}

fn check_rows(x: &Matrix<f64>, y: &[f64]) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Empty);
    }
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows vs {} responses",
            x.rows(),
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// Unit-variance covariance for the given range, and the correlation row
/// sums when normalizing.
fn unit_covariance(
    dist: &Matrix<f64>,
    family: KernelFamily,
    rho: f64,
    variant: Variant,
) -> Result<(Matrix<f64>, Option<Vec<f64>>)> {
    let r = dist.map(|h| family.correlation(h / rho));
    match variant {
        Variant::Stationary => Ok((r, None)),
        Variant::Diffusion => {
            let d = degrees(&r)?;
            let n = r.rows();
            let normalized = Matrix::from_fn(n, n, |i, j| r[(i, j)] / libm::sqrt(d[i] * d[j]));
            Ok((normalized, Some(d)))
        }
    }
}

fn gaussian_log_density(chol: &Cholesky, y: &[f64], mu: f64) -> f64 {
    let centered: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let w = chol.solve_lower(&centered);
    let n = y.len() as f64;
    -0.5 * n * libm::log(2.0 * PI) - 0.5 * chol.log_det() - 0.5 * dot(&w, &w)
}

/// Settings for [`fit_mle`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub family: KernelFamily,
    pub variant: Variant,
    /// Extra starting point; the fit is never worse than it.
    pub init: Option<GpParams>,
    /// Per-start simplex settings, in `(log rho, log(tau2/sigma2))`.
    pub optimizer: NelderMeadOptions,
}

impl FitOptions {
    pub fn new(family: KernelFamily) -> Self {
        FitOptions {
            family,
            variant: Variant::Stationary,
            init: None,
            optimizer: NelderMeadOptions {
                max_evals: 60,
                f_tol: 1e-8,
                x_tol: 1e-3,
                initial_step: 1.0,
            },
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_init(mut self, init: GpParams) -> Self {
        self.init = Some(init);
        self
    }
}

/// A fitted GP, ready for prediction.
#[derive(Debug, Clone)]
pub struct GpFit {
    pub params: GpParams,
    pub log_likelihood: f64,
    /// Profiled log-likelihood at each starting point, in the order tried.
    pub start_log_likelihoods: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
    /// The responses had zero variance; the fit sits at the variance floor.
    pub degenerate: bool,
    x: Matrix<f64>,
    chol: Cholesky,
    // (Sigma + tau2 I)^{-1} (y - mu)
    alpha: Vec<f64>,
    degrees: Option<Vec<f64>>,
}

impl GpFit {
    /// Conditions `params` on `(x, y)` without optimizing.
    pub fn condition(params: GpParams, x: &Matrix<f64>, y: &[f64]) -> Result<Self> {
        check_rows(x, y)?;
        let dist = pairwise_distances(x)?;
        Self::condition_on(params, x, &dist, y, false)
    }

    fn condition_on(
        params: GpParams,
        x: &Matrix<f64>,
        dist: &Matrix<f64>,
        y: &[f64],
        degenerate: bool,
    ) -> Result<Self> {
        let (chol, degrees) = params.factor(dist)?;
        let log_likelihood = gaussian_log_density(&chol, y, params.mu);
        let centered: Vec<f64> = y.iter().map(|v| v - params.mu).collect();
        let alpha = chol.solve(&centered);
        Ok(GpFit {
            params,
            log_likelihood,
            start_log_likelihoods: Vec::new(),
            evaluations: 0,
            converged: true,
            degenerate,
            x: x.clone(),
            chol,
            alpha,
            degrees,
        })
    }

    pub fn training_inputs(&self) -> &Matrix<f64> {
        &self.x
    }

    /// Diagonal jitter the covariance factorization needed.
    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    /// Posterior mean and standard deviation of the latent function at each
    /// row of `xnew`. With `include_noise` the observation noise variance is
    /// added before the square root.
    pub fn predict(&self, xnew: &Matrix<f64>, include_noise: bool) -> Result<Prediction> {
        if xnew.cols() != self.x.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} test columns vs {} training columns",
                xnew.cols(),
                self.x.cols()
            )));
        }
        check_finite(xnew)?;
        let n = self.x.rows();
        let kernel = self.params.kernel;
        let mut mean = Vec::with_capacity(xnew.rows());
        let mut sd = Vec::with_capacity(xnew.rows());
        let mut k = vec![0.0; n];
        for row in xnew.row_iter() {
            for (i, ki) in k.iter_mut().enumerate() {
                *ki = kernel
                    .family
                    .correlation(distance(row, self.x.row(i)) / kernel.rho);
            }
            let prior = match &self.degrees {
                None => {
                    k.iter_mut().for_each(|v| *v *= kernel.sigma2);
                    kernel.sigma2
                }
                Some(deg) => {
                    // degrees of the training matrix extended by the test point
                    let d0 = 1.0 + k.iter().sum::<f64>();
                    for (ki, di) in k.iter_mut().zip(deg) {
                        *ki = kernel.sigma2 * *ki / libm::sqrt(d0 * (di + *ki));
                    }
                    kernel.sigma2 / d0
                }
            };
            mean.push(self.params.mu + dot(&k, &self.alpha));
            let v = self.chol.solve_lower(&k);
            let mut var = (prior - dot(&v, &v)).max(0.0);
            if include_noise {
                var += self.params.tau2;
            }
            sd.push(libm::sqrt(var));
        }
        Ok(Prediction { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Shorthand for [`GpFit::predict`] of the latent function.
pub fn predict(fit: &GpFit, xnew: &Matrix<f64>) -> Result<Prediction> {
    fit.predict(xnew, false)
}

struct Profile<'a> {
    dist: &'a Matrix<f64>,
    y: &'a [f64],
    family: KernelFamily,
    variant: Variant,
}

struct ProfiledPoint {
    value: f64,
    mu: f64,
    sigma2: f64,
    tau2: f64,
}

impl Profile<'_> {
    /// Likelihood maximized over `mu` and `sigma2` at fixed range and noise
    /// ratio; `-inf` where the implied noise variance leaves its bounds.
    fn eval(&self, log_rho: f64, log_eta: f64) -> Option<ProfiledPoint> {
        let rho = libm::exp(log_rho);
        let eta = libm::exp(log_eta);
        let (mut unit, _) = unit_covariance(self.dist, self.family, rho, self.variant).ok()?;
        let n = unit.rows();
        for i in 0..n {
            unit[(i, i)] += eta;
        }
        let chol = Cholesky::with_ladder(&unit, 1.0).ok()?;
        let u = chol.solve_lower(&vec![1.0; n]);
        let v = chol.solve_lower(self.y);
        let mu = dot(&u, &v) / dot(&u, &u);
        let q: f64 = u
            .iter()
            .zip(&v)
            .map(|(a, b)| (b - mu * a) * (b - mu * a))
            .sum();
        let nf = n as f64;
        let sigma2 = (q / nf).clamp(VARIANCE_BOUNDS.0, VARIANCE_BOUNDS.1);
        let tau2 = eta * sigma2;
        if !(VARIANCE_BOUNDS.0..=VARIANCE_BOUNDS.1).contains(&tau2) {
            return None;
        }
        let value = -0.5 * nf * libm::log(2.0 * PI)
            - 0.5 * nf * libm::log(sigma2)
            - 0.5 * chol.log_det()
            - 0.5 * q / sigma2;
        value.is_finite().then_some(ProfiledPoint {
            value,
            mu,
            sigma2,
            tau2,
        })
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x[0], x[1]).map_or(f64::NEG_INFINITY, |p| p.value)
    }
}

/// Lower median and maximum of the positive pairwise distances.
fn distance_scales(dist: &Matrix<f64>) -> Option<(f64, f64)> {
    let n = dist.rows();
    let mut pos: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        pos.extend(dist.row(i)[..i].iter().copied().filter(|d| *d > 0.0));
    }
    if pos.is_empty() {
        return None;
    }
    let max = pos.iter().copied().fold(0.0, f64::max);
    let mid = (pos.len() - 1) / 2;
    let (_, median, _) = pos.select_nth_unstable_by(mid, f64::total_cmp);
    Some((*median, max))
}

/// Maximum-likelihood fit with three starts: distance-moment based, wide
/// range with equal noise, and narrow range with little noise.
pub fn fit_mle(x: &Matrix<f64>, y: &[f64], opts: &FitOptions) -> Result<GpFit> {
    check_rows(x, y)?;
    if x.rows() < 5 {
        return Err(Error::TooShort {
            needed: 5,
            got: x.rows(),
        });
    }
    let dist = pairwise_distances(x)?;
    let (median, max) = distance_scales(&dist)
        .ok_or_else(|| Error::invalid("x", "need at least two distinct rows"))?;
    let clamp_rho = |r: f64| libm::log(r.clamp(RHO_BOUNDS.0, RHO_BOUNDS.1));

    if y.iter().all(|v| *v == y[0]) {
        let kernel = KernelSpec::new(opts.family, VARIANCE_BOUNDS.0, libm::exp(clamp_rho(median)))?;
        let params = GpParams {
            mu: y[0],
            kernel,
            tau2: VARIANCE_BOUNDS.0,
            variant: opts.variant,
        };
        return GpFit::condition_on(params, x, &dist, y, true);
    }

    let profile = Profile {
        dist: &dist,
        y,
        family: opts.family,
        variant: opts.variant,
    };
    let mut starts = vec![
        [clamp_rho(median), libm::log(0.1)],
        [clamp_rho(max), 0.0],
        [clamp_rho(0.2 * median), libm::log(1e-3)],
    ];
    if let Some(init) = &opts.init {
        starts.push([
            clamp_rho(init.kernel.rho),
            libm::log(init.tau2 / init.kernel.sigma2).clamp(LOG_ETA_BOUNDS.0, LOG_ETA_BOUNDS.1),
        ]);
    }
    let lower = [libm::log(RHO_BOUNDS.0), LOG_ETA_BOUNDS.0];
    let upper = [libm::log(RHO_BOUNDS.1), LOG_ETA_BOUNDS.1];

    let mut start_values = Vec::with_capacity(starts.len());
    let mut evaluations = 0;
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in &starts {
        start_values.push(profile.value(s));
        let r = nelder_mead(|p| profile.value(p), s, &lower, &upper, &opts.optimizer);
        evaluations += r.evaluations;
        if best.as_ref().is_none_or(|b| r.value > b.1) {
            best = Some((r.x, r.value, r.converged));
        }
    }
    let (x_best, _, converged) = best.expect("at least one start");

    let candidate = profile.eval(x_best[0], x_best[1]).and_then(|p| {
        let kernel = KernelSpec::new(opts.family, p.sigma2, libm::exp(x_best[0])).ok()?;
        let params = GpParams {
            mu: p.mu,
            kernel,
            tau2: p.tau2,
            variant: opts.variant,
        };
        GpFit::condition_on(params, x, &dist, y, false).ok()
    });
    let init_fit = match &opts.init {
        Some(init) => Some(GpFit::condition_on(
            GpParams {
                variant: opts.variant,
                ..*init
            },
            x,
            &dist,
            y,
            false,
        )?),
        None => None,
    };
    let mut fit = match (candidate, init_fit) {
        (Some(c), Some(i)) => {
            if c.log_likelihood >= i.log_likelihood {
                c
            } else {
                i
            }
        }
        (Some(c), None) => c,
        (None, Some(i)) => i,
        (None, None) => {
            return Err(Error::NotPositiveDefinite {
                max_jitter: 1e-4 * VARIANCE_BOUNDS.1,
            })
        }
    };
    fit.start_log_likelihoods = start_values;
    fit.evaluations = evaluations;
    fit.converged = converged;
    Ok(fit)
}
