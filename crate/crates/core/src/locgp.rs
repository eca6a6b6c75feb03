//! Windowed airflow prediction.
//!
//! Each recording is cut into non-overlapping windows. For every window the
//! K nearest pool rows of each query row are pooled into one training set,
//! a GP (or a linear model) is fitted to it, and the window's flow is
//! predicted. In intra-subject mode the pool is the subject's own history
//! before the window; in inter-subject mode it is other subjects' data.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::{self, MetricConfig, RecordingMetrics};
use crate::features::{harmonic_features, lag_embed, FeatureMatrix, ScalingParams};
use crate::gp::{fit_mle, FitOptions, KernelFamily, Variant};
use crate::matrix::Matrix;
use crate::ridge::{harmonic_decompose, DecomposeConfig, Decomposition};
use crate::signal::{detrend_local_quadratic, resample, TimeSeries};
use crate::tfr::{FrequencyGrid, Threshold, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Mode {
    /// Train on the subject's own earlier windows.
    #[default]
    Intra,
    /// Train on other subjects.
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Standardization {
    /// Fit scaling on the training pool and carry it to the queries.
    #[default]
    Separate,
    /// Scale every recording by its own whole-series statistics.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Model {
    #[default]
    Gp,
    /// Ordinary least squares on the unlagged features.
    Lm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields)
)]
pub struct GridConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub df: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            f_min: 0.0,
            f_max: 2.0,
            df: 1e-3,
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct PipelineConfig {
    /// Rate all channels are resampled to before analysis.
    pub sampling_rate_hz: f64,
    /// Expected rate of the input files; checked on ingest when set.
    pub input_rate_hz: Option<f64>,
    pub window_seconds: f64,
    /// Nearest neighbours per query row.
    pub neighbors: usize,
    pub kernel: KernelFamily,
    /// Degree-normalize the covariance.
    pub diffusion: bool,
    pub model: Model,
    /// Ridge jump penalty.
    pub lambda: f64,
    pub band_halfwidth_hz: f64,
    pub harmonics: usize,
    pub lag_width: usize,
    pub standardization: Standardization,
    pub fundamental_band_hz: [f64; 2],
    pub grid: GridConfig,
    /// Gaussian window parameter `s` in `exp(-t^2 / s)`, seconds squared.
    pub window_scale: f64,
    /// SST magnitude threshold relative to the largest STFT magnitude.
    pub threshold_rel: f64,
    pub refine_harmonics: bool,
    pub detrend_span_seconds: f64,
    pub butterworth_cutoff_hz: f64,
    pub butterworth_order: usize,
    pub seed: u64,
    pub mode: Mode,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    /// Windows whose pool has fewer rows are skipped.
    pub min_pool: usize,
    pub max_align_lag_seconds: f64,
    /// Add the fitted noise variance to predictive intervals.
    pub interval_includes_noise: bool,
    pub coverage_level: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sampling_rate_hz: 10.0,
            input_rate_hz: None,
            window_seconds: 30.0,
            neighbors: 3,
            kernel: KernelFamily::Exponential,
            diffusion: false,
            model: Model::Gp,
            lambda: 0.3,
            band_halfwidth_hz: 0.05,
            harmonics: 4,
            lag_width: 10,
            standardization: Standardization::Separate,
            fundamental_band_hz: [0.1, 0.5],
            grid: GridConfig::default(),
            window_scale: 32.0,
            threshold_rel: 1e-8,
            refine_harmonics: true,
            detrend_span_seconds: 30.0,
            butterworth_cutoff_hz: 1.0,
            butterworth_order: 6,
            seed: 0,
            mode: Mode::Intra,
            train_subjects: Vec::new(),
            test_subjects: Vec::new(),
            min_pool: 50,
            max_align_lag_seconds: 1.5,
            interval_includes_noise: false,
            coverage_level: 0.95,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("sampling_rate_hz", self.sampling_rate_hz)?;
        if let Some(r) = self.input_rate_hz {
            positive("input_rate_hz", r)?;
        }
        positive("window_seconds", self.window_seconds)?;
        positive("band_halfwidth_hz", self.band_halfwidth_hz)?;
        positive("window_scale", self.window_scale)?;
        positive("detrend_span_seconds", self.detrend_span_seconds)?;
        positive("max_align_lag_seconds", self.max_align_lag_seconds)?;
        if self.window_samples() == 0 {
            return Err(Error::invalid("window_seconds", "shorter than one sample"));
        }
        if self.neighbors == 0 {
            return Err(Error::invalid("neighbors", "must be at least 1"));
        }
        if self.harmonics == 0 {
            return Err(Error::invalid("harmonics", "must be at least 1"));
        }
        if self.lag_width == 0 {
            return Err(Error::invalid("lag_width", "must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        if !(self.threshold_rel >= 0.0) {
            return Err(Error::invalid("threshold_rel", "must be >= 0"));
        }
        if !(self.coverage_level > 0.0 && self.coverage_level < 1.0) {
            return Err(Error::invalid("coverage_level", "must be in (0, 1)"));
        }
        let [lo, hi] = self.fundamental_band_hz;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::invalid(
                "fundamental_band_hz",
                format!("[{lo}, {hi}] is not an interval"),
            ));
        }
        let grid = self.frequency_grid()?;
        if self.harmonics as f64 * hi > grid.f_max() + 1e-9 {
            return Err(Error::invalid(
                "grid",
                format!(
                    "f_max {} Hz cannot hold harmonic {} of a {hi} Hz fundamental",
                    grid.f_max(),
                    self.harmonics
                ),
            ));
        }
        if grid.f_max() >= 0.5 * self.sampling_rate_hz {
            return Err(Error::AboveNyquist {
                freq_hz: grid.f_max(),
                nyquist_hz: 0.5 * self.sampling_rate_hz,
            });
        }
        if self.butterworth_order == 0 {
            return Err(Error::invalid("butterworth_order", "must be at least 1"));
        }
        if !(self.butterworth_cutoff_hz > 0.0
            && self.butterworth_cutoff_hz < 0.5 * self.sampling_rate_hz)
        {
            return Err(Error::AboveNyquist {
                freq_hz: self.butterworth_cutoff_hz,
                nyquist_hz: 0.5 * self.sampling_rate_hz,
            });
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        libm::round(self.window_seconds * self.sampling_rate_hz) as usize
    }

    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.grid.f_min, self.grid.f_max, self.grid.df)
    }

    pub fn decompose_config(&self) -> Result<DecomposeConfig> {
        Ok(DecomposeConfig {
            window: WindowSpec::gaussian(self.window_scale),
            grid: self.frequency_grid()?,
            threshold: Threshold::Relative(self.threshold_rel),
            lambda: self.lambda,
            band_halfwidth: self.band_halfwidth_hz,
            fundamental_band: (self.fundamental_band_hz[0], self.fundamental_band_hz[1]),
            refine_harmonics: self.refine_harmonics,
        })
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            fs: self.sampling_rate_hz,
            cutoff_hz: self.butterworth_cutoff_hz,
            order: self.butterworth_order,
            coverage_level: self.coverage_level,
        }
    }

    /// Largest global alignment shift in samples, used in inter mode.
    pub fn max_align_lag(&self) -> usize {
        libm::round(self.max_align_lag_seconds * self.sampling_rate_hz) as usize
    }
}

/// Where a pool row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    /// Index into the subject list given to the pipeline.
    pub subject: usize,
    pub sample: usize,
}

/// Candidate training rows with their flow values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPool {
    features: Matrix<f64>,
    responses: Vec<f64>,
    provenance: Vec<SampleRef>,
    mode: Mode,
}

impl TrainingPool {
    pub fn new(
        features: Matrix<f64>,
        responses: Vec<f64>,
        provenance: Vec<SampleRef>,
        mode: Mode,
    ) -> Result<Self> {
        if features.rows() != responses.len() || features.rows() != provenance.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pool rows, {} responses, {} provenance records",
                features.rows(),
                responses.len(),
                provenance.len()
            )));
        }
        Ok(TrainingPool {
            features,
            responses,
            provenance,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn provenance(&self) -> &[SampleRef] {
        &self.provenance
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn standardized(&self, params: &ScalingParams) -> Result<TrainingPool> {
        Ok(TrainingPool {
            features: params.apply(&self.features)?,
            ..self.clone()
        })
    }
}

/// Indices of the `k` pool rows nearest to `query` in Euclidean distance,
/// nearest first. Equal distances keep the earlier row. Returns the whole
/// pool when it has at most `k` rows.
pub fn knn_search(query: &[f64], pool: &TrainingPool, k: usize) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if query.len() != pool.features.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}-dimensional query for a {}-column pool",
            query.len(),
            pool.features.cols()
        )));
    }
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, row) in pool.features.row_iter().enumerate() {
        let bound = if best.len() == k {
            best[k - 1].0
        } else {
            f64::INFINITY
        };
        let Some(d) = bounded_sq_distance(query, row, bound) else {
            continue;
        };
        // insert after every entry at distance <= d so earlier rows win ties
        let at = best.partition_point(|e| e.0 <= d);
        if at < k {
            best.insert(at, (d, i));
            best.truncate(k);
        }
    }
    Ok(best.into_iter().map(|(_, i)| i).collect())
}

/// Squared distance, or `None` once it is known to exceed `bound`.
#[inline]
fn bounded_sq_distance(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut s = 0.0;
    for (ca, cb) in a.chunks(16).zip(b.chunks(16)) {
        for (p, q) in ca.iter().zip(cb) {
            let d = p - q;
            s += d * d;
        }
        if s > bound {
            return None;
        }
    }
    Some(s)
}

/// Union of the nearest-neighbour sets of all query rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Matrix<f64>,
    pub responses: Vec<f64>,
    /// Ascending pool indices of the selected rows.
    pub pool_indices: Vec<usize>,
}

pub fn build_training_set(
    queries: &Matrix<f64>,
    pool: &TrainingPool,
    k: usize,
) -> Result<TrainingSet> {
    let mut selected = vec![false; pool.len()];
    for q in queries.row_iter() {
        for i in knn_search(q, pool, k)? {
            selected[i] = true;
        }
    }
    let pool_indices: Vec<usize> = (0..pool.len()).filter(|&i| selected[i]).collect();
    let cols = pool.features.cols();
    let mut data = Vec::with_capacity(pool_indices.len() * cols);
    for &i in &pool_indices {
        data.extend_from_slice(pool.features.row(i));
    }
    Ok(TrainingSet {
        inputs: Matrix::from_vec(pool_indices.len(), cols, data),
        responses: pool_indices.iter().map(|&i| pool.responses[i]).collect(),
        pool_indices,
    })
}

/// A block of consecutive samples predicted together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpan {
    pub index: usize,
    /// First sample.
    pub start: usize,
    /// One past the last sample.
    pub end: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl WindowSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSummary {
    Gp {
        mu: f64,
        sigma2: f64,
        rho: f64,
        tau2: f64,
        log_likelihood: f64,
        evaluations: usize,
        converged: bool,
        degenerate: bool,
        jitter: f64,
    },
    Lm {
        rank: usize,
        residual_se: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub window: WindowSpan,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub training_size: usize,
    pub pool_size: usize,
    pub model: ModelSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// The pool had fewer rows than the configured minimum.
    InsufficientHistory { pool: usize },
    /// Some samples in the window lack a full lag history.
    IncompleteLag,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowOutcome {
    Predicted(WindowPrediction),
    Skipped {
        window: WindowSpan,
        reason: SkipReason,
    },
}

impl WindowOutcome {
    pub fn window(&self) -> &WindowSpan {
        match self {
            WindowOutcome::Predicted(p) => &p.window,
            WindowOutcome::Skipped { window, .. } => window,
        }
    }
}

fn check_queries(window: &WindowSpan, queries: &Matrix<f64>) -> Result<()> {
    if queries.rows() != window.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} query rows for a {}-sample window",
            queries.rows(),
            window.len()
        )));
    }
    Ok(())
}

/// Fits a GP on the union of the queries' neighbour sets and predicts every
/// query row. `queries` and `pool` must already share one scaling.
pub fn predict_window(
    window: WindowSpan,
    queries: &Matrix<f64>,
    pool: &TrainingPool,
    cfg: &PipelineConfig,
) -> Result<WindowOutcome> {
    check_queries(&window, queries)?;
    if pool.len() < cfg.min_pool.max(1) {
        return Ok(WindowOutcome::Skipped {
            window,
            reason: SkipReason::InsufficientHistory { pool: pool.len() },
        });
    }
    let set = build_training_set(queries, pool, cfg.neighbors)?;
    let variant = if cfg.diffusion {
        Variant::Diffusion
    } else {
        Variant::Stationary
    };
    let fit = fit_mle(
        &set.inputs,
        &set.responses,
        &FitOptions::new(cfg.kernel).with_variant(variant),
    )?;
    let pred = fit.predict(queries, cfg.interval_includes_noise)?;
    let p = fit.params;
    Ok(WindowOutcome::Predicted(WindowPrediction {
        window,
        mean: pred.mean,
        sd: pred.sd,
        training_size: set.responses.len(),
        pool_size: pool.len(),
        model: ModelSummary::Gp {
            mu: p.mu,
            sigma2: p.kernel.sigma2,
            rho: p.kernel.rho,
            tau2: p.tau2,
            log_likelihood: fit.log_likelihood,
            evaluations: fit.evaluations,
            converged: fit.converged,
            degenerate: fit.degenerate,
            jitter: fit.jitter(),
        },
    }))
}

/// Least-squares fit `y = b0 + x b` with the minimum-norm slope for
/// rank-deficient designs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: Vec<f64>,
    /// Rank of the design including the intercept.
    pub rank: usize,
    /// `sqrt(RSS / max(n - rank, 1))`.
    pub residual_se: f64,
}

impl LinearFit {
    pub fn fit(x: &Matrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        if n != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{n} rows vs {} responses",
                y.len()
            )));
        }
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        let mut x_mean = vec![0.0; p];
        for row in x.row_iter() {
            for (m, v) in x_mean.iter_mut().zip(row) {
                *m += v / nf;
            }
        }
        // centering separates the intercept, so only the slope is min-norm
        let a = nalgebra::DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
        let b = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let svd = a.svd(true, true);
        let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let tol = max_sv * n.max(p) as f64 * f64::EPSILON;
        let (slope, slope_rank) = if max_sv > 0.0 {
            let s = svd.solve(&b, tol).map_err(|e| Error::invalid("x", e))?;
            (s.iter().copied().collect::<Vec<f64>>(), svd.rank(tol))
        } else {
            (vec![0.0; p], 0)
        };
        let intercept = y_mean - x_mean.iter().zip(&slope).map(|(m, s)| m * s).sum::<f64>();
        let mut fit = LinearFit {
            intercept,
            slope,
            rank: slope_rank + 1,
            residual_se: 0.0,
        };
        let rss: f64 = x
            .row_iter()
            .zip(y)
            .map(|(r, v)| (v - fit.predict_row(r)) * (v - fit.predict_row(r)))
            .sum();
        fit.residual_se = libm::sqrt(rss / n.saturating_sub(fit.rank).max(1) as f64);
        Ok(fit)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.slope).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// The linear counterpart of [`predict_window`]: OLS on the union of the
/// queries' neighbour sets, with the residual standard error as the
/// (constant) predictive sd.
pub fn loclm_baseline(
    window: WindowSpan,
    queries: &Matrix<f64>,
    pool: &TrainingPool,
    cfg: &PipelineConfig,
) -> Result<WindowOutcome> {
    check_queries(&window, queries)?;
    if pool.len() < cfg.min_pool.max(2) {
        return Ok(WindowOutcome::Skipped {
            window,
            reason: SkipReason::InsufficientHistory { pool: pool.len() },
        });
    }
    let set = build_training_set(queries, pool, cfg.neighbors)?;
    let fit = LinearFit::fit(&set.inputs, &set.responses)?;
    Ok(WindowOutcome::Predicted(WindowPrediction {
        window,
        mean: queries.row_iter().map(|r| fit.predict_row(r)).collect(),
        sd: vec![fit.residual_se; queries.rows()],
        training_size: set.responses.len(),
        pool_size: pool.len(),
        model: ModelSummary::Lm {
            rank: fit.rank,
            residual_se: fit.residual_se,
        },
    }))
}

/// One recording: movement channels and, for training or scoring, flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub flow: Option<TimeSeries>,
    pub abd: TimeSeries,
    pub tho: TimeSeries,
}

impl Subject {
    /// Checks that all channels share rate, start time and length.
    pub fn new(
        id: impl Into<String>,
        flow: Option<TimeSeries>,
        abd: TimeSeries,
        tho: TimeSeries,
    ) -> Result<Self> {
        let id = id.into();
        let same = |a: &TimeSeries, b: &TimeSeries| {
            a.fs() == b.fs() && a.t0() == b.t0() && a.len() == b.len()
        };
        if !same(&abd, &tho) || flow.as_ref().is_some_and(|f| !same(f, &abd)) {
            return Err(Error::DimensionMismatch(format!(
                "channels of subject `{id}` are misaligned"
            )));
        }
        Ok(Subject { id, flow, abd, tho })
    }
}

/// A subject after resampling, detrending, decomposition and feature
/// construction.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub fs: f64,
    pub t0: f64,
    pub len: usize,
    pub flow: Option<Vec<f64>>,
    pub abd: Decomposition,
    pub tho: Decomposition,
    /// Unlagged features, one row per sample.
    pub features: FeatureMatrix,
    /// Lag-embedded features; row `r` belongs to sample `r + lag_width - 1`.
    pub lagged: FeatureMatrix,
}

impl PreparedSubject {
    pub fn new(subject: &Subject, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let fs = cfg.sampling_rate_hz;
        let abd = resample(&subject.abd, fs)?;
        let tho = resample(&subject.tho, fs)?;
        let flow = match &subject.flow {
            Some(f) => Some(resample(f, fs)?.into_samples()),
            None => None,
        };
        let dcfg = cfg.decompose_config()?;
        let decompose = |ts: &TimeSeries| -> Result<Decomposition> {
            let trendless = detrend_local_quadratic(ts, cfg.detrend_span_seconds)?;
            harmonic_decompose(&trendless, cfg.harmonics, &dcfg)
        };
        let abd_dec = decompose(&abd)?;
        let tho_dec = decompose(&tho)?;
        let features = harmonic_features(&abd_dec.components, &tho_dec.components)?;
        let lagged = lag_embed(&features, cfg.lag_width)?;
        Ok(PreparedSubject {
            id: subject.id.clone(),
            fs,
            t0: abd.t0(),
            len: abd.len(),
            flow,
            abd: abd_dec,
            tho: tho_dec,
            features,
            lagged,
        })
    }

    /// Features used by `model` and the sample of their first row.
    fn model_features(&self, model: Model) -> (&FeatureMatrix, usize) {
        match model {
            Model::Gp => (&self.lagged, self.len - self.lagged.rows()),
            Model::Lm => (&self.features, 0),
        }
    }

    fn windows(&self, window_len: usize) -> Vec<WindowSpan> {
        (0..self.len / window_len)
            .map(|w| {
                let (start, end) = (w * window_len, (w + 1) * window_len);
                WindowSpan {
                    index: w,
                    start,
                    end,
                    t_start: self.t0 + start as f64 / self.fs,
                    t_end: self.t0 + end as f64 / self.fs,
                }
            })
            .collect()
    }
}

/// One window of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowJob {
    /// Index into the pipeline's subject list.
    pub subject: usize,
    pub window: WindowSpan,
}

// Fixed inter-subject pool of one test subject, in model-feature space.
#[derive(Debug, Clone)]
struct InterPool {
    pool: TrainingPool,
}

/// Per-subject predictions and scores.
#[derive(Debug, Clone)]
pub struct SubjectOutput {
    pub id: String,
    pub t0: f64,
    pub fs: f64,
    pub windows: Vec<WindowOutcome>,
    /// Per-sample predicted mean; NaN where nothing was predicted.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `None` when the subject has no flow to score against.
    pub metrics: Option<RecordingMetrics>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub subjects: Vec<SubjectOutput>,
}

impl PipelineOutput {
    /// Lower medians over all scored windows of
    /// `(rmse_reduction, diff_rmse_reduction, coverage)`.
    pub fn medians(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        let windows: Vec<&eval::WindowMetrics> = self
            .subjects
            .iter()
            .filter_map(|s| s.metrics.as_ref())
            .flat_map(|m| m.windows.iter())
            .collect();
        let pick = |f: &dyn Fn(&eval::WindowMetrics) -> Option<f64>| {
            eval::median(&windows.iter().filter_map(|w| f(w)).collect::<Vec<f64>>())
        };
        (
            pick(&|w| w.rmse_reduction),
            pick(&|w| w.diff_rmse_reduction),
            pick(&|w| Some(w.coverage)),
        )
    }
}

/// The full prediction run over prepared subjects, split into independent
/// window jobs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    subjects: Vec<PreparedSubject>,
    /// Subjects whose windows are predicted.
    targets: Vec<usize>,
    /// Whole-series scaling per subject, for [`Standardization::All`].
    own_scaling: Vec<ScalingParams>,
    inter_pools: Vec<Option<InterPool>>,
}

impl Pipeline {
    pub fn new(subjects: Vec<PreparedSubject>, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if subjects.is_empty() {
            return Err(Error::Empty);
        }
        let index_of = |name: &String| {
            subjects
                .iter()
                .position(|s| &s.id == name)
                .ok_or_else(|| Error::invalid("subjects", format!("unknown subject `{name}`")))
        };
        let train: Vec<usize> = cfg
            .train_subjects
            .iter()
            .map(index_of)
            .collect::<Result<_>>()?;
        let mut targets: Vec<usize> = cfg
            .test_subjects
            .iter()
            .map(index_of)
            .collect::<Result<_>>()?;
        if targets.is_empty() {
            targets = (0..subjects.len()).filter(|i| !train.contains(i)).collect();
        }
        if let Some(&both) = targets.iter().find(|t| train.contains(t)) {
            return Err(Error::invalid(
                "test_subjects",
                format!("subject `{}` is also a training subject", subjects[both].id),
            ));
        }
        if targets.is_empty() {
            return Err(Error::invalid(
                "test_subjects",
                "no subject left to predict",
            ));
        }

        let own_scaling = match cfg.standardization {
            Standardization::All => subjects
                .iter()
                .map(|s| ScalingParams::fit(s.model_features(cfg.model).0.values()))
                .collect::<Result<_>>()?,
            Standardization::Separate => Vec::new(),
        };
        let mut pipeline = Pipeline {
            cfg,
            subjects,
            targets,
            own_scaling,
            inter_pools: Vec::new(),
        };
        match pipeline.cfg.mode {
            Mode::Intra => {
                for &t in &pipeline.targets {
                    pipeline.require_flow(t)?;
                }
            }
            Mode::Inter => {
                for &t in &train {
                    pipeline.require_flow(t)?;
                }
                let mut pools = vec![None; pipeline.subjects.len()];
                for &t in &pipeline.targets {
                    let sources: Vec<usize> = if train.is_empty() {
                        (0..pipeline.subjects.len()).filter(|&s| s != t).collect()
                    } else {
                        train.clone()
                    };
                    for &s in &sources {
                        pipeline.require_flow(s)?;
                    }
                    pools[t] = Some(pipeline.inter_pool(&sources)?);
                }
                pipeline.inter_pools = pools;
            }
        }
        Ok(pipeline)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn subjects(&self) -> &[PreparedSubject] {
        &self.subjects
    }

    fn require_flow(&self, s: usize) -> Result<()> {
        if self.subjects[s].flow.is_none() {
            return Err(Error::invalid(
                "flow",
                format!(
                    "subject `{}` has no flow but is used for training",
                    self.subjects[s].id
                ),
            ));
        }
        Ok(())
    }

    /// Rows of subject `s` covering samples `range`, with flow and
    /// provenance, in model-feature space (unscaled).
    fn rows(
        &self,
        s: usize,
        range: core::ops::Range<usize>,
    ) -> (Matrix<f64>, Vec<f64>, Vec<SampleRef>) {
        let subject = &self.subjects[s];
        let (fm, first) = subject.model_features(self.cfg.model);
        let rows = fm
            .slice_rows(range.start - first..range.end - first)
            .into_values();
        let flow = subject.flow.as_ref().expect("checked at construction");
        let responses = flow[range.clone()].to_vec();
        let provenance = range
            .map(|sample| SampleRef { subject: s, sample })
            .collect();
        (rows, responses, provenance)
    }

    fn all_rows(&self, s: usize) -> (Matrix<f64>, Vec<f64>, Vec<SampleRef>) {
        let first = self.subjects[s].model_features(self.cfg.model).1;
        self.rows(s, first..self.subjects[s].len)
    }

    fn inter_pool(&self, sources: &[usize]) -> Result<InterPool> {
        let cols = self.subjects[sources[0]]
            .model_features(self.cfg.model)
            .0
            .cols();
        let mut features = Matrix::with_cols(cols);
        let mut responses = Vec::new();
        let mut provenance = Vec::new();
        for &s in sources {
            let (mut rows, r, p) = self.all_rows(s);
            if self.cfg.standardization == Standardization::All {
                rows = self.own_scaling[s].apply(&rows)?;
            }
            for row in rows.row_iter() {
                features.push_row(row.iter().copied());
            }
            responses.extend(r);
            provenance.extend(p);
        }
        let pool = TrainingPool::new(features, responses, provenance, Mode::Inter)?;
        Ok(InterPool { pool })
    }

    /// All windows of all predicted subjects, in subject then time order.
    pub fn jobs(&self) -> Vec<WindowJob> {
        let window_len = self.cfg.window_samples();
        self.targets
            .iter()
            .flat_map(|&s| {
                self.subjects[s]
                    .windows(window_len)
                    .into_iter()
                    .map(move |window| WindowJob { subject: s, window })
            })
            .collect()
    }

    /// Predicts one window. Jobs are independent of each other.
    pub fn run_job(&self, job: &WindowJob) -> Result<WindowOutcome> {
        let s = job.subject;
        let window = job.window;
        let subject = &self.subjects[s];
        let (fm, first) = subject.model_features(self.cfg.model);
        let lag_start = self.cfg.lag_width - 1;
        if window.start < lag_start.max(first) {
            return Ok(WindowOutcome::Skipped {
                window,
                reason: SkipReason::IncompleteLag,
            });
        }
        let raw_queries = fm
            .slice_rows(window.start - first..window.end - first)
            .into_values();

        let intra;
        let pool_raw = match self.cfg.mode {
            Mode::Intra => {
                // history strictly before the window, with a full lag
                let (rows, r, p) = self.rows(s, lag_start.max(first)..window.start);
                intra = TrainingPool::new(rows, r, p, Mode::Intra)?;
                &intra
            }
            Mode::Inter => {
                &self.inter_pools[s]
                    .as_ref()
                    .expect("built for every target")
                    .pool
            }
        };
        if pool_raw.len() < self.cfg.min_pool.max(2) {
            return Ok(WindowOutcome::Skipped {
                window,
                reason: SkipReason::InsufficientHistory {
                    pool: pool_raw.len(),
                },
            });
        }

        let scaled_pool;
        let (queries, pool) = match self.cfg.standardization {
            Standardization::Separate => {
                let params = ScalingParams::fit(pool_raw.features())?;
                scaled_pool = pool_raw.standardized(&params)?;
                (params.apply(&raw_queries)?, &scaled_pool)
            }
            Standardization::All => {
                let params = &self.own_scaling[s];
                let pool = match self.cfg.mode {
                    Mode::Intra => {
                        scaled_pool = pool_raw.standardized(params)?;
                        &scaled_pool
                    }
                    // scaled per source subject when the pool was built
                    Mode::Inter => pool_raw,
                };
                (params.apply(&raw_queries)?, pool)
            }
        };
        match self.cfg.model {
            Model::Gp => predict_window(window, &queries, pool, &self.cfg),
            Model::Lm => loclm_baseline(window, &queries, pool, &self.cfg),
        }
    }

    /// Assembles per-subject predictions from job outcomes (in any order)
    /// and scores them.
    pub fn finish(&self, outcomes: Vec<(WindowJob, WindowOutcome)>) -> Result<PipelineOutput> {
        let mut per_subject: Vec<Vec<WindowOutcome>> = vec![Vec::new(); self.subjects.len()];
        for (job, outcome) in outcomes {
            per_subject[job.subject].push(outcome);
        }
        let max_lag = match self.cfg.mode {
            Mode::Intra => None,
            Mode::Inter => Some(self.cfg.max_align_lag()),
        };
        let mut subjects = Vec::with_capacity(self.targets.len());
        for &s in &self.targets {
            let subject = &self.subjects[s];
            let mut windows = core::mem::take(&mut per_subject[s]);
            windows.sort_by_key(|o| o.window().index);
            let mut mean = vec![f64::NAN; subject.len];
            let mut sd = vec![f64::NAN; subject.len];
            for w in &windows {
                if let WindowOutcome::Predicted(p) = w {
                    mean[p.window.start..p.window.end].copy_from_slice(&p.mean);
                    sd[p.window.start..p.window.end].copy_from_slice(&p.sd);
                }
            }
            let metrics = match &subject.flow {
                Some(flow) => Some(eval::evaluate_recording(
                    &mean,
                    &sd,
                    flow,
                    subject.t0,
                    self.cfg.window_samples(),
                    max_lag,
                    &self.cfg.metric_config(),
                )?),
                None => None,
            };
            subjects.push(SubjectOutput {
                id: subject.id.clone(),
                t0: subject.t0,
                fs: subject.fs,
                windows,
                mean,
                sd,
                metrics,
            });
        }
        Ok(PipelineOutput { subjects })
    }

    /// Runs every job in order on the calling thread.
    pub fn run(&self) -> Result<PipelineOutput> {
        let mut outcomes = Vec::new();
        for job in self.jobs() {
            outcomes.push((job, self.run_job(&job)?));
        }
        self.finish(outcomes)
    }
}

/// Prepares `subjects` and runs the pipeline sequentially.
pub fn run_pipeline(subjects: &[Subject], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let prepared = subjects
        .iter()
        .map(|s| PreparedSubject::new(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Pipeline::new(prepared, cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_pool(values: &[f64]) -> TrainingPool {
        let n = values.len();
        TrainingPool::new(
            Matrix::from_vec(n, 1, values.to_vec()),
            values.to_vec(),
            (0..n)
                .map(|i| SampleRef {
                    subject: 0,
                    sample: i,
                })
                .collect(),
            Mode::Intra,
        )
        .unwrap()
    }

    #[test]
    fn knn_hand_example() {
        let pool = line_pool(&[0.0, 1.0, 2.0]);
        assert_eq!(knn_search(&[0.9], &pool, 2).unwrap(), [1, 0]);
        assert_eq!(knn_search(&[2.0], &pool, 1).unwrap(), [2]);
        assert_eq!(knn_search(&[0.0], &pool, 5).unwrap(), [0, 1, 2]);
    }

    #[test]
    fn knn_ties_keep_earlier_rows() {
        let pool = line_pool(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(knn_search(&[0.0], &pool, 3).unwrap(), [0, 1, 2]);
    }

    #[test]
    fn knn_errors() {
        let empty = line_pool(&[]);
        assert_eq!(knn_search(&[0.0], &empty, 1), Err(Error::EmptyPool));
        let pool = line_pool(&[0.0]);
        assert!(knn_search(&[0.0], &pool, 0).is_err());
        assert!(knn_search(&[0.0, 1.0], &pool, 1).is_err());
    }

    #[test]
    fn training_set_union() {
        let pool = line_pool(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let same = Matrix::from_vec(4, 1, vec![1.0; 4]);
        assert_eq!(
            build_training_set(&same, &pool, 3).unwrap().pool_indices,
            [0, 1, 2]
        );
        let apart = Matrix::from_vec(2, 1, vec![11.0, 1.0]);
        let set = build_training_set(&apart, &pool, 3).unwrap();
        assert_eq!(set.pool_indices, [0, 1, 2, 3, 4, 5]);
        assert_eq!(set.responses, [0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn linear_fit_recovers_exact_map() {
        let x = Matrix::from_fn(20, 2, |i, j| libm::sin((i * 3 + j * 7) as f64));
        let y: Vec<f64> = (0..20)
            .map(|i| 1.5 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 1)])
            .collect();
        let fit = LinearFit::fit(&x, &y).unwrap();
        assert!((fit.intercept - 1.5).abs() < 1e-10);
        assert!((fit.slope[0] - 2.0).abs() < 1e-10 && (fit.slope[1] + 0.5).abs() < 1e-10);
        assert_eq!(fit.rank, 3);
        assert!(fit.residual_se < 1e-10);
    }

    #[test]
    fn linear_fit_constant_response_and_duplicate_columns() {
        let x = Matrix::from_fn(6, 2, |i, _| i as f64);
        let fit = LinearFit::fit(&x, &[4.0; 6]).unwrap();
        assert_eq!(fit.slope, [0.0, 0.0]);
        assert_eq!(fit.predict_row(&[100.0, -3.0]), 4.0);
        let y: Vec<f64> = (0..6).map(|i| 2.0 * i as f64).collect();
        let fit = LinearFit::fit(&x, &y).unwrap();
        // minimum norm splits the slope evenly across identical columns
        assert!((fit.slope[0] - 1.0).abs() < 1e-10 && (fit.slope[1] - 1.0).abs() < 1e-10);
        assert_eq!(fit.rank, 2);
        assert!(LinearFit::fit(&Matrix::zeros(1, 2), &[1.0]).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.window_samples(), 300);
        let bad = PipelineConfig {
            harmonics: 5,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
