//! Harmonic-representation covariates: per-sample amplitude and phase of
//! each harmonic on both channels, the lag map, and column scaling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ridge::HarmonicComponent;

/// Columns contributed by one harmonic: amplitude, cosine and sine of the
/// phase, each for ABD then THO.
pub const COLUMNS_PER_HARMONIC: usize = 6;

/// Columns with a standard deviation below this are centred only.
pub const MIN_SD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Lagged { width: usize },
    Standardized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Matrix<f64>,
    names: Vec<String>,
    stage: Stage,
}

impl FeatureMatrix {
    /// Wraps raw values. Fails on a name/column mismatch or non-finite cells.
    pub fn new(values: Matrix<f64>, names: Vec<String>, stage: Stage) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                values.cols()
            )));
        }
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FeatureMatrix {
            values,
            names,
            stage,
        })
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<f64> {
        self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }

    /// Copy of rows `range`, keeping names and stage.
    pub fn slice_rows(&self, range: core::ops::Range<usize>) -> FeatureMatrix {
        let cols = self.cols();
        let data = self.values.as_slice()[range.start * cols..range.end * cols].to_vec();
        FeatureMatrix {
            values: Matrix::from_vec(range.len(), cols, data),
            names: self.names.clone(),
            stage: self.stage,
        }
    }
}

/// Column names for `harmonics` harmonics, in feature order.
pub fn feature_names(harmonics: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(harmonics * COLUMNS_PER_HARMONIC);
    for k in 1..=harmonics {
        for element in ["amp", "cos", "sin"] {
            for channel in ["abd", "tho"] {
                names.push(format!("{channel}_{element}{k}"));
            }
        }
    }
    names
}

/// Builds one row per sample. For harmonic `k` the columns are
/// `[abd_amp, tho_amp, abd_cos, tho_cos, abd_sin, tho_sin]`, harmonics in
/// increasing order.
pub fn harmonic_features(
    abd: &[HarmonicComponent],
    tho: &[HarmonicComponent],
) -> Result<FeatureMatrix> {
    if abd.is_empty() || abd.len() != tho.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ABD harmonics vs {} THO harmonics",
            abd.len(),
            tho.len()
        )));
    }
    let n = abd[0].len();
    if let Some(c) = abd.iter().chain(tho).find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "harmonic {} has {} samples, expected {n}",
            c.harmonic,
            c.len()
        )));
    }
    let cols = abd.len() * COLUMNS_PER_HARMONIC;
    let mut data = Vec::with_capacity(n * cols);
    for l in 0..n {
        for (a, t) in abd.iter().zip(tho) {
            data.extend_from_slice(&[
                a.amplitude[l],
                t.amplitude[l],
                a.phase_cos[l],
                t.phase_cos[l],
                a.phase_sin[l],
                t.phase_sin[l],
            ]);
        }
    }
    FeatureMatrix::new(
        Matrix::from_vec(n, cols, data),
        feature_names(abd.len()),
        Stage::Raw,
    )
}

/// Concatenates rows `l-width+1..=l` for every `l >= width-1`, oldest first.
/// The output has `rows - width + 1` rows; its row `i` ends at input row
/// `i + width - 1`.
pub fn lag_embed(fm: &FeatureMatrix, width: usize) -> Result<FeatureMatrix> {
    if width == 0 {
        return Err(Error::invalid("width", "must be at least 1"));
    }
    if fm.rows() < width {
        return Err(Error::TooShort {
            needed: width,
            got: fm.rows(),
        });
    }
    let cols = fm.cols();
    let rows = fm.rows() - width + 1;
    let src = fm.values.as_slice();
    let mut data = Vec::with_capacity(rows * cols * width);
    for i in 0..rows {
        data.extend_from_slice(&src[i * cols..(i + width) * cols]);
    }
    let mut names = Vec::with_capacity(cols * width);
    for d in (0..width).rev() {
        names.extend(fm.names.iter().map(|n| format!("{n}_lag{d}")));
    }
    Ok(FeatureMatrix {
        values: Matrix::from_vec(rows, cols * width, data),
        names,
        stage: Stage::Lagged { width },
    })
}

/// Per-column centring and scaling.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingParams {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub sd: Vec<f64>,
    /// Columns whose fitted deviation fell below [`MIN_SD`].
    pub constant: Vec<bool>,
}

impl ScalingParams {
    /// Fits population mean and standard deviation per column.
    pub fn fit(values: &Matrix<f64>) -> Result<Self> {
        if values.cols() == 0 {
            return Err(Error::Empty);
        }
        if values.rows() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: values.rows(),
            });
        }
        let n = values.rows() as f64;
        let cols = values.cols();
        let mut mean = alloc::vec![0.0; cols];
        for row in values.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut ss = alloc::vec![0.0; cols];
        for row in values.row_iter() {
            for ((s, v), m) in ss.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut sd = Vec::with_capacity(cols);
        let mut constant = Vec::with_capacity(cols);
        for s in ss {
            let d = libm::sqrt(s / n);
            constant.push(d < MIN_SD);
            sd.push(if d < MIN_SD { 1.0 } else { d });
        }
        Ok(ScalingParams { mean, sd, constant })
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.sd) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, values: &Matrix<f64>) -> Result<Matrix<f64>> {
        if values.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for {}-column scaling",
                values.cols(),
                self.mean.len()
            )));
        }
        let mut out = values.clone();
        for r in 0..values.rows() {
            self.apply_row(values.row(r), out.row_mut(r));
        }
        Ok(out)
    }
}

/// Standardizes `fm` with `params`, or with parameters fitted on `fm` itself
/// when `params` is `None`.
pub fn standardize(
    fm: &FeatureMatrix,
    params: Option<&ScalingParams>,
) -> Result<(FeatureMatrix, ScalingParams)> {
    if fm.rows() == 0 || fm.cols() == 0 {
        return Err(Error::Empty);
    }
    let params = match params {
        Some(p) => p.clone(),
        None => ScalingParams::fit(&fm.values)?,
    };
    let values = params.apply(&fm.values)?;
    Ok((
        FeatureMatrix {
            values,
            names: fm.names.clone(),
            stage: Stage::Standardized,
        },
        params,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn raw(rows: usize, cols: usize, data: Vec<f64>) -> FeatureMatrix {
        let names = (0..cols).map(|c| format!("c{c}")).collect();
        FeatureMatrix::new(Matrix::from_vec(rows, cols, data), names, Stage::Raw).unwrap()
    }

    #[test]
    fn names_follow_column_order() {
        let n = feature_names(4);
        assert_eq!(n.len(), 24);
        assert_eq!(
            &n[..6],
            ["abd_amp1", "tho_amp1", "abd_cos1", "tho_cos1", "abd_sin1", "tho_sin1"]
        );
        assert_eq!(n[23], "tho_sin4");
    }

    #[test]
    fn lag_embed_shapes() {
        let fm = raw(4, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(lag_embed(&fm, 1).unwrap().values(), fm.values());
        let lagged = lag_embed(&fm, 3).unwrap();
        assert_eq!(lagged.rows(), 2);
        assert_eq!(lagged.row(1), [2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(lagged.names()[0], "c0_lag2");
        assert_eq!(lagged.names()[5], "c1_lag0");
        assert!(matches!(lag_embed(&fm, 5), Err(Error::TooShort { .. })));
    }

    #[test]
    fn standardize_hand_example() {
        let fm = raw(2, 1, vec![1.0, 3.0]);
        let (z, p) = standardize(&fm, None).unwrap();
        assert_eq!(z.values().as_slice(), [-1.0, 1.0]);
        assert_eq!((p.mean[0], p.sd[0]), (2.0, 1.0));
    }

    #[test]
    fn constant_column_is_centred_and_flagged() {
        let fm = raw(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]);
        let (z, p) = standardize(&fm, None).unwrap();
        assert_eq!(p.constant, [true, false]);
        assert_eq!(z.values()[(0, 0)], 0.0);
    }

    #[test]
    fn standardize_rejects_empty_and_single_row_fit() {
        let empty = raw(0, 1, vec![]);
        assert_eq!(standardize(&empty, None).unwrap_err(), Error::Empty);
        let single = raw(1, 1, vec![1.0]);
        assert!(matches!(
            standardize(&single, None),
            Err(Error::TooShort { .. })
        ));
    }
}
