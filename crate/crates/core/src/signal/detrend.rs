use alloc::vec::Vec;

use super::TimeSeries;
use crate::error::{Error, Result};

const MIN_SUPPORT: usize = 7;

/// Removes a locally weighted quadratic trend.
///
/// At every sample a degree-2 polynomial is fitted by weighted least squares
/// to the `round(span_seconds * fs)` samples centred on it (the window slides
/// inward at the edges), with tricube weights in the distance from the
/// sample. The trend is the fitted value at the sample itself.
pub fn detrend_local_quadratic(ts: &TimeSeries, span_seconds: f64) -> Result<TimeSeries> {
    let x = ts.samples();
    let n = x.len();
    let span = libm::round(span_seconds * ts.fs());
    if !(span >= MIN_SUPPORT as f64) {
        return Err(Error::invalid(
            "span_seconds",
            alloc::format!("span covers {span} samples, need at least {MIN_SUPPORT}"),
        ));
    }
    if n < 3 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    let q = (span as usize).min(n);

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(q / 2).min(n - q);
        let hi = lo + q;
        let reach = (i - lo).max(hi - 1 - i) as f64 + 1.0;
        // normal equations of [1, u, u^2] in u = (j - i) / reach
        let mut s = [0.0f64; 5];
        let mut r = [0.0f64; 3];
        for (j, &xj) in x.iter().enumerate().take(hi).skip(lo) {
            let u = (j as f64 - i as f64) / reach;
            let au = u.abs();
            let a = 1.0 - au * au * au;
            let w = a * a * a;
            let u2 = u * u;
            s[0] += w;
            s[1] += w * u;
            s[2] += w * u2;
            s[3] += w * u2 * u;
            s[4] += w * u2 * u2;
            r[0] += w * xj;
            r[1] += w * u * xj;
            r[2] += w * u2 * xj;
        }
        let trend = solve3_first(
            [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]],
            r,
        );
        out.push(x[i] - trend);
    }
    Ok(ts.with_samples(out))
}

/// First component of the solution of a 3x3 system (Cramer's rule).
fn solve3_first(m: [[f64; 3]; 3], r: [f64; 3]) -> f64 {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut m0 = m;
    for k in 0..3 {
        m0[k][0] = r[k];
    }
    det(m0) / d
}
