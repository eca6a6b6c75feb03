//! Bounded Nelder–Mead simplex search (maximization).

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values across the simplex falls below
    /// `f_tol * (1 + |best|)` and its diameter below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 200,
            f_tol: 1e-9,
            x_tol: 1e-4,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Maximizes `f` over the box `[lower, upper]` starting from `start`.
///
/// Trial points are projected onto the box. Non-finite objective values are
/// treated as `-inf`. The returned value is never below `f(start)`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = start.len();
    assert!(lower.len() == n && upper.len() == n);
    let clamp = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].max(lower[i]).min(upper[i]);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut x0 = start.to_vec();
    clamp(&mut x0);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for i in 0..n {
        let mut x = x0.clone();
        // step away from the nearer bound so the vertex stays distinct
        let step = opts.initial_step;
        x[i] = if x[i] + step <= upper[i] {
            x[i] + step
        } else {
            x[i] - step
        };
        clamp(&mut x);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        // best first; stable sort keeps earlier vertices ahead on ties
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = if best.is_finite() && worst.is_finite() {
            best - worst
        } else {
            f64::INFINITY
        };
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| max_abs_diff(x, &simplex[0].0))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol * (1.0 + best.abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += x[i] / n as f64;
            }
        }
        let toward = |coef: f64| {
            let mut p: Vec<f64> = (0..n)
                .map(|i| centroid[i] + coef * (simplex[n].0[i] - centroid[i]))
                .collect();
            clamp(&mut p);
            p
        };

        let xr = toward(-1.0);
        let vr = eval(&xr, &mut evals);
        if vr > simplex[0].1 {
            let xe = toward(-2.0);
            let ve = eval(&xe, &mut evals);
            simplex[n] = if ve > vr { (xe, ve) } else { (xr, vr) };
            continue;
        }
        if vr > simplex[n - 1].1 {
            simplex[n] = (xr, vr);
            continue;
        }
        let (xc, vc) = if vr > simplex[n].1 {
            let xc = toward(-0.5);
            let vc = eval(&xc, &mut evals);
            (xc, vc)
        } else {
            let xc = toward(0.5);
            let vc = eval(&xc, &mut evals);
            (xc, vc)
        };
        if vc > simplex[n].1.max(vr) {
            simplex[n] = (xc, vc);
            continue;
        }
        // shrink toward the best vertex
        let xb = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = (0..n).map(|i| xb[i] + 0.5 * (v.0[i] - xb[i])).collect();
            clamp(&mut p);
            v.1 = eval(&p, &mut evals);
            v.0 = p;
        }
    }

    simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evaluations: evals,
        converged,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}
