use breathtrace_core::eval::rmse_reduction;
use breathtrace_core::locgp::{
    knn_search, loclm_baseline, predict_window, run_pipeline, Mode, Model, Pipeline,
    PipelineConfig, PreparedSubject, SampleRef, SkipReason, Standardization, Subject, TrainingPool,
    WindowOutcome, WindowSpan,
};
use breathtrace_core::synth::{gen_coupled_subject, CoupledConfig};
use breathtrace_core::{Matrix, TimeSeries};
use proptest::prelude::*;

fn subject(id: &str, seed: u64, seconds: f64) -> Subject {
    let cfg = CoupledConfig {
        duration_s: seconds,
        ..Default::default()
    };
    let s = gen_coupled_subject(seed, &cfg).unwrap();
    Subject::new(id, Some(s.flow), s.abd.signal, s.tho.signal).unwrap()
}

fn with_flow(s: &Subject, f: impl Fn(usize, f64) -> f64) -> Subject {
    let flow = s.flow.as_ref().unwrap();
    let samples = flow
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| f(i, *v))
        .collect();
    let flow = TimeSeries::new(samples, flow.fs(), flow.t0()).unwrap();
    Subject::new(s.id.clone(), Some(flow), s.abd.clone(), s.tho.clone()).unwrap()
}

fn predictions(out: &[WindowOutcome]) -> Vec<(usize, Vec<f64>)> {
    out.iter()
        .filter_map(|w| match w {
            WindowOutcome::Predicted(p) => Some((p.window.index, p.mean.clone())),
            WindowOutcome::Skipped { .. } => None,
        })
        .collect()
}

fn pool(features: Matrix<f64>, responses: Vec<f64>) -> TrainingPool {
    let provenance = (0..responses.len())
        .map(|sample| SampleRef { subject: 0, sample })
        .collect();
    TrainingPool::new(features, responses, provenance, Mode::Intra).unwrap()
}

fn span(len: usize) -> WindowSpan {
    WindowSpan {
        index: 0,
        start: 0,
        end: len,
        t_start: 0.0,
        t_end: len as f64,
    }
}

#[test]
fn intra_run_skips_the_first_window_and_grows_the_pool() {
    let cfg = PipelineConfig::default();
    let out = run_pipeline(&[subject("s", 1, 150.0)], &cfg).unwrap();
    let s = &out.subjects[0];
    assert_eq!(s.windows.len(), 5);
    assert_eq!(
        s.windows[0],
        WindowOutcome::Skipped {
            window: *s.windows[0].window(),
            reason: SkipReason::IncompleteLag
        }
    );
    assert!(s.mean[..300].iter().all(|v| v.is_nan()));
    let mut last_pool = 0;
    for w in &s.windows[1..] {
        let WindowOutcome::Predicted(p) = w else {
            panic!("window {} skipped", w.window().index)
        };
        // history from the first fully lagged sample up to the window
        assert_eq!(p.pool_size, p.window.start - (cfg.lag_width - 1));
        assert!(p.pool_size > last_pool);
        last_pool = p.pool_size;
        assert!(p.training_size <= p.pool_size);
        assert!(p.sd.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    let metrics = s.metrics.as_ref().unwrap();
    assert_eq!(metrics.lag, 0);
    assert_eq!(metrics.windows.len(), 4);
    let (rr, _, _) = out.medians();
    assert!(rr.unwrap() > 0.5, "{rr:?}");
}

#[test]
fn small_history_is_reported_instead_of_predicted() {
    let cfg = PipelineConfig {
        min_pool: 400,
        ..Default::default()
    };
    let out = run_pipeline(&[subject("s", 1, 90.0)], &cfg).unwrap();
    let reasons: Vec<Option<SkipReason>> = out.subjects[0]
        .windows
        .iter()
        .map(|w| match w {
            WindowOutcome::Skipped { reason, .. } => Some(*reason),
            WindowOutcome::Predicted(_) => None,
        })
        .collect();
    assert_eq!(
        reasons,
        [
            Some(SkipReason::IncompleteLag),
            Some(SkipReason::InsufficientHistory { pool: 291 }),
            None
        ]
    );
}

#[test]
fn intra_predictions_never_see_future_flow() {
    let cfg = PipelineConfig {
        model: Model::Lm,
        ..Default::default()
    };
    let base = subject("s", 2, 150.0);
    let tampered = with_flow(&base, |i, v| if i >= 900 { v + 50.0 } else { v });
    let a = run_pipeline(&[base], &cfg).unwrap();
    let b = run_pipeline(&[tampered], &cfg).unwrap();
    let (pa, pb) = (
        predictions(&a.subjects[0].windows),
        predictions(&b.subjects[0].windows),
    );
    assert_eq!(pa.len(), 4);
    for (x, y) in pa.iter().zip(&pb) {
        if x.0 <= 3 {
            assert_eq!(x, y, "window {}", x.0);
        } else {
            assert_ne!(x, y);
        }
    }
}

#[test]
fn leave_one_out_pools_exclude_the_predicted_subject() {
    let cfg = PipelineConfig {
        model: Model::Lm,
        mode: Mode::Inter,
        ..Default::default()
    };
    let subjects = [
        subject("a", 3, 90.0),
        subject("b", 4, 90.0),
        subject("c", 5, 90.0),
    ];
    let base = run_pipeline(&subjects, &cfg).unwrap();
    assert_eq!(base.subjects.len(), 3);
    for s in &base.subjects {
        for w in &s.windows {
            let WindowOutcome::Predicted(p) = w else {
                continue;
            };
            assert_eq!(p.pool_size, 1800);
        }
    }
    // changing a's flow cannot move a's own predictions, only the others'
    let mut tampered = subjects.clone();
    tampered[0] = with_flow(&subjects[0], |_, v| -3.0 * v);
    let moved = run_pipeline(&tampered, &cfg).unwrap();
    assert_eq!(
        predictions(&base.subjects[0].windows),
        predictions(&moved.subjects[0].windows)
    );
    assert_ne!(
        predictions(&base.subjects[1].windows),
        predictions(&moved.subjects[1].windows)
    );
}

#[test]
fn explicit_training_subjects_and_gp_inter_run() {
    let cfg = PipelineConfig {
        mode: Mode::Inter,
        train_subjects: vec!["a".into()],
        test_subjects: vec!["b".into()],
        ..Default::default()
    };
    let out = run_pipeline(&[subject("a", 6, 90.0), subject("b", 7, 90.0)], &cfg).unwrap();
    assert_eq!(out.subjects.len(), 1);
    assert_eq!(out.subjects[0].id, "b");
    let predicted = predictions(&out.subjects[0].windows);
    assert_eq!(predicted.iter().map(|p| p.0).collect::<Vec<_>>(), [1, 2]);
    let (rr, drr, cov) = out.medians();
    assert!(rr.is_some() && drr.is_some() && cov.is_some());
}

#[test]
fn pipeline_is_deterministic() {
    let cfg = PipelineConfig {
        standardization: Standardization::All,
        ..Default::default()
    };
    let subjects = [subject("s", 8, 90.0)];
    let a = run_pipeline(&subjects, &cfg).unwrap();
    let b = run_pipeline(&subjects, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.subjects[0].mean), bits(&b.subjects[0].mean));
    assert_eq!(bits(&a.subjects[0].sd), bits(&b.subjects[0].sd));
}

#[test]
fn jobs_can_run_in_any_order() {
    let cfg = PipelineConfig {
        model: Model::Lm,
        ..Default::default()
    };
    let prepared = vec![PreparedSubject::new(&subject("s", 9, 120.0), &cfg).unwrap()];
    let pipeline = Pipeline::new(prepared, cfg).unwrap();
    let in_order = pipeline.run().unwrap();
    let mut jobs = pipeline.jobs();
    jobs.reverse();
    let outcomes = jobs
        .iter()
        .map(|j| (*j, pipeline.run_job(j).unwrap()))
        .collect();
    let shuffled = pipeline.finish(outcomes).unwrap();
    assert_eq!(in_order.subjects[0].windows, shuffled.subjects[0].windows);
    assert_eq!(in_order.subjects[0].metrics, shuffled.subjects[0].metrics);
}

#[test]
fn inconsistent_inputs_are_rejected() {
    let s = subject("s", 1, 60.0);
    let short = TimeSeries::new(s.tho.samples()[..500].to_vec(), 10.0, 0.0).unwrap();
    assert!(Subject::new("x", None, s.abd.clone(), short).is_err());
    let late = TimeSeries::new(s.tho.samples().to_vec(), 10.0, 1.0).unwrap();
    assert!(Subject::new("x", None, s.abd.clone(), late).is_err());

    let cfg = PipelineConfig::default();
    let no_flow = Subject::new("n", None, s.abd.clone(), s.tho.clone()).unwrap();
    assert!(run_pipeline(std::slice::from_ref(&no_flow), &cfg).is_err());
    let inter = PipelineConfig {
        mode: Mode::Inter,
        model: Model::Lm,
        ..cfg.clone()
    };
    // the flowless subject would have to serve as training data for `s`
    assert!(run_pipeline(&[s.clone(), no_flow.clone()], &inter).is_err());
    // but it can be predicted from `s` alone
    let targeted = PipelineConfig {
        train_subjects: vec!["s".into()],
        ..inter.clone()
    };
    let out = run_pipeline(&[s.clone(), no_flow], &targeted).unwrap();
    assert!(out.subjects[0].metrics.is_none());
    assert!(out.subjects[0].mean.iter().any(|v| v.is_finite()));

    let overlap = PipelineConfig {
        train_subjects: vec!["s".into()],
        test_subjects: vec!["s".into()],
        ..inter.clone()
    };
    assert!(run_pipeline(std::slice::from_ref(&s), &overlap).is_err());
    let unknown = PipelineConfig {
        test_subjects: vec!["ghost".into()],
        ..inter
    };
    assert!(run_pipeline(std::slice::from_ref(&s), &unknown).is_err());
    let aliased = PipelineConfig {
        harmonics: 5,
        ..cfg
    };
    assert!(aliased.validate().is_err());
}

#[test]
fn window_containing_its_own_pool_rows_is_interpolated() {
    let n = 120;
    let x = Matrix::from_fn(n, 3, |i, j| ((i * (j + 3) * 7919) % 101) as f64 / 25.0);
    let y: Vec<f64> = (0..n)
        .map(|i| (x[(i, 0)] - 0.5 * x[(i, 1)]).sin() + 0.2 * x[(i, 2)])
        .collect();
    let queries = Matrix::from_fn(30, 3, |i, j| x[(i + 40, j)]);
    let cfg = PipelineConfig::default();
    let WindowOutcome::Predicted(p) =
        predict_window(span(30), &queries, &pool(x, y.clone()), &cfg).unwrap()
    else {
        panic!("skipped")
    };
    for (m, t) in p.mean.iter().zip(&y[40..70]) {
        assert!((m - t).abs() < 1e-3, "{m} vs {t}");
    }
    assert!(predict_window(span(31), &queries, &pool(Matrix::zeros(0, 3), vec![]), &cfg).is_err());
}

#[test]
fn local_linear_model_recovers_linear_flow() {
    let n = 400;
    let x = Matrix::from_fn(n, 4, |i, j| {
        (((i + 1) * (j + 2) * 104_729) % 997) as f64 / 100.0
    });
    let y: Vec<f64> = (0..n)
        .map(|i| 0.3 + x[(i, 0)] - 2.0 * x[(i, 1)] + 0.5 * x[(i, 3)])
        .collect();
    let queries = Matrix::from_fn(50, 4, |i, j| x[(i, j)]);
    let cfg = PipelineConfig {
        neighbors: 5,
        ..Default::default()
    };
    let WindowOutcome::Predicted(p) =
        loclm_baseline(span(50), &queries, &pool(x, y.clone()), &cfg).unwrap()
    else {
        panic!("skipped")
    };
    assert!(rmse_reduction(&p.mean, &y[..50]).unwrap() >= 0.999);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_exhaustive_sort(
        rows in prop::collection::vec(prop::collection::vec(-3i32..3, 2), 1..60),
        query in prop::collection::vec(-3.0f64..3.0, 2),
        k in 1usize..10,
    ) {
        let n = rows.len();
        let x = Matrix::from_fn(n, 2, |i, j| rows[i][j] as f64);
        let p = pool(x.clone(), vec![0.0; n]);
        let dist = |i: usize| (x[(i, 0)] - query[0]).powi(2) + (x[(i, 1)] - query[1]).powi(2);
        let mut expected: Vec<usize> = (0..n).collect();
        expected.sort_by(|a, b| dist(*a).total_cmp(&dist(*b)).then(a.cmp(b)));
        expected.truncate(k);
        prop_assert_eq!(knn_search(&query, &p, k).unwrap(), expected);
    }
}
