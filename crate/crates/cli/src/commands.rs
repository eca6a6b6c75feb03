use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use breathtrace_core::eval::evaluate_recording;
use breathtrace_core::locgp::{Mode, Pipeline, PipelineConfig, PreparedSubject, Subject, WindowOutcome};
use breathtrace_core::signal::resample;
use breathtrace_core::synth::{gen_coupled_subject, CoupledConfig};
use rayon::prelude::*;

use crate::config::{expected_input_rate, validate};
use crate::data::{ingest_csv, subject_id, write_recording};
use crate::error::{from_pipeline_setup, CliError, Result};
use crate::summary::{Medians, SubjectSummary, Summary};
use crate::table::{prediction_table, read_predictions, write_metrics, write_table, MetricRow, Table};

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn predictions_file(id: &str) -> String {
    format!("{id}_predictions.csv")
}

pub fn harmonics_file(id: &str) -> String {
    format!("{id}_harmonics.csv")
}

pub fn features_file(id: &str) -> String {
    format!("{id}_features.csv")
}

/// Settings for [`synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub subjects: usize,
    pub duration_s: f64,
    pub flow_noise_sd: f64,
    pub movement_noise_sd: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            subjects: 1,
            duration_s: 1200.0,
            flow_noise_sd: 0.0,
            movement_noise_sd: 0.0,
        }
    }
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    if jobs == Some(0) {
        return Err(CliError::Argument("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Argument(format!("cannot start worker pool: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_subjects(data: &[PathBuf], cfg: &PipelineConfig) -> Result<Vec<Subject>> {
    if data.is_empty() {
        return Err(CliError::Argument("no data files given".into()));
    }
    let mut seen = HashSet::new();
    for path in data {
        let id = subject_id(path);
        if !seen.insert(id.clone()) {
            return Err(CliError::Argument(format!("subject id `{id}` appears twice")));
        }
    }
    let rate = expected_input_rate(cfg);
    data.iter().map(|p| ingest_csv(p, rate)).collect()
}

fn prepare(subjects: &[Subject], cfg: &PipelineConfig, pool: &rayon::ThreadPool) -> Result<Vec<PreparedSubject>> {
    pool.install(|| {
        subjects
            .par_iter()
            .map(|s| PreparedSubject::new(s, cfg).map_err(CliError::Numeric))
            .collect()
    })
}

/// Writes per-subject harmonic and feature tables.
pub fn decompose(cfg: &PipelineConfig, data: &[PathBuf], out_dir: &Path, jobs: Option<usize>) -> Result<Summary> {
    validate(cfg)?;
    let pool = thread_pool(jobs)?;
    let subjects = load_subjects(data, cfg)?;
    let prepared = prepare(&subjects, cfg, &pool)?;
    create_dir(out_dir)?;
    let mut summary = Summary::new("decompose", cfg);
    for p in &prepared {
        let t: Vec<f64> = (0..p.len).map(|i| p.t0 + i as f64 / p.fs).collect();
        let mut header = vec!["t".to_string(), "abd_if_hz".into(), "tho_if_hz".into()];
        let mut columns = vec![t.clone(), p.abd.ridge.if_hz.clone(), p.tho.ridge.if_hz.clone()];
        for (channel, dec) in [("abd", &p.abd), ("tho", &p.tho)] {
            for c in &dec.components {
                let k = c.harmonic;
                header.extend([format!("{channel}_amp{k}"), format!("{channel}_cos{k}"), format!("{channel}_sin{k}")]);
                columns.extend([c.amplitude.clone(), c.phase_cos.clone(), c.phase_sin.clone()]);
            }
        }
        write_table(&out_dir.join(harmonics_file(&p.id)), &Table::new(header, columns))?;

        let mut header = vec!["t".to_string()];
        header.extend(p.features.names().iter().cloned());
        let mut columns = vec![t];
        for c in 0..p.features.cols() {
            columns.push(p.features.values().row_iter().map(|r| r[c]).collect());
        }
        write_table(&out_dir.join(features_file(&p.id)), &Table::new(header, columns))?;
        summary.subjects.push(SubjectSummary::new(&p.id, p.len));
    }
    summary.write(&out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

/// Runs the prediction pipeline and writes predictions, per-window metrics
/// and the summary.
pub fn predict(cfg: &PipelineConfig, data: &[PathBuf], out_dir: &Path, jobs: Option<usize>) -> Result<Summary> {
    validate(cfg)?;
    let pool = thread_pool(jobs)?;
    let subjects = load_subjects(data, cfg)?;
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    let prepared = prepare(&subjects, cfg, &pool)?;
    let pipeline = Pipeline::new(prepared, cfg.clone()).map_err(|e| from_pipeline_setup(e, &ids))?;
    let jobs = pipeline.jobs();
    let outcomes = pool
        .install(|| {
            jobs.par_iter()
                .map(|j| pipeline.run_job(j).map(|o| (*j, o)))
                .collect::<breathtrace_core::Result<Vec<_>>>()
        })
        .map_err(CliError::Numeric)?;
    let output = pipeline.finish(outcomes).map_err(CliError::Numeric)?;

    create_dir(out_dir)?;
    let mut summary = Summary::new("predict", cfg);
    let mut all_rows = Vec::new();
    for s in &output.subjects {
        write_table(
            &out_dir.join(predictions_file(&s.id)),
            &prediction_table(s.t0, s.fs, &s.mean, &s.sd),
        )?;
        let predicted = s.windows.iter().filter(|w| matches!(w, WindowOutcome::Predicted(_))).count();
        let mut entry = SubjectSummary::new(&s.id, s.mean.len());
        entry.predicted_windows = Some(predicted);
        entry.skipped_windows = Some(s.windows.len() - predicted);
        if let Some(m) = &s.metrics {
            let rows: Vec<MetricRow> = m.windows.iter().map(|w| MetricRow::new(&s.id, w)).collect();
            entry.scored_windows = Some(rows.len());
            entry.alignment_lag_samples = Some(m.lag);
            entry.medians = Some(Medians::of(&rows));
            all_rows.extend(rows);
        }
        summary.subjects.push(entry);
    }
    finish_scored(summary, &all_rows, out_dir)
}

fn finish_scored(mut summary: Summary, rows: &[MetricRow], out_dir: &Path) -> Result<Summary> {
    write_metrics(&out_dir.join(METRICS_FILE), rows)?;
    summary.medians = Some(Medians::of(rows));
    summary.write(&out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

/// Rescores prediction files from `predictions_dir` against the flow in
/// `data`, exactly as [`predict`] scores them.
pub fn evaluate(cfg: &PipelineConfig, data: &[PathBuf], predictions_dir: &Path, out_dir: &Path) -> Result<Summary> {
    validate(cfg)?;
    let subjects = load_subjects(data, cfg)?;
    let max_lag = match cfg.mode {
        Mode::Intra => None,
        Mode::Inter => Some(cfg.max_align_lag()),
    };
    let mut summary = Summary::new("evaluate", cfg);
    let mut all_rows = Vec::new();
    for s in &subjects {
        let flow = s.flow.as_ref().ok_or_else(|| CliError::MissingFlow(s.id.clone()))?;
        let flow = resample(flow, cfg.sampling_rate_hz).map_err(CliError::Numeric)?.into_samples();
        let path = predictions_dir.join(predictions_file(&s.id));
        let table = read_predictions(&path)?;
        if table.rows() != flow.len() {
            return Err(CliError::Mismatch {
                path,
                reason: format!("{} predictions for {} flow samples", table.rows(), flow.len()),
            });
        }
        let t = table.column("t").expect("checked on read");
        let mean = table.column("mean").expect("checked on read");
        let sd = table.column("sd").expect("checked on read");
        let metrics = evaluate_recording(mean, sd, &flow, t[0], cfg.window_samples(), max_lag, &cfg.metric_config())
            .map_err(CliError::Numeric)?;
        let rows: Vec<MetricRow> = metrics.windows.iter().map(|w| MetricRow::new(&s.id, w)).collect();
        let mut entry = SubjectSummary::new(&s.id, flow.len());
        entry.scored_windows = Some(rows.len());
        entry.alignment_lag_samples = Some(metrics.lag);
        entry.medians = Some(Medians::of(&rows));
        summary.subjects.push(entry);
        all_rows.extend(rows);
    }
    create_dir(out_dir)?;
    finish_scored(summary, &all_rows, out_dir)
}

/// Generates coupled synthetic recordings; subject `i` (from 0) uses seed
/// `cfg.seed + i`.
pub fn synth(cfg: &PipelineConfig, opts: &SynthOptions, out_dir: &Path) -> Result<Summary> {
    validate(cfg)?;
    if opts.subjects == 0 {
        return Err(CliError::Argument("--subjects must be at least 1".into()));
    }
    let coupled = CoupledConfig {
        fs: cfg.sampling_rate_hz,
        duration_s: opts.duration_s,
        flow_noise_sd: opts.flow_noise_sd,
        movement_noise_sd: opts.movement_noise_sd,
        ..CoupledConfig::default()
    };
    create_dir(out_dir)?;
    let mut summary = Summary::new("synth", cfg);
    for i in 0..opts.subjects {
        let seed = cfg.seed.wrapping_add(i as u64);
        let id = format!("subject_{:02}", i + 1);
        let s = gen_coupled_subject(seed, &coupled).map_err(|e| match e {
            breathtrace_core::Error::InvalidParameter { .. } => CliError::Argument(e.to_string()),
            other => CliError::Numeric(other),
        })?;
        let subject = Subject::new(id.as_str(), Some(s.flow), s.abd.signal, s.tho.signal).map_err(CliError::Numeric)?;
        write_recording(&out_dir.join(format!("{id}.csv")), &subject)?;
        let mut entry = SubjectSummary::new(&id, subject.abd.len());
        entry.seed = Some(seed);
        summary.subjects.push(entry);
    }
    summary.write(&out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}
