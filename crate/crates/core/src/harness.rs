//! Multi-restart experiments and their on-disk output.
//!
//! An experiment writes `trace_restart_{i:03}.jsonl` (one trace record per
//! line) for every restart and a `summary.json`. Floats are written in
//! shortest round-trip form, so parsing the files recovers identical values
//! and identical specs produce byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, load_csv, Dataset, GeneratorSpec};
use crate::diagnostics::TraceRecord;
use crate::engine::{run, FitError, FitResult, RunConfig, Termination};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const THREADS_ENV: &str = "TVEM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generate(GeneratorSpec),
    Csv(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Generate(spec) => generate(spec),
            DataSource::Csv(path) => load_csv(path),
        }
    }
}

fn default_restarts() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub run: RunConfig,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::config("restarts must be >= 1"));
        }
        if let DataSource::Generate(g) = &self.data {
            g.validate()?;
        }
        self.run.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Outcome of one restart as listed in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub ok: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(rename = "final_F", skip_serializing_if = "Option::is_none")]
    pub final_f: Option<f64>,
    #[serde(rename = "final_L", skip_serializing_if = "Option::is_none")]
    pub final_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean F over successful restarts at each iteration; a restart that
    /// stopped early contributes its final value to later iterations.
    #[serde(rename = "per_iter_mean_F")]
    pub per_iter_mean_f: Vec<f64>,
    #[serde(rename = "per_iter_mean_L")]
    pub per_iter_mean_l: Vec<f64>,
    /// Restart with the highest final F (lowest index on ties).
    pub best_run: usize,
    pub final_means: Vec<Vec<f64>>,
    pub config_echo: ExperimentSpec,
    pub restarts: Vec<RestartSummary>,
}

/// Restart `i` of `config` runs with `derive_seed(config.seed, i)`.
pub fn restart_config(config: &RunConfig, i: usize) -> RunConfig {
    RunConfig {
        seed: derive_seed(config.seed, i as u64),
        ..config.clone()
    }
}

/// Worker count from `TVEM_THREADS`, or `None` for the default.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Run `restarts` independent fits, ordered by restart index.
pub fn run_restarts(
    data: &Dataset,
    config: &RunConfig,
    restarts: usize,
) -> Result<Vec<std::result::Result<FitResult, FitError>>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        (0..restarts)
            .into_par_iter()
            .map(|i| run(data, &restart_config(config, i)))
            .collect()
    }))
}

/// Index of the highest final F among successful fits, lowest index on ties.
pub fn best_restart(results: &[std::result::Result<FitResult, FitError>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Ok(fit) = r {
            let f = fit.final_record().f;
            if best.is_none_or(|(_, b)| f > b) {
                best = Some((i, f));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn carried_means(traces: &[&[TraceRecord]], pick: impl Fn(&TraceRecord) -> f64) -> Vec<f64> {
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let sum: f64 = traces.iter().map(|t| pick(&t[k.min(t.len() - 1)])).sum();
            sum / traces.len() as f64
        })
        .collect()
}

/// Build the summary from restart results. Fails if every restart failed.
pub fn summarize(
    spec: &ExperimentSpec,
    results: &[std::result::Result<FitResult, FitError>],
) -> Result<Summary> {
    let best = best_restart(results).ok_or(Error::AllRestartsFailed(results.len()))?;
    let ok: Vec<&[TraceRecord]> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().map(|f| f.trace.as_slice()))
        .collect();
    let restarts = results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let seed = restart_config(&spec.run, i).seed;
            match r {
                Ok(fit) => {
                    let last = fit.final_record();
                    RestartSummary {
                        restart: i,
                        seed,
                        ok: true,
                        iterations: fit.trace.len() - 1,
                        termination: Some(fit.termination),
                        final_f: Some(last.f),
                        final_l: Some(last.l),
                        final_gap: Some(last.gap),
                        final_sigma2: Some(last.sigma2),
                        error: None,
                    }
                }
                Err(e) => RestartSummary {
                    restart: i,
                    seed,
                    ok: false,
                    iterations: e.trace.len().saturating_sub(1),
                    termination: None,
                    final_f: None,
                    final_l: None,
                    final_gap: None,
                    final_sigma2: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best_fit = results[best].as_ref().expect("best restart succeeded");
    Ok(Summary {
        per_iter_mean_f: carried_means(&ok, |r| r.f),
        per_iter_mean_l: carried_means(&ok, |r| r.l),
        best_run: best,
        final_means: best_fit.model.means().to_vec(),
        config_echo: spec.clone(),
        restarts,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Write a trace as JSON lines.
pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in trace {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Write any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn trace_file_name(restart: usize) -> String {
    format!("trace_restart_{restart:03}.jsonl")
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Everything an experiment produced, in memory.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub results: Vec<std::result::Result<FitResult, FitError>>,
}

/// Load the data, run all restarts, and write traces and the summary.
///
/// Traces of failed restarts are written up to the failing iteration. The
/// summary is written only when at least one restart succeeded.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let data = spec.data.load()?;
    fs::create_dir_all(&spec.out_dir).map_err(|e| Error::io(&spec.out_dir, e))?;
    let results = run_restarts(&data, &spec.run, spec.restarts)?;
    for (i, r) in results.iter().enumerate() {
        let trace = match r {
            Ok(fit) => &fit.trace,
            Err(e) => &e.trace,
        };
        write_trace(&spec.out_dir.join(trace_file_name(i)), trace)?;
    }
    let summary = summarize(spec, &results)?;
    write_json(&spec.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentOutcome { summary, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Algorithm;

    fn spec(dir: &Path, restarts: usize, max_iters: usize) -> ExperimentSpec {
        ExperimentSpec {
            data: DataSource::Generate(GeneratorSpec::grid(4, 20, 1.0, 3)),
            run: RunConfig {
                max_iters,
                ..RunConfig::kmeans(4, 17)
            },
            restarts,
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn single_restart_without_iterations() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&spec(dir.path(), 1, 0)).unwrap();
        let trace = read_trace(&dir.path().join(trace_file_name(0))).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(out.summary.per_iter_mean_f, vec![trace[0].f]);
        assert_eq!(out.summary.per_iter_mean_l, vec![trace[0].l]);
        assert_eq!(out.summary.best_run, 0);
    }

    #[test]
    fn outputs_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = spec(a.path(), 3, 50);
        let sb = ExperimentSpec {
            out_dir: b.path().to_path_buf(),
            ..sa.clone()
        };
        let oa = run_experiment(&sa).unwrap();
        let ob = run_experiment(&sb).unwrap();
        assert_eq!(oa.summary.best_run, ob.summary.best_run);
        for i in 0..3 {
            let name = trace_file_name(i);
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap()
            );
        }
        let seeds: std::collections::HashSet<u64> = oa.summary.restarts.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 3);
        let best_f = oa.summary.restarts[oa.summary.best_run].final_f.unwrap();
        assert!(oa.summary.restarts.iter().all(|r| r.final_f.unwrap() <= best_f));
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&spec(dir.path(), 1, 20)).unwrap();
        let back = read_trace(&dir.path().join(trace_file_name(0))).unwrap();
        assert_eq!(&back, &out.results[0].as_ref().unwrap().trace);
    }

    #[test]
    fn summary_echoes_spec() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(dir.path(), 2, 5);
        run_experiment(&s).unwrap();
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let echo: ExperimentSpec = serde_json::from_value(v["config_echo"].clone()).unwrap();
        assert_eq!(echo, s);
        for key in ["per_iter_mean_F", "per_iter_mean_L", "best_run", "final_means"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn carry_forward_of_short_traces() {
        let rec = |f: f64| TraceRecord {
            iter: 0,
            j: 0.0,
            f,
            l: f,
            gap: 0.0,
            sigma2: 1.0,
            n_changed: 0,
            events: vec![],
        };
        let a = vec![rec(-3.0), rec(-2.0)];
        let b = vec![rec(-5.0), rec(-4.0), rec(-1.0)];
        assert_eq!(carried_means(&[&a, &b], |r| r.f), vec![-4.0, -3.0, -1.5]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path(), 0, 5);
        assert!(matches!(run_experiment(&s), Err(Error::Config(_))));
        s.restarts = 1;
        s.run.algorithm = Algorithm::KmeansCprime;
        assert!(matches!(run_experiment(&s), Err(Error::Config(_))));
    }

    #[test]
    fn spec_json_shape() {
        let s: ExperimentSpec = serde_json::from_str(
            r#"{"data":{"csv":"points.csv"},"run":{"algorithm":"lazy_kmeans","c":3,"epsilon":0.2},"out_dir":"out"}"#,
        )
        .unwrap();
        assert_eq!(s.restarts, 1);
        assert_eq!(s.data, DataSource::Csv(PathBuf::from("points.csv")));
    }
}
