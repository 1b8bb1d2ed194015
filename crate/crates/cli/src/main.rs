//! `tvem`: generate data, fit one run, run multi-restart experiments, and
//! audit a fitted model against a dataset.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or input-file error,
//! 4 numeric failure (of the single fit, or of every restart).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use tvem_core::diagnostics::{
    appendix_forms, free_energy_kmeans, free_energy_trunc, kl_gap, log_likelihood, objective_j,
    AppendixForms, TraceRecord,
};
use tvem_core::engine::{run, Algorithm, RunConfig, Seeding, Termination};
use tvem_core::harness::{run_experiment, write_json, write_trace, DataSource, ExperimentSpec};
use tvem_core::truncation::select_nearest;
use tvem_core::{generate, load_csv, save_csv, Dataset, Error, FittedModel, GeneratorKind, GeneratorSpec};

#[derive(Parser)]
#[command(name = "tvem", version, about = "k-means and Gaussian mixtures as truncated variational EM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (CSV plus a `.labels` sidecar).
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one fit and write `trace.jsonl` and `model.json`.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several restarts; write one trace per restart and `summary.json`.
    Experiment {
        /// Experiment spec as JSON; replaces all other flags except `--out`.
        #[arg(long, conflicts_with_all = ["data", "algorithm", "c"])]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        /// Output directory (overrides `out_dir` of a spec file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate J, F, L and the gap of a model on a dataset.
    Audit {
        /// Dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// `model.json` written by `fit`, or a bare model snapshot.
        #[arg(long)]
        model: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct GenArgs {
    /// grid, uniform, or explicit-gmm.
    #[arg(long = "gen-kind", default_value = "grid", value_parser = parse_kind)]
    kind: GeneratorKind,
    /// Number of generating clusters.
    #[arg(long = "gen-c", default_value_t = 25)]
    c_true: usize,
    /// Points per cluster.
    #[arg(long = "gen-n", default_value_t = 100)]
    per_cluster_n: usize,
    #[arg(long = "gen-dim", default_value_t = 2)]
    dim: usize,
    #[arg(long = "gen-sigma", default_value_t = 1.0)]
    sigma: f64,
    /// Grid step (default 4 × sigma).
    #[arg(long = "gen-spacing")]
    spacing: Option<f64>,
    /// Box for uniform centers, `lo,hi`.
    #[arg(long = "gen-box", value_parser = parse_box)]
    domain_box: Option<[f64; 2]>,
    /// Centers for explicit-gmm, `x1,y1;x2,y2;...`.
    #[arg(long = "gen-centers", value_parser = parse_centers)]
    centers: Option<Vec<Vec<f64>>>,
    #[arg(long = "gen-seed", default_value_t = 0)]
    gen_seed: u64,
}

impl GenArgs {
    fn spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            kind: self.kind,
            c_true: self.centers.as_ref().map_or(self.c_true, Vec::len),
            per_cluster_n: self.per_cluster_n,
            dim: self
                .centers
                .as_ref()
                .and_then(|c| c.first())
                .map_or(self.dim, Vec::len),
            spacing: self.spacing,
            domain_box: self.domain_box,
            gen_sigma: self.sigma,
            centers: self.centers.clone(),
            seed: self.gen_seed,
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset CSV; without it the `--gen-*` flags describe generated data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match &self.data {
            Some(p) => DataSource::Csv(p.clone()),
            None => DataSource::Generate(self.gen.spec()),
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// kmeans, em_gmm, kmeans_cprime, lazy_kmeans, or sigma_pi.
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    /// Number of clusters.
    #[arg(long)]
    c: Option<usize>,
    #[arg(long = "c-prime")]
    c_prime: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// uniform or dsquared.
    #[arg(long, default_value = "dsquared", value_parser = parse_seeding)]
    seeding: Seeding,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-iters", default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let algorithm = self
            .algorithm
            .ok_or_else(|| Error::Config("--algorithm is required".into()))?;
        let c = self.c.ok_or_else(|| Error::Config("--c is required".into()))?;
        let cfg = RunConfig {
            algorithm,
            c,
            c_prime: self.c_prime,
            epsilon: self.epsilon,
            seeding: self.seeding,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn from_str_json<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    from_str_json(s)
}

fn parse_seeding(s: &str) -> Result<Seeding, String> {
    from_str_json(s)
}

fn parse_kind(s: &str) -> Result<GeneratorKind, String> {
    from_str_json(s)
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn parse_box(s: &str) -> Result<[f64; 2], String> {
    match parse_floats(s)?.as_slice() {
        &[lo, hi] if lo < hi => Ok([lo, hi]),
        _ => Err("expected lo,hi with lo < hi".into()),
    }
}

fn parse_centers(s: &str) -> Result<Vec<Vec<f64>>, String> {
    s.split(';').map(parse_floats).collect()
}

/// `model.json` as written by `fit`.
#[derive(Serialize, serde::Deserialize)]
struct FitOutput {
    model: FittedModel,
    termination: Termination,
    iterations: usize,
    #[serde(rename = "final")]
    last: TraceRecord,
}

#[derive(Serialize)]
struct AuditReport {
    n: usize,
    d: usize,
    c: usize,
    sigma2: f64,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "L")]
    l: f64,
    gap: f64,
    kl_gap: Option<f64>,
    #[serde(rename = "F_kmeans")]
    f_kmeans: Option<f64>,
    appendix: AppendixForms,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn load_model(path: &Path) -> Result<FittedModel, Error> {
    let v: serde_json::Value = read_json(path)?;
    let snapshot = match v.get("model") {
        Some(m) => m.clone(),
        None => v,
    };
    Ok(serde_json::from_value(snapshot)?)
}

fn audit(data: &Dataset, model: &FittedModel) -> Result<AuditReport, Error> {
    let c = model.n_clusters();
    if model.means().iter().any(|m| m.len() != data.d()) {
        return Err(Error::Config(format!(
            "model dimension does not match the data dimension {}",
            data.d()
        )));
    }
    let state = select_nearest(data, model.means(), 1)?;
    let assignments = state.primary();
    let f = free_energy_trunc(data, model.as_mixture(), &state);
    let l = log_likelihood(data, model.as_mixture());
    let (kl, f_km) = match model {
        FittedModel::Iso(m) => (
            Some(kl_gap(data, m, &state)),
            Some(free_energy_kmeans(c, data.d(), m.sigma2())),
        ),
        FittedModel::General(_) => (None, None),
    };
    Ok(AuditReport {
        n: data.n(),
        d: data.d(),
        c,
        sigma2: model.sigma2(),
        j: objective_j(data, &assignments, model.means()),
        f,
        l,
        gap: l - f,
        kl_gap: kl,
        f_kmeans: f_km,
        appendix: appendix_forms(data, &assignments, model.means(), c),
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { gen, out } => {
            let ds = generate(&gen.spec())?;
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            save_csv(&ds, &out)?;
            eprintln!("wrote {} points in {} dimensions to {}", ds.n(), ds.d(), out.display());
        }
        Command::Fit { data, run: args, out } => {
            let cfg = args.config()?;
            if let DataSource::Generate(g) = data.source() {
                g.validate()?;
            }
            let ds = data.source().load()?;
            create_dir(&out)?;
            let fit = match run(&ds, &cfg) {
                Ok(fit) => fit,
                Err(e) => {
                    write_trace(&out.join("trace.jsonl"), &e.trace)?;
                    return Err(Error::Numeric(e.to_string()));
                }
            };
            write_trace(&out.join("trace.jsonl"), &fit.trace)?;
            let last = fit.final_record().clone();
            eprintln!(
                "{:?} after {} iterations: J = {}, F = {}, L = {}, gap = {}",
                fit.termination,
                fit.trace.len() - 1,
                last.j,
                last.f,
                last.l,
                last.gap
            );
            write_json(
                &out.join("model.json"),
                &FitOutput {
                    iterations: fit.trace.len() - 1,
                    termination: fit.termination,
                    model: fit.model,
                    last,
                },
            )?;
        }
        Command::Experiment {
            config,
            data,
            run: args,
            restarts,
            out,
        } => {
            let mut spec = match config {
                Some(path) => read_json::<ExperimentSpec>(&path)?,
                None => ExperimentSpec {
                    data: data.source(),
                    run: args.config()?,
                    restarts,
                    out_dir: out
                        .clone()
                        .ok_or_else(|| Error::Config("--out is required".into()))?,
                },
            };
            if let Some(o) = out {
                spec.out_dir = o;
            }
            let outcome = run_experiment(&spec)?;
            let s = &outcome.summary;
            let best = &s.restarts[s.best_run];
            eprintln!(
                "{} restarts ({} failed); best run {} with F = {}, L = {}",
                s.restarts.len(),
                s.restarts.iter().filter(|r| !r.ok).count(),
                s.best_run,
                best.final_f.unwrap_or(f64::NAN),
                best.final_l.unwrap_or(f64::NAN)
            );
        }
        Command::Audit { data, model, out } => {
            let ds = load_csv(&data)?;
            let m = load_model(&model)?;
            let report = audit(&ds, &m)?;
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsupported(_) | Error::Json(_) => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Numeric(_) | Error::AllRestartsFailed(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
