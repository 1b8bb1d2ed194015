//! Run configuration and the convergence loop shared by all algorithms.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::{trace_record, TraceEvent, TraceRecord};
use crate::error::{Error, Result};
use crate::math::sq_dist;
use crate::mixture::{FittedModel, GeneralGmm, IsotropicGmm};
use crate::rng::rng_from_seed;
use crate::truncation::{
    select_nearest, select_sigma_pi, truncated_responsibilities, Responsibilities, TruncationState,
};

use super::kernels::{em_general_step, kmeans_step, lazy_step, sigma_pi_step, tvem_step};
use super::mstep::{isotropic_variance, Reseed};
use super::seeding::{seed, Seeding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kmeans,
    EmGmm,
    KmeansCprime,
    LazyKmeans,
    SigmaPi,
}

impl Algorithm {
    pub fn is_isotropic(self) -> bool {
        !matches!(self, Algorithm::EmGmm | Algorithm::SigmaPi)
    }
}

fn default_max_iters() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-9
}

fn default_seeding() -> Seeding {
    Seeding::Dsquared
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_seeding")]
    pub seeding: Seeding,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, c: usize, seed: u64) -> Self {
        Self {
            algorithm,
            c,
            c_prime: None,
            epsilon: None,
            seeding: default_seeding(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            seed,
        }
    }

    pub fn kmeans(c: usize, seed: u64) -> Self {
        Self::new(Algorithm::Kmeans, c, seed)
    }

    pub fn kmeans_cprime(c: usize, c_prime: usize, seed: u64) -> Self {
        Self {
            c_prime: Some(c_prime),
            ..Self::new(Algorithm::KmeansCprime, c, seed)
        }
    }

    pub fn lazy(c: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::new(Algorithm::LazyKmeans, c, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(Error::config("c must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("tol must be a non-negative number"));
        }
        match (self.algorithm, self.c_prime) {
            (Algorithm::KmeansCprime, None) => {
                return Err(Error::config("kmeans_cprime requires c_prime"))
            }
            (Algorithm::KmeansCprime, Some(cp)) if cp == 0 || cp > self.c => {
                return Err(Error::config(format!(
                    "c_prime must satisfy 1 <= c_prime <= c = {}, got {cp}",
                    self.c
                )))
            }
            (Algorithm::LazyKmeans, Some(cp)) if cp != 1 => {
                return Err(Error::Unsupported(format!(
                    "lazy reassignment is defined for c_prime = 1 only, got {cp}"
                )))
            }
            (Algorithm::KmeansCprime, _) => {}
            (a, Some(_)) => {
                return Err(Error::config(format!("c_prime is not a parameter of {a:?}")))
            }
            (_, None) => {}
        }
        match (self.algorithm, self.epsilon) {
            (Algorithm::LazyKmeans, None) => Err(Error::config("lazy_kmeans requires epsilon")),
            (Algorithm::LazyKmeans, Some(e)) if !(e >= 0.0) => {
                Err(Error::config(format!("epsilon must be >= 0, got {e}")))
            }
            (Algorithm::LazyKmeans, _) | (_, None) => Ok(()),
            (a, Some(_)) => Err(Error::config(format!("epsilon is not a parameter of {a:?}"))),
        }
    }

    fn c_prime_effective(&self) -> usize {
        match self.algorithm {
            Algorithm::KmeansCprime => self.c_prime.unwrap_or(1),
            Algorithm::EmGmm => self.c,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FittedModel,
    pub responsibilities: Responsibilities,
    pub state: TruncationState,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
}

impl FitResult {
    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("trace is never empty")
    }
}

/// A failed run, with the trace recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{}: {source}", match .iteration { Some(i) => format!("iteration {i}"), None => "setup".to_string() })]
pub struct FitError {
    pub iteration: Option<usize>,
    #[source]
    pub source: Error,
    pub trace: Vec<TraceRecord>,
}

impl FitError {
    fn setup(source: Error) -> Self {
        Self {
            iteration: None,
            source,
            trace: Vec::new(),
        }
    }
}

/// Seed the means from `config.seed` and iterate.
pub fn run(data: &Dataset, config: &RunConfig) -> std::result::Result<FitResult, FitError> {
    config.validate().map_err(FitError::setup)?;
    let mut rng = rng_from_seed(config.seed);
    let means = seed(data, config.c, config.seeding, &mut rng).map_err(FitError::setup)?;
    run_from_means(data, config, means)
}

/// Iterate from the given initial means. `σ²` starts at `J/(DN)` of the
/// nearest-center partition.
pub fn run_from_means(
    data: &Dataset,
    config: &RunConfig,
    means: Vec<Vec<f64>>,
) -> std::result::Result<FitResult, FitError> {
    run_observed(data, config, means, &mut |_| {})
}

/// Everything known about the run right after an iteration (or the initial
/// state for `iter == 0`): the updated model, and the truncation sets and
/// responsibilities that produced it.
#[derive(Debug, Clone, Copy)]
pub struct IterationView<'a> {
    pub iter: usize,
    pub model: &'a FittedModel,
    pub state: &'a TruncationState,
    pub resp: &'a Responsibilities,
    pub record: &'a TraceRecord,
}

/// [`run_from_means`] with a callback after every trace record.
pub fn run_observed(
    data: &Dataset,
    config: &RunConfig,
    means: Vec<Vec<f64>>,
    observer: &mut dyn FnMut(IterationView<'_>),
) -> std::result::Result<FitResult, FitError> {
    config.validate().map_err(FitError::setup)?;
    if means.len() != config.c {
        return Err(FitError::setup(Error::config(format!(
            "expected {} initial means, got {}",
            config.c,
            means.len()
        ))));
    }
    let floor = data.sigma2_floor();
    let sigma2 = (data
        .points()
        .map(|y| means.iter().map(|m| sq_dist(y, m)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / (data.d() * data.n()) as f64)
        .max(floor);

    let c_prime = config.c_prime_effective();
    let (model, state) = if config.algorithm.is_isotropic() {
        let m = IsotropicGmm::new(means, sigma2).map_err(FitError::setup)?;
        let st = select_nearest(data, m.means(), c_prime).map_err(FitError::setup)?;
        (FittedModel::Iso(m), st)
    } else {
        let m = GeneralGmm::isotropic(means, sigma2).map_err(FitError::setup)?;
        let st = match config.algorithm {
            Algorithm::SigmaPi => select_sigma_pi(data, &m),
            _ => TruncationState::full(config.c, data.n()),
        };
        (FittedModel::General(m), st)
    };
    iterate(data, config, model, state, observer)
}

struct Iteration {
    state: TruncationState,
    resp: Responsibilities,
    model: FittedModel,
    reseeded: Vec<Reseed>,
}

fn kernel(data: &Dataset, config: &RunConfig, model: &FittedModel, state: &TruncationState) -> Result<Iteration> {
    let floor = data.sigma2_floor();
    let out = match (config.algorithm, model) {
        (Algorithm::Kmeans, FittedModel::Iso(m)) => {
            let s = kmeans_step(data, m.means());
            let resp = s.responsibilities();
            let sigma2 = isotropic_variance(data, &resp, &s.means).max(floor);
            Iteration {
                state: TruncationState::from_assignments(config.c, &s.assignments)?,
                resp,
                model: FittedModel::Iso(IsotropicGmm::new(s.means, sigma2)?),
                reseeded: s.reseeded,
            }
        }
        (Algorithm::KmeansCprime, FittedModel::Iso(m)) => {
            let s = tvem_step(data, m, config.c_prime_effective())?;
            Iteration {
                state: s.state,
                resp: s.resp,
                model: FittedModel::Iso(s.model),
                reseeded: s.reseeded,
            }
        }
        (Algorithm::LazyKmeans, FittedModel::Iso(m)) => {
            let s = lazy_step(data, m, config.epsilon.unwrap_or(0.0), state)?;
            Iteration {
                state: s.state,
                resp: s.resp,
                model: FittedModel::Iso(s.model),
                reseeded: s.reseeded,
            }
        }
        (Algorithm::EmGmm, FittedModel::General(m)) => {
            let s = em_general_step(data, m)?;
            Iteration {
                state: s.state,
                resp: s.resp,
                model: FittedModel::General(s.model),
                reseeded: s.reseeded,
            }
        }
        (Algorithm::SigmaPi, FittedModel::General(m)) => {
            let s = sigma_pi_step(data, m)?;
            Iteration {
                state: s.state,
                resp: s.resp,
                model: FittedModel::General(s.model),
                reseeded: s.reseeded,
            }
        }
        _ => unreachable!("model kind is fixed by the algorithm"),
    };
    Ok(out)
}

fn max_abs_diff(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative change across all parameter groups.
fn param_change(data: &Dataset, old: &FittedModel, new: &FittedModel) -> f64 {
    let flat = |m: &FittedModel| m.means().iter().flatten().copied().collect::<Vec<f64>>();
    let (a, b) = (flat(old), flat(new));
    let scale = a
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(data.spread().sqrt())
        .max(f64::MIN_POSITIVE);
    let mut change = max_abs_diff(a.into_iter(), b.into_iter()) / scale;
    match (old, new) {
        (FittedModel::Iso(o), FittedModel::Iso(n)) => {
            change = change.max((n.sigma2() - o.sigma2()).abs() / o.sigma2());
        }
        (FittedModel::General(o), FittedModel::General(n)) => {
            change = change.max(max_abs_diff(
                o.weights().iter().copied(),
                n.weights().iter().copied(),
            ));
            for (so, sn) in o.covs().iter().zip(n.covs()) {
                let s = so.amax().max(f64::MIN_POSITIVE);
                change = change.max((sn - so).amax() / s);
            }
        }
        _ => unreachable!(),
    }
    change
}

fn record(
    iter: usize,
    data: &Dataset,
    model: &FittedModel,
    state: &TruncationState,
    resp: &Responsibilities,
    n_changed: usize,
    events: Vec<TraceEvent>,
) -> Result<TraceRecord> {
    let r = trace_record(
        iter,
        data,
        model.as_mixture(),
        state,
        &resp.primaries(),
        model.sigma2(),
        n_changed,
        events,
    );
    if !r.f.is_finite() || !r.l.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite diagnostics (F = {}, L = {})",
            r.f, r.l
        )));
    }
    Ok(r)
}

fn initial_resp(data: &Dataset, model: &FittedModel, state: &TruncationState) -> Responsibilities {
    match model {
        FittedModel::Iso(m) => truncated_responsibilities(data, m, state),
        FittedModel::General(m) => truncated_responsibilities(data, m, state),
    }
}

fn iterate(
    data: &Dataset,
    config: &RunConfig,
    mut model: FittedModel,
    mut state: TruncationState,
    observer: &mut dyn FnMut(IterationView<'_>),
) -> std::result::Result<FitResult, FitError> {
    let mut resp = initial_resp(data, &model, &state);
    let mut trace = Vec::with_capacity(config.max_iters.min(1024) + 1);
    match record(0, data, &model, &state, &resp, 0, Vec::new()) {
        Ok(r) => {
            observer(IterationView {
                iter: 0,
                model: &model,
                state: &state,
                resp: &resp,
                record: &r,
            });
            trace.push(r)
        }
        Err(source) => {
            return Err(FitError {
                iteration: Some(0),
                source,
                trace,
            })
        }
    }
    let mut termination = Termination::MaxIters;
    for it in 1..=config.max_iters {
        let step = kernel(data, config, &model, &state).and_then(|s| {
            let n_changed = s.state.n_changed(&state);
            let events = s.reseeded.iter().copied().map(TraceEvent::from).collect();
            let r = record(it, data, &s.model, &s.state, &s.resp, n_changed, events)?;
            Ok((s, r))
        });
        let (s, r) = match step {
            Ok(v) => v,
            Err(source) => {
                return Err(FitError {
                    iteration: Some(it),
                    source,
                    trace,
                })
            }
        };
        let fixpoint = r.n_changed == 0 && s.reseeded.is_empty();
        let change = param_change(data, &model, &s.model);
        observer(IterationView {
            iter: it,
            model: &s.model,
            state: &s.state,
            resp: &s.resp,
            record: &r,
        });
        trace.push(r);
        model = s.model;
        state = s.state;
        resp = s.resp;
        if fixpoint && change < config.tol {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(FitResult {
        model,
        responsibilities: resp,
        state,
        trace,
        termination,
    })
}
