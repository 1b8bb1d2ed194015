//! One iteration of each algorithm.

use crate::data::Dataset;
use crate::error::Result;
use crate::math::{argmin, sq_dist};
use crate::mixture::{responsibilities_exact, GeneralGmm, IsotropicGmm};
use crate::truncation::{
    lazy_reassign, select_nearest, select_sigma_pi, truncated_responsibilities, Responsibilities,
    TruncationState,
};

use super::mstep::{fill_empty, m_step_general, m_step_iso, Reseed};

/// Output of one E-step/M-step pair.
#[derive(Debug, Clone)]
pub struct Step<M> {
    pub state: TruncationState,
    pub resp: Responsibilities,
    pub model: M,
    pub reseeded: Vec<Reseed>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansStep {
    pub assignments: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub reseeded: Vec<Reseed>,
}

impl KMeansStep {
    pub fn responsibilities(&self) -> Responsibilities {
        Responsibilities::hard(self.means.len(), self.assignments.clone())
    }
}

/// Lloyd's iteration: nearest-center assignment, then centroid update.
/// No variance is involved.
pub fn kmeans_step(data: &Dataset, means: &[Vec<f64>]) -> KMeansStep {
    let c = means.len();
    let d = data.d();
    let mut d2 = vec![0.0; c];
    let assignments: Vec<usize> = data
        .points()
        .map(|y| {
            for (slot, m) in d2.iter_mut().zip(means) {
                *slot = sq_dist(y, m);
            }
            argmin(&d2)
        })
        .collect();
    let mut sums = vec![vec![0.0; d]; c];
    let mut counts = vec![0.0f64; c];
    for (y, &a) in data.points().zip(&assignments) {
        counts[a] += 1.0;
        for (s, v) in sums[a].iter_mut().zip(y) {
            *s += v;
        }
    }
    let centroids = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &k)| (k > 0.0).then(|| s.into_iter().map(|v| v / k).collect()))
        .collect();
    let (means, reseeded) = fill_empty(data, &assignments, centroids);
    KMeansStep {
        assignments,
        means,
        reseeded,
    }
}

/// k-means-C′: nearest-`C′` sets, truncated responsibilities, isotropic M-step.
pub fn tvem_step(data: &Dataset, model: &IsotropicGmm, c_prime: usize) -> Result<Step<IsotropicGmm>> {
    let state = select_nearest(data, model.means(), c_prime)?;
    let resp = truncated_responsibilities(data, model, &state);
    let m = m_step_iso(data, &resp);
    Ok(Step {
        state,
        resp,
        model: m.model,
        reseeded: m.reseeded,
    })
}

/// Exact EM on the equal-weight isotropic mixture.
pub fn em_iso_step(data: &Dataset, model: &IsotropicGmm) -> Step<IsotropicGmm> {
    let resp = responsibilities_exact(data, model);
    let m = m_step_iso(data, &resp);
    Step {
        state: TruncationState::full(model.means().len(), data.n()),
        resp,
        model: m.model,
        reseeded: m.reseeded,
    }
}

/// Exact EM on a general mixture (weights, means, full covariances).
pub fn em_general_step(data: &Dataset, model: &GeneralGmm) -> Result<Step<GeneralGmm>> {
    let resp = responsibilities_exact(data, model);
    let m = m_step_general(data, &resp)?;
    Ok(Step {
        state: TruncationState::full(model.means().len(), data.n()),
        resp,
        model: m.model,
        reseeded: m.reseeded,
    })
}

/// Lazy k-means: partial E-step on the carried state, then the usual
/// centroid and variance updates.
pub fn lazy_step(
    data: &Dataset,
    model: &IsotropicGmm,
    epsilon: f64,
    state: &TruncationState,
) -> Result<Step<IsotropicGmm>> {
    let state = lazy_reassign(data, model.means(), epsilon, state)?;
    let resp = truncated_responsibilities(data, model, &state);
    let m = m_step_iso(data, &resp);
    Ok(Step {
        state,
        resp,
        model: m.model,
        reseeded: m.reseeded,
    })
}

/// k-means-Σ-π: hard assignment by lowest Σ-π score, then the general M-step
/// with those assignments in place of responsibilities.
pub fn sigma_pi_step(data: &Dataset, model: &GeneralGmm) -> Result<Step<GeneralGmm>> {
    let state = select_sigma_pi(data, model);
    let resp = truncated_responsibilities(data, model, &state);
    let m = m_step_general(data, &resp)?;
    Ok(Step {
        state,
        resp,
        model: m.model,
        reseeded: m.reseeded,
    })
}
