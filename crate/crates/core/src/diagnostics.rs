//! Objectives and bound identities linking k-means to the Gaussian mixture
//! likelihood.
//!
//! All logs are natural (nats) and every free energy or likelihood is
//! averaged per data point. The closed forms (`free_energy_kmeans`,
//! `kl_gap_closed_form`, `appendix_forms`) assume the *post-iteration*
//! convention: the variance was computed from the same assignments and the
//! same (new) means that are being evaluated, so that `J = D·N·σ²`.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::Reseed;
use crate::math::{log_sum_exp, sq_dist};
use crate::mixture::{IsotropicGmm, Mixture};
use crate::truncation::{Responsibilities, TruncationState};

/// Something that happened during an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Reseed { cluster: usize, point: usize },
}

impl From<Reseed> for TraceEvent {
    fn from(r: Reseed) -> Self {
        TraceEvent::Reseed {
            cluster: r.cluster,
            point: r.point,
        }
    }
}

/// Diagnostics recorded after every iteration (and once for the initial state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// k-means objective of the iteration's assignments and current means.
    #[serde(rename = "J")]
    pub j: f64,
    /// Truncated free energy per point.
    #[serde(rename = "F")]
    pub f: f64,
    /// Log-likelihood per point.
    #[serde(rename = "L")]
    pub l: f64,
    pub gap: f64,
    pub sigma2: f64,
    pub n_changed: usize,
    pub events: Vec<TraceEvent>,
}

/// `Σ_n ‖y(n) − μ_{a(n)}‖²`.
pub fn objective_j(data: &Dataset, assignments: &[usize], means: &[Vec<f64>]) -> f64 {
    data.points()
        .zip(assignments)
        .map(|(y, &a)| sq_dist(y, &means[a]))
        .sum()
}

/// `(1/N) Σ_n log Σ_{c∈K(n)} p(c, y(n) | θ)`.
pub fn free_energy_trunc<M: Mixture + ?Sized>(data: &Dataset, model: &M, state: &TruncationState) -> f64 {
    let mut lj = Vec::with_capacity(state.c_prime());
    let total: f64 = data
        .points()
        .zip(state.sets())
        .map(|(y, set)| {
            lj.clear();
            lj.extend(set.iter().map(|&k| model.log_joint(y, k)));
            log_sum_exp(&lj)
        })
        .sum();
    total / data.n() as f64
}

/// `−log C − (D/2) log(2πeσ²)`.
pub fn free_energy_kmeans(c: usize, d: usize, sigma2: f64) -> f64 {
    -(c as f64).ln() - 0.5 * d as f64 * (2.0 * PI * E * sigma2).ln()
}

/// `(1/N) Σ_n log Σ_c p(c, y(n) | θ)`.
pub fn log_likelihood<M: Mixture + ?Sized>(data: &Dataset, model: &M) -> f64 {
    let mut lj = Vec::with_capacity(model.n_clusters());
    let total: f64 = data
        .points()
        .map(|y| {
            model.log_joints(y, &mut lj);
            log_sum_exp(&lj)
        })
        .sum();
    total / data.n() as f64
}

/// Exact `L − F` for the truncation `state`: `−(1/N) Σ_n log Σ_{c∈K(n)} r_c(n)`.
///
/// With one cluster per point this is
/// `(1/N) Σ_n [‖y−μ_a‖²/(2σ²) + log Σ_c exp(−‖y−μ_c‖²/(2σ²))]`, which
/// equals [`kl_gap_closed_form`] whenever `σ² = J/(DN)`.
pub fn kl_gap(data: &Dataset, model: &IsotropicGmm, state: &TruncationState) -> f64 {
    let inv = 1.0 / (2.0 * model.sigma2());
    let mut all = Vec::with_capacity(model.n_clusters());
    let mut kept = Vec::with_capacity(state.c_prime());
    let total: f64 = data
        .points()
        .zip(state.sets())
        .map(|(y, set)| {
            all.clear();
            all.extend(model.means().iter().map(|m| -sq_dist(y, m) * inv));
            kept.clear();
            kept.extend(set.iter().map(|&k| all[k]));
            log_sum_exp(&all) - log_sum_exp(&kept)
        })
        .sum();
    total / data.n() as f64
}

/// `D/2 + (1/N) Σ_n log Σ_c exp(−‖y(n)−μ_c‖²/(2σ²))`.
pub fn kl_gap_closed_form(data: &Dataset, model: &IsotropicGmm) -> f64 {
    let inv = 1.0 / (2.0 * model.sigma2());
    let mut all = Vec::with_capacity(model.n_clusters());
    let total: f64 = data
        .points()
        .map(|y| {
            all.clear();
            all.extend(model.means().iter().map(|m| -sq_dist(y, m) * inv));
            log_sum_exp(&all)
        })
        .sum();
    0.5 * data.d() as f64 + total / data.n() as f64
}

/// Free energy written through the entropy limit of the isotropic mixture:
///
/// `−log C − (D/2) log(2πeσ²) + (D/2)(1 − σ̃²/σ²) + H̄(q)`
///
/// where `σ̃²` is the responsibility-weighted variance of `q` around `means`
/// and `H̄` the mean entropy of `q`. After an iteration `σ̃² = σ²` and the
/// middle term vanishes. The value equals [`free_energy_trunc`] exactly when
/// `q` is the truncated posterior of `(means, σ²)`; for any other `q` it is a
/// lower bound of it.
pub fn free_energy_entropy_form(
    data: &Dataset,
    resp: &Responsibilities,
    means: &[Vec<f64>],
    sigma2: f64,
) -> f64 {
    let d = data.d() as f64;
    let spread = crate::engine::isotropic_variance(data, resp, means);
    free_energy_kmeans(resp.n_clusters(), data.d(), sigma2) + 0.5 * d * (1.0 - spread / sigma2)
        + resp.mean_entropy()
}

/// Free energy, likelihood, and gap with `σ²` replaced by `J/(DN)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixForms {
    pub j: f64,
    pub free_energy: f64,
    pub log_likelihood: f64,
    pub gap: f64,
    /// True when `J/(DN)` fell below the variance floor and was clamped.
    pub floor_engaged: bool,
}

/// The objective-only forms:
///
/// * `F(μ) = −log C − (D/2) log((2πe/(DN)) J)`
/// * `D(μ) = D/2 + (1/N) Σ_n log Σ_c exp(−(D/2) N ‖y−μ_c‖² / J)`
/// * `L(μ) = F(μ) + D(μ)`
///
/// `L(μ) ≥ F(μ)` is the condensed bound relating the mixture likelihood to
/// the k-means objective.
pub fn appendix_forms(
    data: &Dataset,
    assignments: &[usize],
    means: &[Vec<f64>],
    c: usize,
) -> AppendixForms {
    let dn = (data.d() * data.n()) as f64;
    let raw_j = objective_j(data, assignments, means);
    let min_j = dn * data.sigma2_floor();
    let floor_engaged = raw_j < min_j;
    let j = raw_j.max(min_j);
    let d = data.d() as f64;
    let n = data.n() as f64;
    let free_energy = -(c as f64).ln() - 0.5 * d * ((2.0 * PI * E / dn) * j).ln();
    let scale = 0.5 * d * n / j;
    let mut all = Vec::with_capacity(means.len());
    let sum: f64 = data
        .points()
        .map(|y| {
            all.clear();
            all.extend(means.iter().map(|m| -scale * sq_dist(y, m)));
            log_sum_exp(&all)
        })
        .sum();
    let gap = 0.5 * d + sum / n;
    AppendixForms {
        j: raw_j,
        free_energy,
        log_likelihood: free_energy + gap,
        gap,
        floor_engaged,
    }
}

/// Trace record for a model, its truncation, and the assignments of the
/// iteration that produced it.
pub fn trace_record<M: Mixture + ?Sized>(
    iter: usize,
    data: &Dataset,
    model: &M,
    state: &TruncationState,
    assignments: &[usize],
    sigma2: f64,
    n_changed: usize,
    events: Vec<TraceEvent>,
) -> TraceRecord {
    let means: Vec<Vec<f64>> = (0..model.n_clusters()).map(|k| model.mean(k).to_vec()).collect();
    let f = free_energy_trunc(data, model, state);
    let l = log_likelihood(data, model);
    TraceRecord {
        iter,
        j: objective_j(data, assignments, &means),
        f,
        l,
        gap: l - f,
        sigma2,
        n_changed,
        events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truncation::select_nearest;

    fn line(xs: &[f64]) -> Dataset {
        Dataset::new(xs.to_vec(), 1).unwrap()
    }

    fn post_iteration() -> (Dataset, IsotropicGmm, TruncationState) {
        let ds = line(&[0.0, 1.0, 3.0, 4.0]);
        let m = IsotropicGmm::new(vec![vec![0.5], vec![3.5]], 0.25).unwrap();
        let st = TruncationState::from_assignments(2, &[0, 0, 1, 1]).unwrap();
        (ds, m, st)
    }

    #[test]
    fn j_values() {
        let (ds, m, _) = post_iteration();
        assert_eq!(objective_j(&ds, &[0, 0, 1, 1], m.means()), 1.0);
        let exact = line(&[2.0, 5.0]);
        assert_eq!(objective_j(&exact, &[1, 0], &[vec![5.0], vec![2.0]]), 0.0);
    }

    #[test]
    fn four_point_free_energies_and_gap() {
        // 40-digit references
        const F: f64 = -1.418_938_533_204_672_7;
        const L: f64 = -1.418_935_461_089_058;
        const GAP: f64 = 3.072_115_614_539_124e-6;
        let (ds, m, st) = post_iteration();
        assert!((free_energy_trunc(&ds, &m, &st) - F).abs() < 1e-12);
        assert!((free_energy_kmeans(2, 1, 0.25) - F).abs() < 1e-12);
        assert!((log_likelihood(&ds, &m) - L).abs() < 1e-12);
        assert!((kl_gap(&ds, &m, &st) - GAP).abs() < 1e-12);
        assert!((kl_gap_closed_form(&ds, &m) - GAP).abs() < 1e-12);
        let a = appendix_forms(&ds, &[0, 0, 1, 1], m.means(), 2);
        assert!((a.free_energy - F).abs() < 1e-12);
        assert!((a.log_likelihood - L).abs() < 1e-12);
        assert!(!a.floor_engaged);
    }

    #[test]
    fn kmeans_free_energy_reference_points() {
        assert!((free_energy_kmeans(2, 1, 1.0 / (2.0 * PI * E)) + 2.0_f64.ln()).abs() < 1e-15);
        let a = free_energy_kmeans(3, 2, 0.7);
        let b = free_energy_kmeans(6, 2, 0.7);
        assert!((a - b - 2.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn full_truncation_is_likelihood() {
        let ds = line(&[0.0, 1.0, 3.0, 4.0, 2.2]);
        let m = IsotropicGmm::new(vec![vec![0.5], vec![3.5], vec![2.0]], 0.9).unwrap();
        let st = select_nearest(&ds, m.means(), 3).unwrap();
        assert!((free_energy_trunc(&ds, &m, &st) - log_likelihood(&ds, &m)).abs() < 1e-12);
        assert!(kl_gap(&ds, &m, &st).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_closed_forms() {
        let ds = line(&[0.0, 1.0, 3.0, 4.5]);
        let mu = 1.7;
        let s2 = 0.8;
        let m = IsotropicGmm::new(vec![vec![mu]], s2).unwrap();
        let st = TruncationState::from_assignments(1, &[0; 4]).unwrap();
        let ss: f64 = ds.points().map(|y| (y[0] - mu).powi(2)).sum();
        let expect = -0.5 * (2.0 * PI * s2).ln() - ss / (2.0 * s2 * 4.0);
        assert!((free_energy_trunc(&ds, &m, &st) - expect).abs() < 1e-14);
        assert_eq!(kl_gap(&ds, &m, &st), 0.0);
        let unit = IsotropicGmm::new(vec![vec![0.0]], 1.0 / (2.0 * PI)).unwrap();
        assert!(log_likelihood(&line(&[0.0]), &unit).abs() < 1e-15);
    }

    #[test]
    fn coincident_centers_open_a_gap() {
        let ds = line(&[0.0, 1.0, 3.0, 4.0]);
        let m = IsotropicGmm::new(vec![vec![0.5], vec![0.5]], 0.25).unwrap();
        let st = TruncationState::from_assignments(2, &[0, 0, 0, 0]).unwrap();
        assert!(kl_gap(&ds, &m, &st) > 0.0);
    }

    #[test]
    fn entropy_form_binary_reduces_to_kmeans() {
        let (ds, m, _) = post_iteration();
        let r = Responsibilities::hard(2, vec![0, 0, 1, 1]);
        let v = free_energy_entropy_form(&ds, &r, m.means(), 0.25);
        assert!((v - free_energy_kmeans(2, 1, 0.25)).abs() < 1e-15);
    }

    #[test]
    fn entropy_form_is_exact_for_self_consistent_posteriors() {
        let ds = Dataset::new(vec![0.2, 0.1, 1.4, 0.9, -0.3, 2.2, 3.1, 2.7, 2.5, 0.4, 1.0, 1.9], 2).unwrap();
        let m = IsotropicGmm::new(vec![vec![0.0, 0.5], vec![2.5, 2.5], vec![1.0, 1.5]], 0.7).unwrap();
        let st = select_nearest(&ds, m.means(), 2).unwrap();
        let q = crate::truncation::truncated_responsibilities(&ds, &m, &st);
        let lhs = free_energy_entropy_form(&ds, &q, m.means(), m.sigma2());
        assert!((lhs - free_energy_trunc(&ds, &m, &st)).abs() < 1e-12);
    }

    #[test]
    fn appendix_floor_keeps_values_finite() {
        let ds = line(&[1.0, 1.0, 5.0]);
        let a = appendix_forms(&ds, &[0, 0, 1], &[vec![1.0], vec![5.0]], 2);
        assert!(a.floor_engaged);
        assert!(a.free_energy.is_finite() && a.log_likelihood.is_finite());
    }

    #[test]
    fn trace_record_json_shape() {
        let r = TraceRecord {
            iter: 3,
            j: 1.0,
            f: -1.5,
            l: -1.25,
            gap: 0.25,
            sigma2: 0.1,
            n_changed: 0,
            events: vec![],
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"iter":3,"J":1.0,"F":-1.5,"L":-1.25,"gap":0.25,"sigma2":0.1,"n_changed":0,"events":[]}"#
        );
        let e = TraceEvent::Reseed { cluster: 2, point: 9 };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"kind":"reseed","cluster":2,"point":9}"#
        );
    }
}
