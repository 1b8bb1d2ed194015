//! M-steps for the isotropic and general mixtures, plus the empty-cluster policy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::sq_dist;
use crate::mixture::{regularize_cov, GeneralGmm, IsotropicGmm};
use crate::truncation::Responsibilities;

/// An empty cluster moved onto a data point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reseed {
    pub cluster: usize,
    pub point: usize,
}

#[derive(Debug, Clone)]
pub struct MStep<M> {
    pub model: M,
    pub reseeded: Vec<Reseed>,
}

/// Weighted means for clusters with mass; `None` for empty ones.
fn weighted_means(data: &Dataset, resp: &Responsibilities) -> (Vec<f64>, Vec<Option<Vec<f64>>>) {
    let c = resp.n_clusters();
    let d = data.d();
    let mut mass = vec![0.0; c];
    let mut sums = vec![vec![0.0; d]; c];
    for (n, y) in data.points().enumerate() {
        for (k, w) in resp.row(n) {
            mass[k] += w;
            for (s, v) in sums[k].iter_mut().zip(y) {
                *s += w * v;
            }
        }
    }
    let means = sums
        .into_iter()
        .zip(&mass)
        .map(|(s, &m)| (m > 0.0).then(|| s.into_iter().map(|v| v / m).collect()))
        .collect();
    (mass, means)
}

/// Fill empty clusters: each takes the point farthest from the center of its
/// current primary cluster, distinct points per cluster, lowest index on ties.
pub(crate) fn fill_empty(
    data: &Dataset,
    primaries: &[usize],
    means: Vec<Option<Vec<f64>>>,
) -> (Vec<Vec<f64>>, Vec<Reseed>) {
    let empty: Vec<usize> = (0..means.len()).filter(|&k| means[k].is_none()).collect();
    if empty.is_empty() {
        return (means.into_iter().map(Option::unwrap).collect(), Vec::new());
    }
    let mut dist: Vec<f64> = data
        .points()
        .zip(primaries)
        .map(|(y, &a)| means[a].as_deref().map_or(0.0, |m| sq_dist(y, m)))
        .collect();
    let mut out = means;
    let mut reseeded = Vec::with_capacity(empty.len());
    for k in empty {
        let mut best = 0;
        for i in 1..dist.len() {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        out[k] = Some(data.point(best).to_vec());
        dist[best] = f64::NEG_INFINITY;
        reseeded.push(Reseed {
            cluster: k,
            point: best,
        });
    }
    (out.into_iter().map(Option::unwrap).collect(), reseeded)
}

/// `(1/(DN)) Σ_n Σ_c q_c(n) ‖y(n) − μ_c‖²`, without the floor.
pub fn isotropic_variance(data: &Dataset, resp: &Responsibilities, means: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (n, y) in data.points().enumerate() {
        for (k, w) in resp.row(n) {
            total += w * sq_dist(y, &means[k]);
        }
    }
    total / (data.d() * data.n()) as f64
}

/// Weighted means, then the shared variance from the *new* means, clamped
/// to the dataset's variance floor.
pub fn m_step_iso(data: &Dataset, resp: &Responsibilities) -> MStep<IsotropicGmm> {
    let (_, means) = weighted_means(data, resp);
    let (means, reseeded) = fill_empty(data, &resp.primaries(), means);
    let sigma2 = isotropic_variance(data, resp, &means).max(data.sigma2_floor());
    MStep {
        model: IsotropicGmm::new(means, sigma2).expect("means of finite data are finite"),
        reseeded,
    }
}

/// Weighted mean, regularized weighted scatter, and mean responsibility per
/// cluster. Empty clusters are reseeded with the pooled isotropic variance and
/// zero weight.
pub fn m_step_general(data: &Dataset, resp: &Responsibilities) -> Result<MStep<GeneralGmm>> {
    let c = resp.n_clusters();
    let d = data.d();
    let floor = data.sigma2_floor();
    let (mass, means) = weighted_means(data, resp);
    let nonempty: Vec<bool> = means.iter().map(Option::is_some).collect();
    let (means, reseeded) = fill_empty(data, &resp.primaries(), means);

    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); c];
    let mut diff = vec![0.0; d];
    for (n, y) in data.points().enumerate() {
        for (k, w) in resp.row(n) {
            if !nonempty[k] || w == 0.0 {
                continue;
            }
            for (t, (a, b)) in diff.iter_mut().zip(y.iter().zip(&means[k])) {
                *t = a - b;
            }
            let s = &mut scatter[k];
            for i in 0..d {
                for j in 0..=i {
                    s[(i, j)] += w * diff[i] * diff[j];
                }
            }
        }
    }
    let pooled = isotropic_variance(data, resp, &means).max(floor);
    let total_mass: f64 = mass.iter().sum();
    let mut covs = Vec::with_capacity(c);
    for (k, mut s) in scatter.into_iter().enumerate() {
        if nonempty[k] {
            s /= mass[k];
            for i in 0..d {
                for j in 0..i {
                    s[(j, i)] = s[(i, j)];
                }
            }
        } else {
            s = DMatrix::from_diagonal_element(d, d, pooled);
        }
        covs.push(regularize_cov(s, floor));
    }
    let weights = mass.iter().map(|m| m / total_mass).collect();
    let model = GeneralGmm::new(weights, means, covs).map_err(|e| match e {
        Error::Numeric(m) | Error::Config(m) => Error::Numeric(format!("M-step: {m}")),
        other => other,
    })?;
    Ok(MStep { model, reseeded })
}
