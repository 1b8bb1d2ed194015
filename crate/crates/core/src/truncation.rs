//! Truncation sets `K(n)`, the criteria that choose them, and truncated
//! responsibilities.
//!
//! Each point keeps an ordered list of `C'` distinct cluster indices. Under an
//! isotropic equal-weight mixture, swapping a member for a closer non-member
//! strictly raises the truncated free energy, so the `C'` nearest centers are
//! the optimal sets for fixed parameters. Lazy reassignment only performs
//! swaps that win by a factor `1 + ε`, and the Σ-π criterion generalizes the
//! nearest rule to weighted full-covariance mixtures.
//!
//! Ties between equal distances (or equal scores) always go to the smaller
//! cluster index.

use std::cmp::Ordering;
use std::iter::{Enumerate, Zip};
use std::slice::Iter;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{argmin, log_sum_exp, sq_dist, xlogx};
use crate::mixture::{GeneralGmm, Mixture};

/// Per-point index sets of common cardinality `C'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationState {
    c: usize,
    c_prime: usize,
    sets: Vec<usize>,
}

impl TruncationState {
    pub fn new(c: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let c_prime = sets.first().map_or(0, Vec::len);
        if c_prime == 0 || c_prime > c {
            return Err(Error::config(format!(
                "C' must satisfy 1 <= C' <= C = {c}, got {c_prime}"
            )));
        }
        for (n, s) in sets.iter().enumerate() {
            if s.len() != c_prime {
                return Err(Error::config(format!(
                    "set {n} has {} members, expected {c_prime}",
                    s.len()
                )));
            }
            for (i, &k) in s.iter().enumerate() {
                if k >= c || s[..i].contains(&k) {
                    return Err(Error::config(format!(
                        "set {n} must hold distinct indices below {c}"
                    )));
                }
            }
        }
        Ok(Self {
            c,
            c_prime,
            sets: sets.concat(),
        })
    }

    /// One cluster per point (`C' = 1`).
    pub fn from_assignments(c: usize, assignments: &[usize]) -> Result<Self> {
        Self::new(c, assignments.iter().map(|&a| vec![a]).collect())
    }

    /// Every cluster for every point (`C' = C`).
    pub fn full(c: usize, n: usize) -> Self {
        Self {
            c,
            c_prime: c,
            sets: (0..n).flat_map(|_| 0..c).collect(),
        }
    }

    pub fn n_points(&self) -> usize {
        self.sets.len() / self.c_prime
    }

    pub fn n_clusters(&self) -> usize {
        self.c
    }

    pub fn c_prime(&self) -> usize {
        self.c_prime
    }

    pub fn set(&self, n: usize) -> &[usize] {
        &self.sets[n * self.c_prime..(n + 1) * self.c_prime]
    }

    pub fn sets(&self) -> impl Iterator<Item = &[usize]> {
        self.sets.chunks_exact(self.c_prime)
    }

    /// First member of each set: the hard assignment when `C' = 1`, and the
    /// nearest center for sets built by [`select_nearest`].
    pub fn primary(&self) -> Vec<usize> {
        self.sets().map(|s| s[0]).collect()
    }

    /// Number of points whose set membership (ignoring order) differs.
    pub fn n_changed(&self, other: &TruncationState) -> usize {
        if self.c_prime != other.c_prime || self.n_points() != other.n_points() {
            return self.n_points().max(other.n_points());
        }
        self.sets()
            .zip(other.sets())
            .filter(|(a, b)| {
                let mut a = a.to_vec();
                let mut b = b.to_vec();
                a.sort_unstable();
                b.sort_unstable();
                a != b
            })
            .count()
    }
}

/// Per-point distributions over clusters.
#[derive(Debug, Clone, PartialEq)]
pub enum Responsibilities {
    /// Exactly one cluster per point with weight 1.
    Hard { c: usize, assignments: Vec<usize> },
    /// `C'` weighted entries per point, support inside `K(n)`.
    Sparse {
        c: usize,
        c_prime: usize,
        indices: Vec<usize>,
        weights: Vec<f64>,
    },
    /// Row-major N×C.
    Dense { c: usize, weights: Vec<f64> },
}

impl Responsibilities {
    pub fn hard(c: usize, assignments: Vec<usize>) -> Self {
        Responsibilities::Hard { c, assignments }
    }

    pub fn dense(c: usize, weights: Vec<f64>) -> Self {
        Responsibilities::Dense { c, weights }
    }

    pub fn n_points(&self) -> usize {
        match self {
            Responsibilities::Hard { assignments, .. } => assignments.len(),
            Responsibilities::Sparse {
                c_prime, indices, ..
            } => indices.len() / c_prime,
            Responsibilities::Dense { c, weights } => weights.len() / c,
        }
    }

    pub fn n_clusters(&self) -> usize {
        match self {
            Responsibilities::Hard { c, .. }
            | Responsibilities::Sparse { c, .. }
            | Responsibilities::Dense { c, .. } => *c,
        }
    }

    /// Non-zero-capable entries `(cluster, weight)` of row `n`.
    pub fn row(&self, n: usize) -> Row<'_> {
        Row(match self {
            Responsibilities::Hard { assignments, .. } => RowInner::Hard(Some(assignments[n])),
            Responsibilities::Sparse {
                c_prime,
                indices,
                weights,
                ..
            } => {
                let r = n * c_prime..(n + 1) * c_prime;
                RowInner::Sparse(indices[r.clone()].iter().zip(weights[r].iter()))
            }
            Responsibilities::Dense { c, weights } => {
                RowInner::Dense(weights[n * c..(n + 1) * c].iter().enumerate())
            }
        })
    }

    pub fn weight(&self, n: usize, c: usize) -> f64 {
        self.row(n).find(|&(k, _)| k == c).map_or(0.0, |(_, w)| w)
    }

    /// Highest-weight cluster of row `n`, smallest index on ties.
    pub fn primary(&self, n: usize) -> usize {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (k, w) in self.row(n) {
            if w > best.1 || (w == best.1 && k < best.0) {
                best = (k, w);
            }
        }
        best.0
    }

    pub fn primaries(&self) -> Vec<usize> {
        (0..self.n_points()).map(|n| self.primary(n)).collect()
    }

    /// Total weight per cluster, `Σ_n q_c(n)`.
    pub fn cluster_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_clusters()];
        for n in 0..self.n_points() {
            for (k, w) in self.row(n) {
                mass[k] += w;
            }
        }
        mass
    }

    /// Average per-point entropy in nats, with `0 ln 0 = 0`.
    pub fn mean_entropy(&self) -> f64 {
        if let Responsibilities::Hard { .. } = self {
            return 0.0;
        }
        let n = self.n_points();
        let total: f64 = (0..n)
            .map(|i| -self.row(i).map(|(_, w)| xlogx(w)).sum::<f64>())
            .sum();
        total / n as f64
    }
}

pub struct Row<'a>(RowInner<'a>);

enum RowInner<'a> {
    Hard(Option<usize>),
    Sparse(Zip<Iter<'a, usize>, Iter<'a, f64>>),
    Dense(Enumerate<Iter<'a, f64>>),
}

impl Iterator for Row<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match &mut self.0 {
            RowInner::Hard(a) => a.take().map(|k| (k, 1.0)),
            RowInner::Sparse(it) => it.next().map(|(&k, &w)| (k, w)),
            RowInner::Dense(it) => it.next().map(|(k, &w)| (k, w)),
        }
    }
}

fn nearest(y: &[f64], means: &[Vec<f64>]) -> usize {
    let d2: Vec<f64> = means.iter().map(|m| sq_dist(y, m)).collect();
    argmin(&d2)
}

/// The `c_prime` centers closest to each point, ordered by distance.
pub fn select_nearest(data: &Dataset, means: &[Vec<f64>], c_prime: usize) -> Result<TruncationState> {
    let c = means.len();
    if c_prime == 0 || c_prime > c {
        return Err(Error::config(format!(
            "C' must satisfy 1 <= C' <= C = {c}, got {c_prime}"
        )));
    }
    let mut sets = Vec::with_capacity(data.n() * c_prime);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(c);
    for y in data.points() {
        if c_prime == 1 {
            sets.push(nearest(y, means));
            continue;
        }
        order.clear();
        order.extend(means.iter().enumerate().map(|(k, m)| (sq_dist(y, m), k)));
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        sets.extend(order[..c_prime].iter().map(|&(_, k)| k));
    }
    Ok(TruncationState { c, c_prime, sets })
}

/// Move a point to its nearest center only when `(1+ε)·d_new < d_current`.
pub fn lazy_reassign(
    data: &Dataset,
    means: &[Vec<f64>],
    epsilon: f64,
    state: &TruncationState,
) -> Result<TruncationState> {
    if state.c_prime != 1 {
        return Err(Error::Unsupported(format!(
            "lazy reassignment is defined for C' = 1 only, got C' = {}",
            state.c_prime
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if state.c != means.len() || state.n_points() != data.n() {
        return Err(Error::config("truncation state does not match data and means"));
    }
    let sets = data
        .points()
        .zip(&state.sets)
        .map(|(y, &current)| {
            let best = nearest(y, means);
            if best == current {
                return current;
            }
            let d_best = sq_dist(y, &means[best]).sqrt();
            let d_cur = sq_dist(y, &means[current]).sqrt();
            if (1.0 + epsilon) * d_best < d_cur {
                best
            } else {
                current
            }
        })
        .collect();
    Ok(TruncationState {
        c: state.c,
        c_prime: 1,
        sets,
    })
}

/// Σ-π selection score from its parts: `maha + log|2πΣ| − 2 log π`. Lower wins.
pub fn sigma_pi_criterion(mahalanobis_sq: f64, log_det_2pi: f64, weight: f64) -> f64 {
    mahalanobis_sq + log_det_2pi - 2.0 * weight.ln()
}

/// `‖y−μ_c‖²_{Σ_c} + log|2πΣ_c| − 2 log π_c`, i.e. `−2 log p(c, y | θ)`.
pub fn sigma_pi_score(y: &[f64], c: usize, model: &GeneralGmm) -> f64 {
    sigma_pi_criterion(
        model.mahalanobis_sq(y, c),
        model.log_det_2pi(c),
        model.weights()[c],
    )
}

/// Full Σ-π E-step with `C' = 1`: each point takes its lowest-score cluster.
pub fn select_sigma_pi(data: &Dataset, model: &GeneralGmm) -> TruncationState {
    let c = model.n_clusters();
    let mut scores = Vec::with_capacity(c);
    let sets = data
        .points()
        .map(|y| {
            scores.clear();
            scores.extend((0..c).map(|k| sigma_pi_score(y, k, model)));
            argmin(&scores)
        })
        .collect();
    TruncationState {
        c,
        c_prime: 1,
        sets,
    }
}

/// Posterior restricted to `K(n)` and renormalized; binary when `C' = 1`.
pub fn truncated_responsibilities<M: Mixture>(
    data: &Dataset,
    model: &M,
    state: &TruncationState,
) -> Responsibilities {
    assert_eq!(state.c, model.n_clusters(), "state/model cluster count mismatch");
    assert_eq!(state.n_points(), data.n(), "state/data size mismatch");
    if state.c_prime == 1 {
        return Responsibilities::hard(state.c, state.sets.clone());
    }
    let mut weights = Vec::with_capacity(state.sets.len());
    let mut lj = Vec::with_capacity(state.c_prime);
    for (y, set) in data.points().zip(state.sets()) {
        lj.clear();
        lj.extend(set.iter().map(|&k| model.log_joint(y, k)));
        let norm = log_sum_exp(&lj);
        if norm == f64::NEG_INFINITY {
            // Every member has zero prior mass; keep the first member.
            weights.push(1.0);
            weights.extend(std::iter::repeat_n(0.0, set.len() - 1));
        } else {
            weights.extend(lj.iter().map(|&l| (l - norm).exp()));
        }
    }
    Responsibilities::Sparse {
        c: state.c,
        c_prime: state.c_prime,
        indices: state.sets.clone(),
        weights,
    }
}
