//! Initial centers: uniform draws and D² (k-means++) seeding.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seeding {
    Uniform,
    Dsquared,
}

fn check(data: &Dataset, c: usize) -> Result<()> {
    if c == 0 {
        return Err(Error::config("cluster count must be >= 1"));
    }
    if c > data.n() {
        return Err(Error::config(format!(
            "cannot seed {c} centers from {} points",
            data.n()
        )));
    }
    Ok(())
}

fn rows(data: &Dataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| data.point(i).to_vec()).collect()
}

/// Indices of `c` distinct points drawn uniformly without replacement.
pub fn seed_uniform_indices<R: Rng + ?Sized>(data: &Dataset, c: usize, rng: &mut R) -> Result<Vec<usize>> {
    check(data, c)?;
    Ok(rand::seq::index::sample(rng, data.n(), c).into_vec())
}

pub fn seed_uniform<R: Rng + ?Sized>(data: &Dataset, c: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    Ok(rows(data, &seed_uniform_indices(data, c, rng)?))
}

/// D² seeding: a uniform first center, then each next center with
/// probability proportional to its squared distance to the nearest chosen one.
pub fn seed_dsquared_indices<R: Rng + ?Sized>(data: &Dataset, c: usize, rng: &mut R) -> Result<Vec<usize>> {
    check(data, c)?;
    let first = rng.random_range(0..data.n());
    seed_dsquared_from(data, c, first, rng)
}

pub fn seed_dsquared<R: Rng + ?Sized>(data: &Dataset, c: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    Ok(rows(data, &seed_dsquared_indices(data, c, rng)?))
}

/// D² seeding continued from a fixed first point.
///
/// When every unchosen point coincides with a chosen one (zero D² mass), the
/// next center is drawn uniformly among the unchosen points.
pub fn seed_dsquared_from<R: Rng + ?Sized>(
    data: &Dataset,
    c: usize,
    first: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check(data, c)?;
    if first >= data.n() {
        return Err(Error::config(format!("first center {first} out of range")));
    }
    let mut chosen = vec![first];
    let mut taken = vec![false; data.n()];
    taken[first] = true;
    let mut d2: Vec<f64> = data.points().map(|y| sq_dist(y, data.point(first))).collect();
    while chosen.len() < c {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            Err(_) => {
                let free: Vec<usize> = (0..data.n()).filter(|&i| !taken[i]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        taken[next] = true;
        let center = data.point(next);
        for (slot, y) in d2.iter_mut().zip(data.points()) {
            *slot = slot.min(sq_dist(y, center));
        }
        d2[next] = 0.0;
    }
    Ok(chosen)
}

/// Next-center probabilities under D² sampling given the chosen indices.
pub fn dsquared_probabilities(data: &Dataset, chosen: &[usize]) -> Vec<f64> {
    let d2: Vec<f64> = data
        .points()
        .map(|y| {
            chosen
                .iter()
                .map(|&i| sq_dist(y, data.point(i)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let total: f64 = d2.iter().sum();
    d2.iter().map(|v| v / total).collect()
}

pub fn seed<R: Rng + ?Sized>(data: &Dataset, c: usize, how: Seeding, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    match how {
        Seeding::Uniform => seed_uniform(data, c, rng),
        Seeding::Dsquared => seed_dsquared(data, c, rng),
    }
}
