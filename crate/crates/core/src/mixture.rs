//! Mixture parameter containers, log densities, and the exact E-step.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sq_dist};
use crate::truncation::Responsibilities;

/// Anything that can score `log p(c, y | θ)` for every cluster.
pub trait Mixture {
    fn n_clusters(&self) -> usize;
    fn dim(&self) -> usize;
    fn mean(&self, c: usize) -> &[f64];
    fn log_joint(&self, y: &[f64], c: usize) -> f64;

    fn log_joints(&self, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.n_clusters()).map(|c| self.log_joint(y, c)));
    }
}

/// Equally weighted Gaussians sharing one spherical variance.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGmm {
    means: Vec<Vec<f64>>,
    sigma2: f64,
}

impl IsotropicGmm {
    pub fn new(means: Vec<Vec<f64>>, sigma2: f64) -> Result<Self> {
        check_means(&means)?;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::config(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        Ok(Self { means, sigma2 })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::config("sigma2 must be positive and finite"));
        }
        self.sigma2 = sigma2;
        Ok(self)
    }

    pub fn into_means(self) -> Vec<Vec<f64>> {
        self.means
    }
}

impl Mixture for IsotropicGmm {
    fn n_clusters(&self) -> usize {
        self.means.len()
    }

    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn mean(&self, c: usize) -> &[f64] {
        &self.means[c]
    }

    fn log_joint(&self, y: &[f64], c: usize) -> f64 {
        log_density_iso(y, c, self) - (self.means.len() as f64).ln()
    }
}

fn check_means(means: &[Vec<f64>]) -> Result<()> {
    let d = means.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::config("a mixture needs at least one non-empty mean"));
    }
    if means
        .iter()
        .any(|m| m.len() != d || m.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::config("means must be finite and share one dimension"));
    }
    Ok(())
}

/// `log N(y; μ_c, σ² I)`.
pub fn log_density_iso(y: &[f64], c: usize, model: &IsotropicGmm) -> f64 {
    let d = y.len() as f64;
    -0.5 * d * (2.0 * PI * model.sigma2).ln() - sq_dist(y, &model.means[c]) / (2.0 * model.sigma2)
}

/// Cholesky factor of one component covariance, plus `log|2πΣ|`.
#[derive(Debug, Clone)]
struct CovFactor {
    lower: DMatrix<f64>,
    log_det_2pi: f64,
}

impl CovFactor {
    fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let chol = cov.clone().cholesky()?;
        let lower = chol.l();
        let d = cov.nrows() as f64;
        let log_det: f64 = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_2pi = d * (2.0 * PI).ln() + log_det;
        log_det_2pi.is_finite().then_some(Self { lower, log_det_2pi })
    }

    /// `(y-μ)ᵀ Σ⁻¹ (y-μ)` by a forward triangular solve.
    fn mahalanobis_sq(&self, y: &[f64], mean: &[f64]) -> f64 {
        let diff = DVector::from_iterator(y.len(), y.iter().zip(mean).map(|(a, b)| a - b));
        let z = self
            .lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }
}

/// Gaussian mixture with per-component weights, means, and full covariances.
#[derive(Debug, Clone)]
pub struct GeneralGmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<DMatrix<f64>>,
    factors: Vec<CovFactor>,
}

impl PartialEq for GeneralGmm {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.means == other.means && self.covs == other.covs
    }
}

impl GeneralGmm {
    /// Validates and factorizes. Covariances are used as given; callers that
    /// need regularization apply it first (see [`regularize_cov`]).
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        check_means(&means)?;
        let c = means.len();
        let d = means[0].len();
        if weights.len() != c || covs.len() != c {
            return Err(Error::config(format!(
                "{} weights and {} covariances for {c} components",
                weights.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("weights sum to {total}, not 1")));
        }
        let mut factors = Vec::with_capacity(c);
        for (k, cov) in covs.iter().enumerate() {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::config(format!("covariance {k} is not {d}x{d}")));
            }
            if cov.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("covariance {k} has non-finite entries")));
            }
            let f = CovFactor::new(cov).ok_or_else(|| {
                Error::Numeric(format!("covariance {k} is not positive definite"))
            })?;
            factors.push(f);
        }
        Ok(Self {
            weights,
            means,
            covs,
            factors,
        })
    }

    /// Equal weights and `σ² I` for every component.
    pub fn isotropic(means: Vec<Vec<f64>>, sigma2: f64) -> Result<Self> {
        check_means(&means)?;
        let c = means.len();
        let d = means[0].len();
        let cov = DMatrix::from_diagonal_element(d, d, sigma2);
        Self::new(vec![1.0 / c as f64; c], means, vec![cov; c])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    pub fn mahalanobis_sq(&self, y: &[f64], c: usize) -> f64 {
        self.factors[c].mahalanobis_sq(y, &self.means[c])
    }

    /// `log|2πΣ_c|`.
    pub fn log_det_2pi(&self, c: usize) -> f64 {
        self.factors[c].log_det_2pi
    }

    /// Weight-averaged per-axis variance, `Σ_c π_c tr(Σ_c) / D`.
    pub fn pooled_variance(&self) -> f64 {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.covs)
            .map(|(w, s)| w * s.trace() / d)
            .sum()
    }
}

impl Mixture for GeneralGmm {
    fn n_clusters(&self) -> usize {
        self.means.len()
    }

    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn mean(&self, c: usize) -> &[f64] {
        &self.means[c]
    }

    fn log_joint(&self, y: &[f64], c: usize) -> f64 {
        log_joint_general(y, c, self)
    }
}

/// `log π_c − ½ log|2πΣ_c| − ½ ‖y−μ_c‖²_{Σ_c}`.
pub fn log_joint_general(y: &[f64], c: usize, model: &GeneralGmm) -> f64 {
    model.weights[c].ln() - 0.5 * model.log_det_2pi(c) - 0.5 * model.mahalanobis_sq(y, c)
}

/// `Σ + λI` with `λ = max(1e-6 · tr(Σ)/D, floor)`.
pub fn regularize_cov(mut cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let lambda = (1e-6 * cov.trace() / d as f64).max(floor);
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    cov
}

/// Exact posteriors `p(c | y, θ)` for every point, via max-shifted log-sum-exp.
pub fn responsibilities_exact<M: Mixture>(data: &Dataset, model: &M) -> Responsibilities {
    let c = model.n_clusters();
    let mut weights = Vec::with_capacity(data.n() * c);
    let mut lj = Vec::with_capacity(c);
    for y in data.points() {
        model.log_joints(y, &mut lj);
        let norm = log_sum_exp(&lj);
        weights.extend(lj.iter().map(|&l| (l - norm).exp()));
    }
    Responsibilities::dense(c, weights)
}

/// Either parameterization, as produced by a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSnapshot", into = "ModelSnapshot")]
pub enum FittedModel {
    Iso(IsotropicGmm),
    General(GeneralGmm),
}

impl FittedModel {
    pub fn means(&self) -> &[Vec<f64>] {
        match self {
            FittedModel::Iso(m) => m.means(),
            FittedModel::General(m) => m.means(),
        }
    }

    /// Shared variance, or the pooled per-axis variance of a general model.
    pub fn sigma2(&self) -> f64 {
        match self {
            FittedModel::Iso(m) => m.sigma2(),
            FittedModel::General(m) => m.pooled_variance(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.means().len()
    }

    pub fn as_mixture(&self) -> &dyn Mixture {
        match self {
            FittedModel::Iso(m) => m,
            FittedModel::General(m) => m,
        }
    }
}

/// JSON form of a model: `{"kind":"iso","means":..,"sigma2":..}` or
/// `{"kind":"general","means":..,"weights":..,"covs":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSnapshot {
    Iso {
        means: Vec<Vec<f64>>,
        sigma2: f64,
    },
    General {
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
        covs: Vec<Vec<Vec<f64>>>,
    },
}

impl From<FittedModel> for ModelSnapshot {
    fn from(m: FittedModel) -> Self {
        match m {
            FittedModel::Iso(m) => ModelSnapshot::Iso {
                sigma2: m.sigma2,
                means: m.means,
            },
            FittedModel::General(m) => ModelSnapshot::General {
                covs: m
                    .covs
                    .iter()
                    .map(|s| s.row_iter().map(|r| r.iter().copied().collect()).collect())
                    .collect(),
                means: m.means,
                weights: m.weights,
            },
        }
    }
}

impl TryFrom<ModelSnapshot> for FittedModel {
    type Error = Error;

    fn try_from(s: ModelSnapshot) -> Result<Self> {
        match s {
            ModelSnapshot::Iso { means, sigma2 } => Ok(FittedModel::Iso(IsotropicGmm::new(means, sigma2)?)),
            ModelSnapshot::General {
                means,
                weights,
                covs,
            } => {
                let covs = covs
                    .into_iter()
                    .map(|rows| {
                        let d = rows.len();
                        if rows.iter().any(|r| r.len() != d) {
                            return Err(Error::config("covariance rows must be square"));
                        }
                        Ok(DMatrix::from_row_iterator(d, d, rows.into_iter().flatten()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(FittedModel::General(GeneralGmm::new(weights, means, covs)?))
            }
        }
    }
}
