//! Seeding, M-steps, per-algorithm iteration kernels, and the run loop.

pub mod kernels;
pub mod mstep;
pub mod run;
pub mod seeding;

pub use kernels::{em_general_step, em_iso_step, kmeans_step, lazy_step, sigma_pi_step, tvem_step, KMeansStep, Step};
pub use mstep::{isotropic_variance, m_step_general, m_step_iso, MStep, Reseed};
pub use run::{run, run_from_means, run_observed, Algorithm, IterationView, FitError, FitResult, RunConfig, Termination};
pub use seeding::{
    dsquared_probabilities, seed, seed_dsquared, seed_dsquared_from, seed_dsquared_indices, seed_uniform,
    seed_uniform_indices, Seeding,
};
