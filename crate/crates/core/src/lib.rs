//! k-means as truncated variational EM for isotropic Gaussian mixtures.
//!
//! The crate implements k-means, EM for general mixtures, k-means-C′ (the
//! `C′` nearest clusters per point), lazy k-means, and the Σ-π hard-assignment
//! variant, together with the free energy, likelihood, and gap diagnostics
//! that relate the k-means objective to the mixture likelihood.

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod math;
pub mod mixture;
pub mod rng;
pub mod truncation;

pub use data::{generate, load_csv, save_csv, Dataset, GeneratorKind, GeneratorSpec};
pub use diagnostics::{
    appendix_forms, free_energy_entropy_form, free_energy_kmeans, free_energy_trunc, kl_gap,
    kl_gap_closed_form, log_likelihood, objective_j, AppendixForms, TraceEvent, TraceRecord,
};
pub use engine::{run, run_from_means, Algorithm, FitError, FitResult, RunConfig, Seeding, Termination};
pub use error::{Error, Result};
pub use harness::{run_experiment, DataSource, ExperimentSpec, Summary};
pub use mixture::{FittedModel, GeneralGmm, IsotropicGmm, Mixture};
pub use truncation::{Responsibilities, TruncationState};
