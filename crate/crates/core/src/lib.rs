//! Bayesian bivariate and trivariate random-effects meta-analysis for
//! surrogate endpoint validation.
//!
//! The crate fits a product-normal hierarchical model to study-level
//! treatment effects on up to three outcomes (tumour response, PFS, OS)
//! by Metropolis-within-Gibbs sampling, evaluates trial-level surrogacy
//! criteria (intercept, slope, conditional variance, adjusted R²),
//! performs leave-one-out cross-validated prediction of the final-outcome
//! effect, and estimates within-study correlations from individual
//! patient data by stratified bootstrap.
//!
//! Parallelism (independent chains, leave-one-out refits, bootstrap
//! resamples) is provided by rayon behind the default `parallel` feature;
//! disabling the feature yields a fully sequential build with identical
//! numerical output.

pub mod crossval;
pub mod data_model;
pub mod diagnostics;
pub mod error;
pub mod ipd_bootstrap;
pub mod mcmc;
pub mod par;
pub mod rng;
pub mod simulate;
pub mod surrogacy;

pub use crossval::{compare_widths, loo_predict, PredictionResult, WidthComparison};
pub use data_model::{
    build_within_cov, compute_log_or, parse_ipd_csv, parse_study_csv, write_study_csv, IpdRecord,
    OutcomeKind, StudyEffects, StudyIngest, TherapyClass, WithinCorrelations, WithinCov,
};
pub use diagnostics::{assess, DiagnosticsReport, ParamDiagnostics};
pub use error::{Error, Result};
pub use ipd_bootstrap::{estimate_within_correlations, fit_log_hr, fit_log_or_ipd, BootstrapConfig};
pub use mcmc::{
    between_cov, fit, fit_with_harness, initialize, load_chains, save_chains, DerivedParams,
    FitHarness, HyperParams, McmcConfig, ModelKind, ModelSpec, ModelStructure, PosteriorChains,
    PriorSpec, SupportInterval,
};
pub use simulate::{generate, Missingness, TrueParams};
pub use surrogacy::{criteria, ParamSummary, SurrogacyCriteria};
