//! Metropolis-within-Gibbs sampler for the product-normal random-effects
//! model.
//!
//! Per iteration the sampler runs four blocks: an exact multivariate
//! normal update of each study's latent effect vector, imputation of
//! masked observed components, conjugate normal updates of the location
//! parameters, and adaptive random-walk Metropolis on transformed scale
//! and correlation parameters. Chains are independent and may run in
//! parallel; each draws from its own deterministic stream, so results
//! are a pure function of (data, spec, config).

mod between;
mod init;
mod sampler;
mod store;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    assemble_cov_with_jitter, index_by_study_id, OutcomeKind, StudyEffects, WithinCorrelations,
};
use crate::error::{Error, Result};
use crate::par;

pub use between::{between_cov, DerivedParams};
pub use store::{load_chains, save_chains, ChainDraws, PosteriorChains};

/// Open interval used as the support of a correlation prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SupportInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidConfig(format!(
                "correlation support must be a subinterval of [-1,1], got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Prior specification: uniform correlation priors on configurable
/// supports, half-normal heterogeneity scales, diffuse normal locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub rho12_support: SupportInterval,
    pub rho13_support: SupportInterval,
    pub rho23_support: SupportInterval,
    /// Variance of the half-normal prior on scale parameters.
    pub tau_scale: f64,
    /// Variance of the normal prior on location parameters.
    pub location_variance: f64,
}

impl PriorSpec {
    /// Informative supports: negative association of tumour response
    /// with the survival outcomes, positive between the survival
    /// outcomes.
    pub fn informative() -> Self {
        Self {
            rho12_support: SupportInterval { lo: -1.0, hi: 0.0 },
            rho13_support: SupportInterval { lo: -1.0, hi: 0.0 },
            rho23_support: SupportInterval { lo: 0.0, hi: 1.0 },
            tau_scale: 1000.0,
            location_variance: 1000.0,
        }
    }

    /// Non-informative sensitivity supports: every correlation uniform
    /// on (-1, 1).
    pub fn wide() -> Self {
        let full = SupportInterval { lo: -1.0, hi: 1.0 };
        Self {
            rho12_support: full,
            rho13_support: full,
            rho23_support: full,
            ..Self::informative()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [self.rho12_support, self.rho13_support, self.rho23_support] {
            SupportInterval::new(s.lo, s.hi)?;
        }
        if self.tau_scale <= 0.0 || self.location_variance <= 0.0 {
            return Err(Error::InvalidConfig(
                "prior scales must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Support of the between-study correlation for an outcome pair.
    pub fn rho_support(&self, a: OutcomeKind, b: OutcomeKind) -> SupportInterval {
        use OutcomeKind::*;
        match (a.min(b), a.max(b)) {
            (Tr, Pfs) => self.rho12_support,
            (Tr, Os) => self.rho13_support,
            _ => self.rho23_support,
        }
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::informative()
    }
}

/// Between-study covariance structure of the trivariate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelStructure {
    /// Product chain mu1 -> mu2 -> mu3: the first surrogate and the
    /// final outcome are conditionally independent given the second
    /// surrogate.
    StructuredMain,
    /// The two surrogates are independent; the final outcome regresses
    /// on both.
    StructuredAlt,
    /// Fully unstructured 3x3 between-study covariance.
    Unstructured,
}

impl ModelStructure {
    pub fn token(self) -> &'static str {
        match self {
            ModelStructure::StructuredMain => "main",
            ModelStructure::StructuredAlt => "alt",
            ModelStructure::Unstructured => "unstructured",
        }
    }
}

/// Outcome dimension and structure of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Bivariate {
        surrogate: OutcomeKind,
        final_outcome: OutcomeKind,
    },
    Trivariate { structure: ModelStructure },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub priors: PriorSpec,
}

impl ModelSpec {
    /// Bivariate model of one surrogate against one later outcome; the
    /// pair must respect the canonical outcome order.
    pub fn bivariate(
        surrogate: OutcomeKind,
        final_outcome: OutcomeKind,
        priors: PriorSpec,
    ) -> Result<Self> {
        if surrogate.index() >= final_outcome.index() {
            return Err(Error::InvalidConfig(format!(
                "surrogate must precede the final outcome in canonical order, got {surrogate} -> {final_outcome}"
            )));
        }
        Ok(Self {
            kind: ModelKind::Bivariate {
                surrogate,
                final_outcome,
            },
            priors,
        })
    }

    pub fn trivariate(structure: ModelStructure, priors: PriorSpec) -> Self {
        Self {
            kind: ModelKind::Trivariate { structure },
            priors,
        }
    }

    /// Modeled outcomes in canonical order.
    pub fn outcomes(&self) -> Vec<OutcomeKind> {
        match self.kind {
            ModelKind::Bivariate {
                surrogate,
                final_outcome,
            } => vec![surrogate, final_outcome],
            ModelKind::Trivariate { .. } => OutcomeKind::ALL.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::Bivariate { .. } => 2,
            ModelKind::Trivariate { .. } => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if let ModelKind::Bivariate {
            surrogate,
            final_outcome,
        } = self.kind
        {
            if surrogate.index() >= final_outcome.index() {
                return Err(Error::InvalidConfig(
                    "bivariate pair must follow canonical outcome order".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Sampler settings. `adapt_until` bounds the adaptive phase of the
/// Metropolis proposal scales and defaults to half the burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub adapt_until: usize,
}

impl McmcConfig {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, chains: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thin,
            chains,
            seed,
            adapt_until: burn_in / 2,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(
                "burn_in must be smaller than iterations".into(),
            ));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::InvalidConfig(
                "thin and chains must be positive".into(),
            ));
        }
        if self.retained_per_chain() < 2 {
            return Err(Error::InvalidConfig(
                "configuration retains fewer than 2 draws per chain".into(),
            ));
        }
        if self.adapt_until > self.burn_in {
            return Err(Error::InvalidConfig(
                "adapt_until must not exceed burn_in".into(),
            ));
        }
        Ok(())
    }
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self::new(250_000, 150_000, 10, 2, 0)
    }
}

/// One draw of the model hyperparameters. The variant mirrors the model
/// structure; conditional-chain coefficients are derived via
/// [`DerivedParams`], never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HyperParams {
    Bivariate {
        eta1: f64,
        lambda20: f64,
        tau_surrogate: f64,
        tau_final: f64,
        rho: f64,
    },
    TrivariateMain {
        eta1: f64,
        lambda20: f64,
        lambda30: f64,
        tau1: f64,
        tau2: f64,
        tau3: f64,
        rho12: f64,
        rho23: f64,
    },
    TrivariateAlt {
        eta1: f64,
        lambda20: f64,
        lambda30: f64,
        lambda31: f64,
        lambda32: f64,
        psi1: f64,
        psi2: f64,
        psi3: f64,
    },
    TrivariateUnstructured {
        eta: [f64; 3],
        tau: [f64; 3],
        rho12: f64,
        rho13: f64,
        rho23: f64,
    },
}

/// Validation harness controls; the default runs the full sampler.
///
/// Freezing blocks keeps the hyperparameters at their initial values so
/// the latent updates can be checked against closed-form conditionals.
#[derive(Debug, Clone, Default)]
pub struct FitHarness {
    pub freeze_locations: bool,
    pub freeze_scales: bool,
    pub init_override: Option<HyperParams>,
}

/// A study prepared for sampling: within-study precision over observed
/// coordinates and the imputation pieces for masked coordinates.
#[derive(Debug, Clone)]
pub(crate) struct PreparedStudy {
    pub id: String,
    /// Observed values padded with zeros at non-observed coordinates.
    pub y_padded: DVector<f64>,
    /// Within-study precision scattered to model dimension; zero rows
    /// and columns at coordinates without an observed value.
    pub w_padded: DMatrix<f64>,
    /// Modeled coordinate indices with an observed value.
    pub obs_idx: Vec<usize>,
    /// Modeled coordinate indices that are masked (variance known,
    /// value hidden).
    pub mask_idx: Vec<usize>,
    /// Observed values in `obs_idx` order.
    pub y_obs: DVector<f64>,
    /// Regression gain of masked on observed coordinates.
    pub impute_gain: DMatrix<f64>,
    /// Lower Cholesky factor of the masked-given-observed covariance.
    pub impute_chol: DMatrix<f64>,
}

pub(crate) struct ModelContext {
    pub spec: ModelSpec,
    pub outcomes: Vec<OutcomeKind>,
    pub studies: Vec<PreparedStudy>,
    pub layout: between::Layout,
    pub init_latents: Vec<DVector<f64>>,
    pub init_theta: HyperParams,
    pub dropped_studies: Vec<String>,
}

fn prepare(
    data: &[StudyEffects],
    rho_w: &WithinCorrelations,
    spec: &ModelSpec,
    masks: &[(String, OutcomeKind)],
) -> Result<(Vec<StudyEffects>, Vec<PreparedStudy>, Vec<String>)> {
    let outcomes = spec.outcomes();
    index_by_study_id(data)?;

    let mut sorted: Vec<StudyEffects> = data.to_vec();
    sorted.sort_by(|a, b| a.study_id.cmp(&b.study_id));

    let masked_for = |id: &str| -> Vec<OutcomeKind> {
        masks
            .iter()
            .filter(|(sid, _)| sid == id)
            .map(|(_, k)| *k)
            .collect()
    };

    let mut included = Vec::new();
    let mut prepared = Vec::new();
    let mut dropped = Vec::new();
    for study in &sorted {
        let masked = masked_for(&study.study_id);
        for k in &masked {
            if !study.is_observed(*k) {
                return Err(Error::TargetMissing {
                    study_id: study.study_id.clone(),
                });
            }
        }
        // Coordinates with a known variance take part in the study's
        // within-model; the rest are marginalized out.
        let mut obs_idx = Vec::new();
        let mut mask_idx = Vec::new();
        for (c, k) in outcomes.iter().enumerate() {
            if study.is_observed(*k) {
                if masked.contains(k) {
                    mask_idx.push(c);
                } else {
                    obs_idx.push(c);
                }
            }
        }
        if obs_idx.is_empty() && mask_idx.is_empty() {
            dropped.push(study.study_id.clone());
            continue;
        }
        prepared.push(prepare_study(study, rho_w, &outcomes, obs_idx, mask_idx)?);
        included.push(study.clone());
    }
    if included.len() < 3 {
        return Err(Error::TooFewStudies {
            found: included.len(),
        });
    }
    for (c, k) in outcomes.iter().enumerate() {
        if !prepared.iter().any(|p| p.obs_idx.contains(&c)) {
            return Err(Error::OutcomeNeverObserved {
                outcome: k.label().to_string(),
            });
        }
    }
    Ok((included, prepared, dropped))
}

fn prepare_study(
    study: &StudyEffects,
    rho_w: &WithinCorrelations,
    outcomes: &[OutcomeKind],
    obs_idx: Vec<usize>,
    mask_idx: Vec<usize>,
) -> Result<PreparedStudy> {
    let dim = outcomes.len();

    let mut y_padded = DVector::zeros(dim);
    let mut y_obs = DVector::zeros(obs_idx.len());
    for (local, &c) in obs_idx.iter().enumerate() {
        let v = study.effect[outcomes[c].index()].expect("observed");
        y_padded[c] = v;
        y_obs[local] = v;
    }

    let mut w_padded = DMatrix::zeros(dim, dim);
    if !obs_idx.is_empty() {
        let kinds: Vec<OutcomeKind> = obs_idx.iter().map(|&c| outcomes[c]).collect();
        let vars: Vec<f64> = kinds
            .iter()
            .map(|k| study.var[k.index()].expect("observed"))
            .collect();
        let cov = assemble_cov_with_jitter(&kinds, &vars, rho_w, &study.study_id)?;
        let prec = nalgebra::Cholesky::new(cov)
            .ok_or_else(|| Error::NotPositiveDefinite {
                study_id: study.study_id.clone(),
            })?
            .inverse();
        for (li, &ci) in obs_idx.iter().enumerate() {
            for (lj, &cj) in obs_idx.iter().enumerate() {
                w_padded[(ci, cj)] = prec[(li, lj)];
            }
        }
    }

    // Imputation operates on the coordinates with a known variance: the
    // masked block conditional on the observed block.
    let (impute_gain, impute_chol) = if mask_idx.is_empty() {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    } else {
        let known: Vec<usize> = {
            let mut v = obs_idx.clone();
            v.extend(mask_idx.iter().copied());
            v.sort_unstable();
            v
        };
        let kinds: Vec<OutcomeKind> = known.iter().map(|&c| outcomes[c]).collect();
        let vars: Vec<f64> = kinds
            .iter()
            .map(|k| study.var[k.index()].expect("known variance"))
            .collect();
        let cov = assemble_cov_with_jitter(&kinds, &vars, rho_w, &study.study_id)?;
        let local = |c: usize| known.iter().position(|&x| x == c).expect("member");
        let o: Vec<usize> = obs_idx.iter().map(|&c| local(c)).collect();
        let m: Vec<usize> = mask_idx.iter().map(|&c| local(c)).collect();
        let cov_mm = cov.select_rows(m.iter()).select_columns(m.iter());
        if o.is_empty() {
            let chol = nalgebra::Cholesky::new(cov_mm.clone()).ok_or_else(|| {
                Error::NotPositiveDefinite {
                    study_id: study.study_id.clone(),
                }
            })?;
            (DMatrix::zeros(m.len(), 0), chol.l())
        } else {
            let cov_oo = cov.select_rows(o.iter()).select_columns(o.iter());
            let cov_mo = cov.select_rows(m.iter()).select_columns(o.iter());
            let oo_inv = nalgebra::Cholesky::new(cov_oo)
                .ok_or_else(|| Error::NotPositiveDefinite {
                    study_id: study.study_id.clone(),
                })?
                .inverse();
            let gain = &cov_mo * oo_inv;
            let schur = cov_mm - &gain * cov_mo.transpose();
            let chol = nalgebra::Cholesky::new(schur).ok_or_else(|| {
                Error::NotPositiveDefinite {
                    study_id: study.study_id.clone(),
                }
            })?;
            (gain, chol.l())
        }
    };

    Ok(PreparedStudy {
        id: study.study_id.clone(),
        y_padded,
        w_padded,
        obs_idx,
        mask_idx,
        y_obs,
        impute_gain,
        impute_chol,
    })
}

/// Fit the model by Metropolis-within-Gibbs sampling.
pub fn fit(
    data: &[StudyEffects],
    rho_w: &WithinCorrelations,
    spec: &ModelSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorChains> {
    fit_masked(data, rho_w, spec, cfg, &[], &FitHarness::default())
}

/// Fit with validation-harness controls (frozen blocks, explicit
/// initial hyperparameters). Used by the oracle test-suites.
pub fn fit_with_harness(
    data: &[StudyEffects],
    rho_w: &WithinCorrelations,
    spec: &ModelSpec,
    cfg: &McmcConfig,
    harness: &FitHarness,
) -> Result<PosteriorChains> {
    fit_masked(data, rho_w, spec, cfg, &[], harness)
}

/// Fit with observed components hidden behind masks (their variance
/// stays known so the sampler imputes the hidden values). This is the
/// engine behind leave-one-out cross-validation.
pub(crate) fn fit_masked(
    data: &[StudyEffects],
    rho_w: &WithinCorrelations,
    spec: &ModelSpec,
    cfg: &McmcConfig,
    masks: &[(String, OutcomeKind)],
    harness: &FitHarness,
) -> Result<PosteriorChains> {
    spec.validate()?;
    cfg.validate()?;
    let outcomes = spec.outcomes();
    let (_included, prepared, dropped) = prepare(data, rho_w, spec, masks)?;
    let layout = between::layout_for(spec);
    let (init_theta, init_latents) = init::initialize(&prepared, spec, &outcomes)?;
    let init_theta = match harness.init_override {
        Some(theta) => {
            if std::mem::discriminant(&theta) != std::mem::discriminant(&init_theta) {
                return Err(Error::InvalidConfig(
                    "init_override variant does not match the model structure".into(),
                ));
            }
            theta
        }
        None => init_theta,
    };

    let ctx = ModelContext {
        spec: *spec,
        outcomes: outcomes.clone(),
        studies: prepared,
        layout,
        init_latents,
        init_theta,
        dropped_studies: dropped,
    };

    let chain_results: Vec<Result<sampler::ChainOutput>> = par::map_indexed(cfg.chains, |c| {
        sampler::run_chain(&ctx, cfg, c, harness)
    });
    let mut chains = Vec::with_capacity(cfg.chains);
    for r in chain_results {
        chains.push(r?);
    }

    Ok(store::assemble(ctx, *cfg, *rho_w, chains))
}

/// Data-derived initial values: sample means and least-squares fits for
/// the locations, column standard deviations (floored at 0.01) for the
/// scales, support midpoints for the correlations. Returns the
/// hyperparameters and the per-study latent starting points (studies in
/// sorted id order). Chains beyond the first jitter the hyperparameter
/// values by up to 20%, deterministically in the seed.
pub fn initialize(
    data: &[StudyEffects],
    spec: &ModelSpec,
    seed: u64,
    chain: usize,
) -> Result<(HyperParams, Vec<DVector<f64>>)> {
    spec.validate()?;
    let outcomes = spec.outcomes();
    let mut sorted: Vec<StudyEffects> = data.to_vec();
    sorted.sort_by(|a, b| a.study_id.cmp(&b.study_id));
    let (theta, latents) = init::initialize_raw(&sorted, spec, &outcomes)?;
    Ok((init::jitter_theta(theta, spec, seed, chain), latents))
}
