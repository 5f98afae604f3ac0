//! Per-chain Gibbs loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::substream;

use super::between::{
    between_cov, between_loglik, mean_vector, rho_feasible, rho_values, scale_values, set_rho,
    set_scale, DerivedParams,
};
use super::init::jitter_theta;
use super::{FitHarness, HyperParams, McmcConfig, ModelContext};

const ADAPT_BATCH: usize = 50;
const STEP_MIN: f64 = 1e-3;
const STEP_MAX: f64 = 20.0;

pub(crate) struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub acceptance: Vec<(String, f64)>,
}

struct MhBlock {
    name: String,
    step: f64,
    batch_accepts: usize,
    batch_total: usize,
    accepts: usize,
    total: usize,
}

impl MhBlock {
    fn new(name: String) -> Self {
        Self {
            name,
            step: 0.5,
            batch_accepts: 0,
            batch_total: 0,
            accepts: 0,
            total: 0,
        }
    }

    fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.batch_accepts += usize::from(accepted);
            self.batch_total += 1;
        } else {
            self.accepts += usize::from(accepted);
            self.total += 1;
        }
    }

    fn maybe_adapt(&mut self) {
        if self.batch_total == 0 {
            return;
        }
        let rate = self.batch_accepts as f64 / self.batch_total as f64;
        if rate > 0.5 {
            self.step = (self.step * 1.2).min(STEP_MAX);
        } else if rate < 0.2 {
            self.step = (self.step / 1.2).max(STEP_MIN);
        }
        self.batch_accepts = 0;
        self.batch_total = 0;
    }
}

fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn std_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Normal draw with conjugate combination of an iid normal likelihood
/// (given sum and count) and a zero-mean normal prior.
fn draw_conjugate_mean(
    sum: f64,
    n: usize,
    noise_var: f64,
    prior_var: f64,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let precision = n as f64 / noise_var + 1.0 / prior_var;
    let mean = (sum / noise_var) / precision;
    mean + std_normal(rng) / precision.sqrt()
}

/// Draw from a multivariate normal given its precision matrix and the
/// unnormalized mean `precision * mean = rhs`.
fn draw_mvn_from_precision(
    precision: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut ChaCha12Rng,
) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(precision.clone()).ok_or_else(|| {
        Error::InvalidConfig("conditional precision matrix lost positive definiteness".into())
    })?;
    let mean = chol.solve(rhs);
    let z = DVector::from_iterator(rhs.len(), (0..rhs.len()).map(|_| std_normal(rng)));
    let l_t = chol.l().transpose();
    let perturb = l_t
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::InvalidConfig("triangular solve failed".into()))?;
    Ok(mean + perturb)
}

fn update_latents(
    ctx: &ModelContext,
    theta: &HyperParams,
    latents: &mut [DVector<f64>],
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let cov = between_cov(theta)
        .map_err(|e| Error::InvalidConfig(format!("between-study covariance: {e}")))?;
    let b = nalgebra::Cholesky::new(cov)
        .ok_or_else(|| {
            Error::InvalidConfig("between-study covariance lost positive definiteness".into())
        })?
        .inverse();
    let m0 = mean_vector(theta);
    let b_m0 = &b * &m0;

    for (study, latent) in ctx.studies.iter().zip(latents.iter_mut()) {
        let precision = &study.w_padded + &b;
        let rhs = &study.w_padded * &study.y_padded + &b_m0;
        *latent = draw_mvn_from_precision(&precision, &rhs, rng)?;
    }
    Ok(())
}

fn impute_masked(
    ctx: &ModelContext,
    latents: &[DVector<f64>],
    imputed: &mut [Vec<f64>],
    rng: &mut ChaCha12Rng,
) {
    for ((study, latent), slot) in ctx.studies.iter().zip(latents).zip(imputed.iter_mut()) {
        if study.mask_idx.is_empty() {
            continue;
        }
        let mu_obs = DVector::from_iterator(
            study.obs_idx.len(),
            study.obs_idx.iter().map(|&c| latent[c]),
        );
        let mu_mask = DVector::from_iterator(
            study.mask_idx.len(),
            study.mask_idx.iter().map(|&c| latent[c]),
        );
        let mean = if study.obs_idx.is_empty() {
            mu_mask
        } else {
            &mu_mask + &study.impute_gain * (&study.y_obs - &mu_obs)
        };
        let z = DVector::from_iterator(
            study.mask_idx.len(),
            (0..study.mask_idx.len()).map(|_| std_normal(rng)),
        );
        let draw = &mean + &study.impute_chol * z;
        slot.clear();
        slot.extend(draw.iter().copied());
    }
}

fn update_locations(
    ctx: &ModelContext,
    theta: &mut HyperParams,
    latents: &[DVector<f64>],
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    // The location blocks are mutually independent given the latents and
    // scale parameters, so they are all drawn from a snapshot.
    let snapshot = *theta;
    let n = latents.len();
    let prior_var = ctx.spec.priors.location_variance;
    match snapshot {
        HyperParams::Bivariate { .. } => {
            let d = DerivedParams::from_hyper(&snapshot);
            let sum1: f64 = latents.iter().map(|m| m[0]).sum();
            let new_eta1 = draw_conjugate_mean(sum1, n, d.psi1_sq, prior_var, rng);
            let resid: f64 = latents.iter().map(|m| m[1] - d.lambda21 * m[0]).sum();
            let new_l20 = draw_conjugate_mean(resid, n, d.psi2_sq, prior_var, rng);
            if let HyperParams::Bivariate { eta1, lambda20, .. } = theta {
                *eta1 = new_eta1;
                *lambda20 = new_l20;
            }
        }
        HyperParams::TrivariateMain { .. } => {
            let d = DerivedParams::from_hyper(&snapshot);
            let l32 = d.lambda32.expect("trivariate");
            let p3 = d.psi3_sq.expect("trivariate");
            let sum1: f64 = latents.iter().map(|m| m[0]).sum();
            let new_eta1 = draw_conjugate_mean(sum1, n, d.psi1_sq, prior_var, rng);
            let r2: f64 = latents.iter().map(|m| m[1] - d.lambda21 * m[0]).sum();
            let new_l20 = draw_conjugate_mean(r2, n, d.psi2_sq, prior_var, rng);
            let r3: f64 = latents.iter().map(|m| m[2] - l32 * m[1]).sum();
            let new_l30 = draw_conjugate_mean(r3, n, p3, prior_var, rng);
            if let HyperParams::TrivariateMain {
                eta1,
                lambda20,
                lambda30,
                ..
            } = theta
            {
                *eta1 = new_eta1;
                *lambda20 = new_l20;
                *lambda30 = new_l30;
            }
        }
        HyperParams::TrivariateAlt {
            psi1, psi2, psi3, ..
        } => {
            let v1 = psi1 * psi1;
            let v2 = psi2 * psi2;
            let v3 = psi3 * psi3;
            let sum1: f64 = latents.iter().map(|m| m[0]).sum();
            let new_eta1 = draw_conjugate_mean(sum1, n, v1, prior_var, rng);
            let sum2: f64 = latents.iter().map(|m| m[1]).sum();
            let new_l20 = draw_conjugate_mean(sum2, n, v2, prior_var, rng);

            // Joint conjugate update of the outcome-3 regression.
            let mut xtx = DMatrix::zeros(3, 3);
            let mut xty = DVector::zeros(3);
            for m in latents {
                let x = [1.0, m[0], m[1]];
                for i in 0..3 {
                    for j in 0..3 {
                        xtx[(i, j)] += x[i] * x[j];
                    }
                    xty[i] += x[i] * m[2];
                }
            }
            let mut precision = xtx / v3;
            for i in 0..3 {
                precision[(i, i)] += 1.0 / prior_var;
            }
            let rhs = xty / v3;
            let coef = draw_mvn_from_precision(&precision, &rhs, rng)?;
            if let HyperParams::TrivariateAlt {
                eta1,
                lambda20,
                lambda30,
                lambda31,
                lambda32,
                ..
            } = theta
            {
                *eta1 = new_eta1;
                *lambda20 = new_l20;
                *lambda30 = coef[0];
                *lambda31 = coef[1];
                *lambda32 = coef[2];
            }
        }
        HyperParams::TrivariateUnstructured { .. } => {
            let cov = between_cov(&snapshot)
                .map_err(|e| Error::InvalidConfig(format!("between-study covariance: {e}")))?;
            let b = nalgebra::Cholesky::new(cov)
                .ok_or_else(|| {
                    Error::InvalidConfig(
                        "between-study covariance lost positive definiteness".into(),
                    )
                })?
                .inverse();
            let sum = latents.iter().fold(DVector::zeros(3), |acc, m| acc + m);
            let mut precision = &b * n as f64;
            for i in 0..3 {
                precision[(i, i)] += 1.0 / prior_var;
            }
            let rhs = &b * sum;
            let draw = draw_mvn_from_precision(&precision, &rhs, rng)?;
            if let HyperParams::TrivariateUnstructured { eta, .. } = theta {
                eta.copy_from_slice(draw.as_slice());
            }
        }
    }
    Ok(())
}

/// Half-normal log prior plus log-transform Jacobian for a scale value.
fn scale_logprior(value: f64, tau_scale: f64) -> f64 {
    -value * value / (2.0 * tau_scale) + value.ln()
}

fn mh_scale_block(
    ctx: &ModelContext,
    theta: &mut HyperParams,
    latents: &[DVector<f64>],
    idx: usize,
    block: &mut MhBlock,
    adapting: bool,
    rng: &mut ChaCha12Rng,
) {
    let current = scale_values(theta)[idx];
    let x = current.ln();
    let x_prop = x + block.step * std_normal(rng);
    let proposal = x_prop.exp();
    let mut theta_prop = *theta;
    set_scale(&mut theta_prop, idx, proposal);

    let tau_scale = ctx.spec.priors.tau_scale;
    let log_alpha = between_loglik(&theta_prop, latents) + scale_logprior(proposal, tau_scale)
        - between_loglik(theta, latents)
        - scale_logprior(current, tau_scale);
    let accepted = log_alpha.is_finite() && rng.random::<f64>().ln() < log_alpha;
    if accepted {
        *theta = theta_prop;
    }
    block.record(accepted, adapting);
}

fn mh_rho_block(
    ctx: &ModelContext,
    theta: &mut HyperParams,
    latents: &[DVector<f64>],
    idx: usize,
    block: &mut MhBlock,
    adapting: bool,
    rng: &mut ChaCha12Rng,
) {
    let support = ctx.layout.rho_supports[idx];
    let width = support.width();
    let current = rho_values(theta)[idx];
    let u = (current - support.lo) / width;
    let x = logit(u);
    let x_prop = x + block.step * std_normal(rng);
    let u_prop = sigmoid(x_prop);
    let proposal = support.lo + width * u_prop;
    let mut theta_prop = *theta;
    set_rho(&mut theta_prop, idx, proposal);

    if !rho_feasible(&theta_prop) {
        block.record(false, adapting);
        return;
    }
    // Uniform prior on the support; the logit Jacobian contributes
    // log u(1-u) on each side.
    let log_alpha = between_loglik(&theta_prop, latents)
        + u_prop.ln()
        + (1.0 - u_prop).ln()
        - between_loglik(theta, latents)
        - u.ln()
        - (1.0 - u).ln();
    let accepted = log_alpha.is_finite() && rng.random::<f64>().ln() < log_alpha;
    if accepted {
        *theta = theta_prop;
    }
    block.record(accepted, adapting);
}

fn check_finite(
    theta_row: &[f64],
    names: &[String],
    latents: &[DVector<f64>],
    chain: usize,
    iteration: usize,
) -> Result<()> {
    for (name, v) in names.iter().zip(theta_row) {
        if !v.is_finite() {
            return Err(Error::NonFiniteState {
                chain,
                iteration,
                param: name.clone(),
            });
        }
    }
    for (i, l) in latents.iter().enumerate() {
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                chain,
                iteration,
                param: format!("latent[{i}]"),
            });
        }
    }
    Ok(())
}

pub(crate) fn run_chain(
    ctx: &ModelContext,
    cfg: &McmcConfig,
    chain_idx: usize,
    harness: &FitHarness,
) -> Result<ChainOutput> {
    let mut rng = substream(cfg.seed, "chain", chain_idx as u64);
    let mut theta = if harness.init_override.is_some() {
        ctx.init_theta
    } else {
        jitter_theta(ctx.init_theta, &ctx.spec, cfg.seed, chain_idx)
    };
    let mut latents = ctx.init_latents.clone();
    let mut imputed: Vec<Vec<f64>> = ctx
        .studies
        .iter()
        .map(|s| vec![0.0; s.mask_idx.len()])
        .collect();

    let mut blocks: Vec<MhBlock> = ctx
        .layout
        .scale_names
        .iter()
        .chain(ctx.layout.rho_names.iter())
        .map(|n| MhBlock::new(n.clone()))
        .collect();
    let n_scales = ctx.layout.scale_names.len();

    let retained = cfg.retained_per_chain();
    let mut draws = Vec::with_capacity(retained);

    for iter in 0..cfg.iterations {
        update_latents(ctx, &theta, &mut latents, &mut rng)?;
        impute_masked(ctx, &latents, &mut imputed, &mut rng);
        if !harness.freeze_locations {
            update_locations(ctx, &mut theta, &latents, &mut rng)?;
        }
        if !harness.freeze_scales {
            let adapting = iter < cfg.adapt_until;
            for idx in 0..n_scales {
                mh_scale_block(ctx, &mut theta, &latents, idx, &mut blocks[idx], adapting, &mut rng);
            }
            for idx in 0..ctx.layout.rho_supports.len() {
                mh_rho_block(
                    ctx,
                    &mut theta,
                    &latents,
                    idx,
                    &mut blocks[n_scales + idx],
                    adapting,
                    &mut rng,
                );
            }
            if adapting && (iter + 1) % ADAPT_BATCH == 0 {
                for b in &mut blocks {
                    b.maybe_adapt();
                }
            }
        }

        let hyper_row = super::between::hyper_to_row(&theta);
        check_finite(&hyper_row, &ctx.layout.hyper_names, &latents, chain_idx, iter)?;

        if iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 {
            let mut row = hyper_row;
            for latent in &latents {
                row.extend(latent.iter().copied());
            }
            for slot in &imputed {
                row.extend(slot.iter().copied());
            }
            draws.push(row);
        }
    }

    let acceptance = blocks
        .iter()
        .map(|b| {
            let rate = if b.total == 0 {
                0.0
            } else {
                b.accepts as f64 / b.total as f64
            };
            (b.name.clone(), rate)
        })
        .collect();
    Ok(ChainOutput { draws, acceptance })
}
