//! Data-derived starting values for the sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data_model::OutcomeKind;
use crate::error::{Error, Result};
use crate::rng::substream;

use super::between::rho_feasible;
use super::{HyperParams, ModelKind, ModelSpec, ModelStructure, PreparedStudy};

const TAU_FLOOR: f64 = 0.01;

/// Per-study observed values over the modeled coordinates; `None` marks
/// coordinates without a usable observation (missing or masked).
pub(crate) struct ObsView {
    pub values: Vec<Option<f64>>,
}

pub(crate) fn views_from_prepared(prepared: &[PreparedStudy], dim: usize) -> Vec<ObsView> {
    prepared
        .iter()
        .map(|p| {
            let mut values = vec![None; dim];
            for &c in &p.obs_idx {
                values[c] = Some(p.y_padded[c]);
            }
            ObsView { values }
        })
        .collect()
}

pub(crate) fn views_from_studies(
    studies: &[crate::data_model::StudyEffects],
    outcomes: &[OutcomeKind],
) -> Vec<ObsView> {
    studies
        .iter()
        .map(|s| ObsView {
            values: outcomes.iter().map(|k| s.effect[k.index()]).collect(),
        })
        .collect()
}

fn column_mean(views: &[ObsView], c: usize) -> f64 {
    let vals: Vec<f64> = views.iter().filter_map(|v| v.values[c]).collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn column_sd(views: &[ObsView], c: usize) -> f64 {
    let vals: Vec<f64> = views.iter().filter_map(|v| v.values[c]).collect();
    if vals.len() < 2 {
        return TAU_FLOOR;
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
    var.sqrt().max(TAU_FLOOR)
}

/// Ordinary least squares of y on x over complete pairs; returns
/// (intercept, slope). Degenerate designs fall back to (mean y, 0).
fn ls_line(views: &[ObsView], cx: usize, cy: usize) -> (f64, f64) {
    let pairs: Vec<(f64, f64)> = views
        .iter()
        .filter_map(|v| v.values[cx].zip(v.values[cy]))
        .collect();
    if pairs.len() < 2 {
        return (column_mean(views, cy), 0.0);
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-12 {
        return (my, 0.0);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Least squares of y on (1, x1, x2) over complete triples.
fn ls_plane(views: &[ObsView], c1: usize, c2: usize, cy: usize) -> (f64, f64, f64) {
    let rows: Vec<(f64, f64, f64)> = views
        .iter()
        .filter_map(|v| match (v.values[c1], v.values[c2], v.values[cy]) {
            (Some(a), Some(b), Some(y)) => Some((a, b, y)),
            _ => None,
        })
        .collect();
    if rows.len() < 3 {
        return (column_mean(views, cy), 0.0, 0.0);
    }
    let n = rows.len();
    let mut xtx = DMatrix::zeros(3, 3);
    let mut xty = DVector::zeros(3);
    for &(a, b, y) in &rows {
        let x = [1.0, a, b];
        for i in 0..3 {
            for j in 0..3 {
                xtx[(i, j)] += x[i] * x[j];
            }
            xty[i] += x[i] * y;
        }
    }
    // Tiny ridge keeps collinear designs solvable.
    for i in 0..3 {
        xtx[(i, i)] += 1e-8 * n as f64;
    }
    match nalgebra::Cholesky::new(xtx) {
        Some(ch) => {
            let b = ch.solve(&xty);
            (b[0], b[1], b[2])
        }
        None => (column_mean(views, cy), 0.0, 0.0),
    }
}

pub(crate) fn initialize_from_views(
    views: &[ObsView],
    spec: &ModelSpec,
    outcomes: &[OutcomeKind],
) -> Result<(HyperParams, Vec<DVector<f64>>)> {
    let dim = outcomes.len();
    let means: Vec<f64> = (0..dim).map(|c| column_mean(views, c)).collect();
    let sds: Vec<f64> = (0..dim).map(|c| column_sd(views, c)).collect();

    let theta = match &spec.kind {
        ModelKind::Bivariate {
            surrogate,
            final_outcome,
        } => {
            let (intercept, _) = ls_line(views, 0, 1);
            HyperParams::Bivariate {
                eta1: means[0],
                lambda20: intercept,
                tau_surrogate: sds[0],
                tau_final: sds[1],
                rho: spec
                    .priors
                    .rho_support(*surrogate, *final_outcome)
                    .midpoint(),
            }
        }
        ModelKind::Trivariate { structure } => match structure {
            ModelStructure::StructuredMain => {
                let (l20, _) = ls_line(views, 0, 1);
                let (l30, _) = ls_line(views, 1, 2);
                HyperParams::TrivariateMain {
                    eta1: means[0],
                    lambda20: l20,
                    lambda30: l30,
                    tau1: sds[0],
                    tau2: sds[1],
                    tau3: sds[2],
                    rho12: spec.priors.rho12_support.midpoint(),
                    rho23: spec.priors.rho23_support.midpoint(),
                }
            }
            ModelStructure::StructuredAlt => {
                let (l30, l31, l32) = ls_plane(views, 0, 1, 2);
                HyperParams::TrivariateAlt {
                    eta1: means[0],
                    lambda20: means[1],
                    lambda30: l30,
                    lambda31: l31,
                    lambda32: l32,
                    psi1: sds[0],
                    psi2: sds[1],
                    psi3: sds[2],
                }
            }
            ModelStructure::Unstructured => {
                let mut theta = HyperParams::TrivariateUnstructured {
                    eta: [means[0], means[1], means[2]],
                    tau: [sds[0], sds[1], sds[2]],
                    rho12: spec.priors.rho12_support.midpoint(),
                    rho13: spec.priors.rho13_support.midpoint(),
                    rho23: spec.priors.rho23_support.midpoint(),
                };
                // Shrink midpoints toward zero until jointly feasible.
                for _ in 0..60 {
                    if rho_feasible(&theta) {
                        break;
                    }
                    if let HyperParams::TrivariateUnstructured {
                        rho12,
                        rho13,
                        rho23,
                        ..
                    } = &mut theta
                    {
                        *rho12 *= 0.5;
                        *rho13 *= 0.5;
                        *rho23 *= 0.5;
                    }
                }
                if !rho_feasible(&theta) {
                    return Err(Error::InvalidConfig(
                        "could not find a feasible unstructured starting point".into(),
                    ));
                }
                theta
            }
        },
    };

    let latents = views
        .iter()
        .map(|v| {
            DVector::from_iterator(
                dim,
                (0..dim).map(|c| v.values[c].unwrap_or(means[c])),
            )
        })
        .collect();
    Ok((theta, latents))
}

pub(crate) fn initialize(
    prepared: &[PreparedStudy],
    spec: &ModelSpec,
    outcomes: &[OutcomeKind],
) -> Result<(HyperParams, Vec<DVector<f64>>)> {
    let views = views_from_prepared(prepared, outcomes.len());
    initialize_from_views(&views, spec, outcomes)
}

pub(crate) fn initialize_raw(
    studies: &[crate::data_model::StudyEffects],
    spec: &ModelSpec,
    outcomes: &[OutcomeKind],
) -> Result<(HyperParams, Vec<DVector<f64>>)> {
    let views = views_from_studies(studies, outcomes);
    initialize_from_views(&views, spec, outcomes)
}

fn jitter_value(x: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
    if x.abs() < 1e-9 {
        0.02 * u
    } else {
        x * (1.0 + 0.2 * u)
    }
}

fn jitter_rho(
    r: f64,
    support: super::SupportInterval,
    rng: &mut impl Rng,
) -> f64 {
    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let jittered = if r.abs() < 1e-9 { r } else { r * (1.0 + 0.2 * u) };
    let margin = 0.01 * support.width();
    jittered.clamp(support.lo + margin, support.hi - margin)
}

/// Deterministic per-chain jitter of up to 20%; chain 0 starts exactly
/// at the data-derived values.
pub(crate) fn jitter_theta(
    theta: HyperParams,
    spec: &ModelSpec,
    seed: u64,
    chain: usize,
) -> HyperParams {
    if chain == 0 {
        return theta;
    }
    let mut rng = substream(seed, "init-jitter", chain as u64);
    let mut out = theta;
    match &mut out {
        HyperParams::Bivariate {
            eta1,
            lambda20,
            tau_surrogate,
            tau_final,
            rho,
        } => {
            *eta1 = jitter_value(*eta1, &mut rng);
            *lambda20 = jitter_value(*lambda20, &mut rng);
            *tau_surrogate = jitter_value(*tau_surrogate, &mut rng).max(1e-4);
            *tau_final = jitter_value(*tau_final, &mut rng).max(1e-4);
            if let ModelKind::Bivariate {
                surrogate,
                final_outcome,
            } = spec.kind
            {
                *rho = jitter_rho(*rho, spec.priors.rho_support(surrogate, final_outcome), &mut rng);
            }
        }
        HyperParams::TrivariateMain {
            eta1,
            lambda20,
            lambda30,
            tau1,
            tau2,
            tau3,
            rho12,
            rho23,
        } => {
            *eta1 = jitter_value(*eta1, &mut rng);
            *lambda20 = jitter_value(*lambda20, &mut rng);
            *lambda30 = jitter_value(*lambda30, &mut rng);
            *tau1 = jitter_value(*tau1, &mut rng).max(1e-4);
            *tau2 = jitter_value(*tau2, &mut rng).max(1e-4);
            *tau3 = jitter_value(*tau3, &mut rng).max(1e-4);
            *rho12 = jitter_rho(*rho12, spec.priors.rho12_support, &mut rng);
            *rho23 = jitter_rho(*rho23, spec.priors.rho23_support, &mut rng);
        }
        HyperParams::TrivariateAlt {
            eta1,
            lambda20,
            lambda30,
            lambda31,
            lambda32,
            psi1,
            psi2,
            psi3,
        } => {
            *eta1 = jitter_value(*eta1, &mut rng);
            *lambda20 = jitter_value(*lambda20, &mut rng);
            *lambda30 = jitter_value(*lambda30, &mut rng);
            *lambda31 = jitter_value(*lambda31, &mut rng);
            *lambda32 = jitter_value(*lambda32, &mut rng);
            *psi1 = jitter_value(*psi1, &mut rng).max(1e-4);
            *psi2 = jitter_value(*psi2, &mut rng).max(1e-4);
            *psi3 = jitter_value(*psi3, &mut rng).max(1e-4);
        }
        HyperParams::TrivariateUnstructured {
            eta,
            tau,
            rho12,
            rho13,
            rho23,
        } => {
            for e in eta.iter_mut() {
                *e = jitter_value(*e, &mut rng);
            }
            for t in tau.iter_mut() {
                *t = jitter_value(*t, &mut rng).max(1e-4);
            }
            *rho12 = jitter_rho(*rho12, spec.priors.rho12_support, &mut rng);
            *rho13 = jitter_rho(*rho13, spec.priors.rho13_support, &mut rng);
            *rho23 = jitter_rho(*rho23, spec.priors.rho23_support, &mut rng);
        }
    }
    // Jitter must not leave the feasible region (unstructured only).
    if !rho_feasible(&out) {
        return theta;
    }
    out
}
