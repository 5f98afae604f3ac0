//! Between-study law: parameter layout, covariance assembly, conditional
//! chain coefficients and likelihood evaluation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{HyperParams, ModelKind, ModelSpec, ModelStructure, SupportInterval};

const LN_2PI: f64 = 1.8378770664093453;

/// Conditional-chain coefficients implied by the hyperparameters; these
/// are recomputed from each draw, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Slope of the second outcome on the first.
    pub lambda21: f64,
    /// Slope of the third outcome on the second (trivariate only). Under
    /// the alternative structure this is the free regression coefficient
    /// on the second outcome.
    pub lambda32: Option<f64>,
    pub psi1_sq: f64,
    pub psi2_sq: f64,
    pub psi3_sq: Option<f64>,
    /// Correlation between first and third outcome implied by the
    /// structure (product of the two chain correlations under the main
    /// structure).
    pub rho13_implied: Option<f64>,
}

impl DerivedParams {
    pub fn from_hyper(theta: &HyperParams) -> Self {
        match *theta {
            HyperParams::Bivariate {
                tau_surrogate,
                tau_final,
                rho,
                ..
            } => DerivedParams {
                lambda21: rho * tau_final / tau_surrogate,
                lambda32: None,
                psi1_sq: tau_surrogate * tau_surrogate,
                psi2_sq: tau_final * tau_final * (1.0 - rho * rho),
                psi3_sq: None,
                rho13_implied: None,
            },
            HyperParams::TrivariateMain {
                tau1,
                tau2,
                tau3,
                rho12,
                rho23,
                ..
            } => DerivedParams {
                lambda21: rho12 * tau2 / tau1,
                lambda32: Some(rho23 * tau3 / tau2),
                psi1_sq: tau1 * tau1,
                psi2_sq: tau2 * tau2 * (1.0 - rho12 * rho12),
                psi3_sq: Some(tau3 * tau3 * (1.0 - rho23 * rho23)),
                rho13_implied: Some(rho12 * rho23),
            },
            HyperParams::TrivariateAlt {
                lambda31,
                lambda32,
                psi1,
                psi2,
                psi3,
                ..
            } => {
                let tau3_sq =
                    psi3 * psi3 + lambda31 * lambda31 * psi1 * psi1 + lambda32 * lambda32 * psi2 * psi2;
                DerivedParams {
                    lambda21: 0.0,
                    lambda32: Some(lambda32),
                    psi1_sq: psi1 * psi1,
                    psi2_sq: psi2 * psi2,
                    psi3_sq: Some(psi3 * psi3),
                    rho13_implied: Some(lambda31 * psi1 / tau3_sq.sqrt()),
                }
            }
            HyperParams::TrivariateUnstructured {
                tau, rho12, rho13, rho23, ..
            } => DerivedParams {
                lambda21: rho12 * tau[1] / tau[0],
                lambda32: Some(rho23 * tau[2] / tau[1]),
                psi1_sq: tau[0] * tau[0],
                psi2_sq: tau[1] * tau[1] * (1.0 - rho12 * rho12),
                psi3_sq: Some(tau[2] * tau[2] * (1.0 - rho23 * rho23)),
                rho13_implied: Some(rho13),
            },
        }
    }
}

/// Marginal between-study covariance of the latent effects implied by
/// the hyperparameters.
pub fn between_cov(theta: &HyperParams) -> Result<DMatrix<f64>> {
    let m = match *theta {
        HyperParams::Bivariate {
            tau_surrogate,
            tau_final,
            rho,
            ..
        } => {
            check_scale("tau", tau_surrogate)?;
            check_scale("tau", tau_final)?;
            check_corr("rho", rho)?;
            let c = rho * tau_surrogate * tau_final;
            DMatrix::from_row_slice(
                2,
                2,
                &[tau_surrogate * tau_surrogate, c, c, tau_final * tau_final],
            )
        }
        HyperParams::TrivariateMain {
            tau1,
            tau2,
            tau3,
            rho12,
            rho23,
            ..
        } => {
            for t in [tau1, tau2, tau3] {
                check_scale("tau", t)?;
            }
            check_corr("rho12", rho12)?;
            check_corr("rho23", rho23)?;
            let mut m = DMatrix::zeros(3, 3);
            m[(0, 0)] = tau1 * tau1;
            m[(1, 1)] = tau2 * tau2;
            m[(2, 2)] = tau3 * tau3;
            m[(0, 1)] = rho12 * tau1 * tau2;
            m[(1, 2)] = rho23 * tau2 * tau3;
            m[(0, 2)] = rho12 * rho23 * tau1 * tau3;
            m[(1, 0)] = m[(0, 1)];
            m[(2, 1)] = m[(1, 2)];
            m[(2, 0)] = m[(0, 2)];
            m
        }
        HyperParams::TrivariateAlt {
            lambda31,
            lambda32,
            psi1,
            psi2,
            psi3,
            ..
        } => {
            for p in [psi1, psi2, psi3] {
                check_scale("psi", p)?;
            }
            let v1 = psi1 * psi1;
            let v2 = psi2 * psi2;
            let mut m = DMatrix::zeros(3, 3);
            m[(0, 0)] = v1;
            m[(1, 1)] = v2;
            m[(0, 2)] = lambda31 * v1;
            m[(1, 2)] = lambda32 * v2;
            m[(2, 2)] = psi3 * psi3 + lambda31 * lambda31 * v1 + lambda32 * lambda32 * v2;
            m[(2, 0)] = m[(0, 2)];
            m[(2, 1)] = m[(1, 2)];
            m
        }
        HyperParams::TrivariateUnstructured {
            tau,
            rho12,
            rho13,
            rho23,
            ..
        } => {
            for t in tau {
                check_scale("tau", t)?;
            }
            for (n, r) in [("rho12", rho12), ("rho13", rho13), ("rho23", rho23)] {
                check_corr(n, r)?;
            }
            let mut m = DMatrix::zeros(3, 3);
            for i in 0..3 {
                m[(i, i)] = tau[i] * tau[i];
            }
            m[(0, 1)] = rho12 * tau[0] * tau[1];
            m[(0, 2)] = rho13 * tau[0] * tau[2];
            m[(1, 2)] = rho23 * tau[1] * tau[2];
            m[(1, 0)] = m[(0, 1)];
            m[(2, 0)] = m[(0, 2)];
            m[(2, 1)] = m[(1, 2)];
            if nalgebra::Cholesky::new(m.clone()).is_none() {
                return Err(Error::InvalidConfig(
                    "unstructured between-study covariance is not positive definite".into(),
                ));
            }
            m
        }
    };
    Ok(m)
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

fn check_corr(name: &str, v: f64) -> Result<()> {
    if v > -1.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must lie strictly inside (-1,1), got {v}"
        )))
    }
}

/// Marginal between-study mean vector of the latent effects.
pub(crate) fn mean_vector(theta: &HyperParams) -> DVector<f64> {
    match *theta {
        HyperParams::Bivariate {
            eta1, lambda20, ..
        } => {
            let d = DerivedParams::from_hyper(theta);
            DVector::from_vec(vec![eta1, lambda20 + d.lambda21 * eta1])
        }
        HyperParams::TrivariateMain {
            eta1,
            lambda20,
            lambda30,
            ..
        } => {
            let d = DerivedParams::from_hyper(theta);
            let m2 = lambda20 + d.lambda21 * eta1;
            let m3 = lambda30 + d.lambda32.expect("trivariate") * m2;
            DVector::from_vec(vec![eta1, m2, m3])
        }
        HyperParams::TrivariateAlt {
            eta1,
            lambda20,
            lambda30,
            lambda31,
            lambda32,
            ..
        } => DVector::from_vec(vec![
            eta1,
            lambda20,
            lambda30 + lambda31 * eta1 + lambda32 * lambda20,
        ]),
        HyperParams::TrivariateUnstructured { eta, .. } => DVector::from_vec(eta.to_vec()),
    }
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
}

/// Joint log density of the latent study effects under the between-study
/// law. Returns negative infinity for parameter values outside the
/// feasible region (used as the Metropolis rejection path).
pub(crate) fn between_loglik(theta: &HyperParams, latents: &[DVector<f64>]) -> f64 {
    match *theta {
        HyperParams::Bivariate {
            eta1, lambda20, ..
        } => {
            let d = DerivedParams::from_hyper(theta);
            if d.psi1_sq <= 0.0 || d.psi2_sq <= 0.0 {
                return f64::NEG_INFINITY;
            }
            latents
                .iter()
                .map(|mu| {
                    ln_normal(mu[0], eta1, d.psi1_sq)
                        + ln_normal(mu[1], lambda20 + d.lambda21 * mu[0], d.psi2_sq)
                })
                .sum()
        }
        HyperParams::TrivariateMain {
            eta1,
            lambda20,
            lambda30,
            ..
        } => {
            let d = DerivedParams::from_hyper(theta);
            let (l21, l32) = (d.lambda21, d.lambda32.expect("trivariate"));
            let p3 = d.psi3_sq.expect("trivariate");
            if d.psi1_sq <= 0.0 || d.psi2_sq <= 0.0 || p3 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            latents
                .iter()
                .map(|mu| {
                    ln_normal(mu[0], eta1, d.psi1_sq)
                        + ln_normal(mu[1], lambda20 + l21 * mu[0], d.psi2_sq)
                        + ln_normal(mu[2], lambda30 + l32 * mu[1], p3)
                })
                .sum()
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
            let (v1, v2, v3) = (psi1 * psi1, psi2 * psi2, psi3 * psi3);
            if v1 <= 0.0 || v2 <= 0.0 || v3 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            latents
                .iter()
                .map(|mu| {
                    ln_normal(mu[0], eta1, v1)
                        + ln_normal(mu[1], lambda20, v2)
                        + ln_normal(mu[2], lambda30 + lambda31 * mu[0] + lambda32 * mu[1], v3)
                })
                .sum()
        }
        HyperParams::TrivariateUnstructured { .. } => {
            let cov = match between_cov(theta) {
                Ok(c) => c,
                Err(_) => return f64::NEG_INFINITY,
            };
            let chol = match nalgebra::Cholesky::new(cov) {
                Some(c) => c,
                None => return f64::NEG_INFINITY,
            };
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mean = mean_vector(theta);
            latents
                .iter()
                .map(|mu| {
                    let d = mu - &mean;
                    let z = chol.solve(&d);
                    -0.5 * (3.0 * LN_2PI + log_det + d.dot(&z))
                })
                .sum()
        }
    }
}

/// Stable parameter order for storage: locations, then scales, then free
/// correlations.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub hyper_names: Vec<String>,
    pub scale_names: Vec<String>,
    pub rho_names: Vec<String>,
    pub rho_supports: Vec<SupportInterval>,
}

impl Layout {
    pub fn n_hyper(&self) -> usize {
        self.hyper_names.len()
    }
}

pub(crate) fn layout_for(spec: &ModelSpec) -> Layout {
    match &spec.kind {
        ModelKind::Bivariate {
            surrogate,
            final_outcome,
        } => {
            let (ia, ib) = (surrogate.display_index(), final_outcome.display_index());
            let scale_names = vec![format!("tau{ia}"), format!("tau{ib}")];
            let rho_names = vec![format!("rho{ia}{ib}")];
            let mut hyper_names = vec!["eta1".to_string(), "lambda20".to_string()];
            hyper_names.extend(scale_names.iter().cloned());
            hyper_names.extend(rho_names.iter().cloned());
            Layout {
                hyper_names,
                scale_names,
                rho_names,
                rho_supports: vec![spec.priors.rho_support(*surrogate, *final_outcome)],
            }
        }
        ModelKind::Trivariate { structure } => match structure {
            ModelStructure::StructuredMain => Layout {
                hyper_names: [
                    "eta1", "lambda20", "lambda30", "tau1", "tau2", "tau3", "rho12", "rho23",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                scale_names: vec!["tau1".into(), "tau2".into(), "tau3".into()],
                rho_names: vec!["rho12".into(), "rho23".into()],
                rho_supports: vec![
                    spec.priors.rho12_support,
                    spec.priors.rho23_support,
                ],
            },
            ModelStructure::StructuredAlt => Layout {
                hyper_names: [
                    "eta1", "lambda20", "lambda30", "lambda31", "lambda32", "psi1", "psi2", "psi3",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                scale_names: vec!["psi1".into(), "psi2".into(), "psi3".into()],
                rho_names: vec![],
                rho_supports: vec![],
            },
            ModelStructure::Unstructured => Layout {
                hyper_names: [
                    "eta1", "eta2", "eta3", "tau1", "tau2", "tau3", "rho12", "rho13", "rho23",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                scale_names: vec!["tau1".into(), "tau2".into(), "tau3".into()],
                rho_names: vec!["rho12".into(), "rho13".into(), "rho23".into()],
                rho_supports: vec![
                    spec.priors.rho12_support,
                    spec.priors.rho13_support,
                    spec.priors.rho23_support,
                ],
            },
        },
    }
}

pub(crate) fn hyper_to_row(theta: &HyperParams) -> Vec<f64> {
    match *theta {
        HyperParams::Bivariate {
            eta1,
            lambda20,
            tau_surrogate,
            tau_final,
            rho,
        } => vec![eta1, lambda20, tau_surrogate, tau_final, rho],
        HyperParams::TrivariateMain {
            eta1,
            lambda20,
            lambda30,
            tau1,
            tau2,
            tau3,
            rho12,
            rho23,
        } => vec![eta1, lambda20, lambda30, tau1, tau2, tau3, rho12, rho23],
        HyperParams::TrivariateAlt {
            eta1,
            lambda20,
            lambda30,
            lambda31,
            lambda32,
            psi1,
            psi2,
            psi3,
        } => vec![
            eta1, lambda20, lambda30, lambda31, lambda32, psi1, psi2, psi3,
        ],
        HyperParams::TrivariateUnstructured {
            eta,
            tau,
            rho12,
            rho13,
            rho23,
        } => vec![
            eta[0], eta[1], eta[2], tau[0], tau[1], tau[2], rho12, rho13, rho23,
        ],
    }
}

pub(crate) fn hyper_from_row(spec: &ModelSpec, row: &[f64]) -> HyperParams {
    match &spec.kind {
        ModelKind::Bivariate { .. } => HyperParams::Bivariate {
            eta1: row[0],
            lambda20: row[1],
            tau_surrogate: row[2],
            tau_final: row[3],
            rho: row[4],
        },
        ModelKind::Trivariate { structure } => match structure {
            ModelStructure::StructuredMain => HyperParams::TrivariateMain {
                eta1: row[0],
                lambda20: row[1],
                lambda30: row[2],
                tau1: row[3],
                tau2: row[4],
                tau3: row[5],
                rho12: row[6],
                rho23: row[7],
            },
            ModelStructure::StructuredAlt => HyperParams::TrivariateAlt {
                eta1: row[0],
                lambda20: row[1],
                lambda30: row[2],
                lambda31: row[3],
                lambda32: row[4],
                psi1: row[5],
                psi2: row[6],
                psi3: row[7],
            },
            ModelStructure::Unstructured => HyperParams::TrivariateUnstructured {
                eta: [row[0], row[1], row[2]],
                tau: [row[3], row[4], row[5]],
                rho12: row[6],
                rho13: row[7],
                rho23: row[8],
            },
        },
    }
}

pub(crate) fn scale_values(theta: &HyperParams) -> Vec<f64> {
    match *theta {
        HyperParams::Bivariate {
            tau_surrogate,
            tau_final,
            ..
        } => vec![tau_surrogate, tau_final],
        HyperParams::TrivariateMain {
            tau1, tau2, tau3, ..
        } => vec![tau1, tau2, tau3],
        HyperParams::TrivariateAlt {
            psi1, psi2, psi3, ..
        } => vec![psi1, psi2, psi3],
        HyperParams::TrivariateUnstructured { tau, .. } => tau.to_vec(),
    }
}

pub(crate) fn set_scale(theta: &mut HyperParams, idx: usize, value: f64) {
    match theta {
        HyperParams::Bivariate {
            tau_surrogate,
            tau_final,
            ..
        } => *[tau_surrogate, tau_final][idx] = value,
        HyperParams::TrivariateMain {
            tau1, tau2, tau3, ..
        } => *[tau1, tau2, tau3][idx] = value,
        HyperParams::TrivariateAlt {
            psi1, psi2, psi3, ..
        } => *[psi1, psi2, psi3][idx] = value,
        HyperParams::TrivariateUnstructured { tau, .. } => tau[idx] = value,
    }
}

pub(crate) fn rho_values(theta: &HyperParams) -> Vec<f64> {
    match *theta {
        HyperParams::Bivariate { rho, .. } => vec![rho],
        HyperParams::TrivariateMain { rho12, rho23, .. } => vec![rho12, rho23],
        HyperParams::TrivariateAlt { .. } => vec![],
        HyperParams::TrivariateUnstructured {
            rho12, rho13, rho23, ..
        } => vec![rho12, rho13, rho23],
    }
}

pub(crate) fn set_rho(theta: &mut HyperParams, idx: usize, value: f64) {
    match theta {
        HyperParams::Bivariate { rho, .. } => *rho = value,
        HyperParams::TrivariateMain { rho12, rho23, .. } => *[rho12, rho23][idx] = value,
        HyperParams::TrivariateAlt { .. } => unreachable!("alt structure has no free correlation"),
        HyperParams::TrivariateUnstructured {
            rho12, rho13, rho23, ..
        } => *[rho12, rho13, rho23][idx] = value,
    }
}

/// Correlation-matrix feasibility for the unstructured variant; the
/// structured variants are feasible whenever scales are positive and
/// correlations lie inside (-1, 1).
pub(crate) fn rho_feasible(theta: &HyperParams) -> bool {
    match *theta {
        HyperParams::TrivariateUnstructured {
            rho12, rho13, rho23, ..
        } => {
            let m = DMatrix::from_row_slice(
                3,
                3,
                &[1.0, rho12, rho13, rho12, 1.0, rho23, rho13, rho23, 1.0],
            );
            nalgebra::Cholesky::new(m).is_some()
        }
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::OutcomeKind;
    use crate::mcmc::PriorSpec;
    use approx::assert_relative_eq;

    fn main_theta() -> HyperParams {
        HyperParams::TrivariateMain {
            eta1: 0.3,
            lambda20: 0.0,
            lambda30: 0.1,
            tau1: 1.0,
            tau2: 1.0,
            tau3: 1.0,
            rho12: -0.5,
            rho23: 0.5,
        }
    }

    #[test]
    fn between_cov_zero_correlations_is_diagonal() {
        let theta = HyperParams::TrivariateMain {
            eta1: 0.0,
            lambda20: 0.0,
            lambda30: 0.0,
            tau1: 0.5,
            tau2: 0.3,
            tau3: 0.15,
            rho12: 0.0,
            rho23: 0.0,
        };
        let t = between_cov(&theta).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(t[(i, j)], 0.0);
                }
            }
        }
        assert_relative_eq!(t[(0, 0)], 0.25);
        assert_relative_eq!(t[(1, 1)], 0.09);
        assert_relative_eq!(t[(2, 2)], 0.0225);
    }

    #[test]
    fn between_cov_rejects_boundary_correlations() {
        let theta = HyperParams::TrivariateMain {
            eta1: 0.0,
            lambda20: 0.0,
            lambda30: 0.0,
            tau1: 1.0,
            tau2: 1.0,
            tau3: 1.0,
            rho12: -1.0,
            rho23: 1.0,
        };
        assert!(between_cov(&theta).is_err());
    }

    #[test]
    fn between_cov_main_structure_and_cholesky() {
        let t = between_cov(&main_theta()).unwrap();
        assert_relative_eq!(t[(0, 2)], -0.25, max_relative = 1e-14);
        assert!(nalgebra::Cholesky::new(t).is_some());
    }

    #[test]
    fn derived_params_satisfy_chain_identities() {
        let theta = HyperParams::TrivariateMain {
            eta1: 0.3,
            lambda20: -0.1,
            lambda30: 0.05,
            tau1: 0.5,
            tau2: 0.3,
            tau3: 0.15,
            rho12: -0.8333333333333334,
            rho23: 0.8,
        };
        let d = DerivedParams::from_hyper(&theta);
        assert_relative_eq!(d.lambda21, -0.5, max_relative = 1e-12);
        assert_relative_eq!(d.lambda32.unwrap(), 0.4, max_relative = 1e-12);
        // Two algebraic routes to the conditional variances.
        let t = between_cov(&theta).unwrap();
        let psi2_schur = t[(1, 1)] - t[(0, 1)] * t[(0, 1)] / t[(0, 0)];
        let psi3_schur = t[(2, 2)] - t[(1, 2)] * t[(1, 2)] / t[(1, 1)];
        assert_relative_eq!(d.psi2_sq, psi2_schur, max_relative = 1e-12);
        assert_relative_eq!(d.psi3_sq.unwrap(), psi3_schur, max_relative = 1e-12);
    }

    #[test]
    fn unstructured_between_cov_requires_pd() {
        let theta = HyperParams::TrivariateUnstructured {
            eta: [0.0; 3],
            tau: [1.0; 3],
            rho12: 0.9,
            rho13: -0.9,
            rho23: 0.9,
        };
        assert!(between_cov(&theta).is_err());
        assert!(!rho_feasible(&theta));
    }

    #[test]
    fn loglik_matches_mvn_route_for_main_structure() {
        // The product-chain evaluation must agree with the full MVN
        // density built from the marginal covariance.
        let theta = main_theta();
        let latents = vec![
            DVector::from_vec(vec![0.1, -0.2, 0.3]),
            DVector::from_vec(vec![-0.4, 0.5, 0.0]),
        ];
        let chain_ll = between_loglik(&theta, &latents);

        let cov = between_cov(&theta).unwrap();
        let chol = nalgebra::Cholesky::new(cov).unwrap();
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mean = mean_vector(&theta);
        let mvn_ll: f64 = latents
            .iter()
            .map(|mu| {
                let d = mu - &mean;
                let z = chol.solve(&d);
                -0.5 * (3.0 * LN_2PI + log_det + d.dot(&z))
            })
            .sum();
        assert_relative_eq!(chain_ll, mvn_ll, max_relative = 1e-10);
    }

    #[test]
    fn layouts_have_consistent_roundtrip() {
        let spec = ModelSpec::trivariate(ModelStructure::Unstructured, PriorSpec::informative());
        let layout = layout_for(&spec);
        assert_eq!(layout.n_hyper(), 9);
        let theta = HyperParams::TrivariateUnstructured {
            eta: [0.1, 0.2, 0.3],
            tau: [0.4, 0.5, 0.6],
            rho12: -0.2,
            rho13: -0.1,
            rho23: 0.3,
        };
        let row = hyper_to_row(&theta);
        assert_eq!(row.len(), layout.n_hyper());
        assert_eq!(hyper_from_row(&spec, &row), theta);
    }

    #[test]
    fn bivariate_layout_uses_canonical_outcome_indices() {
        let spec = ModelSpec::bivariate(OutcomeKind::Pfs, OutcomeKind::Os, PriorSpec::informative())
            .unwrap();
        let layout = layout_for(&spec);
        assert_eq!(
            layout.hyper_names,
            vec!["eta1", "lambda20", "tau2", "tau3", "rho23"]
        );
        assert_eq!(layout.rho_supports[0], spec.priors.rho23_support);
    }
}
