//! Surrogacy criteria: posterior summaries of the intercept, slope,
//! conditional variance and adjusted R-squared of a surrogate-to-final
//! regression, with the mechanical verdicts (intercept interval contains
//! zero, slope interval excludes zero).

use serde::{Deserialize, Serialize};

use crate::data_model::OutcomeKind;
use crate::error::{Error, Result};
use crate::mcmc::{DerivedParams, HyperParams, ModelKind, ModelStructure, PosteriorChains};

/// Posterior mean with the equal-tailed 95% credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ParamSummary {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogacyCriteria {
    pub surrogate: OutcomeKind,
    pub final_outcome: OutcomeKind,
    pub model_dim: usize,
    pub intercept: ParamSummary,
    pub slope: ParamSummary,
    pub cond_variance: ParamSummary,
    pub r2_adjusted: ParamSummary,
    pub intercept_contains_zero: bool,
    pub slope_excludes_zero: bool,
}

/// Equal-tailed quantile by linear interpolation of the order
/// statistics.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub(crate) fn summarize(draws: &[f64]) -> ParamSummary {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    // Summing in sorted order makes the summary exactly invariant to
    // the order the draws arrived in.
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    ParamSummary {
        mean,
        lo: quantile(&sorted, 0.025),
        hi: quantile(&sorted, 0.975),
    }
}

/// Per-draw (intercept, slope, conditional variance, adjusted R2) for
/// the requested pair.
pub(crate) fn per_draw_criteria(
    theta: &HyperParams,
    surrogate: OutcomeKind,
    final_outcome: OutcomeKind,
) -> (f64, f64, f64, f64) {
    let d = DerivedParams::from_hyper(theta);
    match *theta {
        HyperParams::Bivariate { lambda20, rho, .. } => {
            (lambda20, d.lambda21, d.psi2_sq, rho * rho)
        }
        HyperParams::TrivariateMain {
            lambda20,
            lambda30,
            rho12,
            rho23,
            ..
        } => {
            if surrogate == OutcomeKind::Tr && final_outcome == OutcomeKind::Pfs {
                (lambda20, d.lambda21, d.psi2_sq, rho12 * rho12)
            } else {
                (
                    lambda30,
                    d.lambda32.expect("trivariate"),
                    d.psi3_sq.expect("trivariate"),
                    rho23 * rho23,
                )
            }
        }
        HyperParams::TrivariateAlt {
            lambda30,
            lambda31,
            lambda32,
            psi1,
            psi2,
            psi3,
            ..
        } => {
            let psi3_sq = psi3 * psi3;
            let tau3_sq = psi3_sq
                + lambda31 * lambda31 * psi1 * psi1
                + lambda32 * lambda32 * psi2 * psi2;
            let slope = if surrogate == OutcomeKind::Tr {
                lambda31
            } else {
                lambda32
            };
            // Joint adjusted R2: heterogeneity of the final outcome
            // explained by both surrogates together.
            (lambda30, slope, psi3_sq, 1.0 - psi3_sq / tau3_sq)
        }
        HyperParams::TrivariateUnstructured {
            eta,
            tau,
            rho12,
            rho13,
            rho23,
        } => {
            let (i, j) = (surrogate.index(), final_outcome.index());
            let rho = match (surrogate, final_outcome) {
                (OutcomeKind::Tr, OutcomeKind::Pfs) => rho12,
                (OutcomeKind::Tr, OutcomeKind::Os) => rho13,
                _ => rho23,
            };
            let slope = rho * tau[j] / tau[i];
            let intercept = eta[j] - slope * eta[i];
            let cond_var = tau[j] * tau[j] * (1.0 - rho * rho);
            (intercept, slope, cond_var, rho * rho)
        }
    }
}

fn check_pair(
    chains: &PosteriorChains,
    surrogate: OutcomeKind,
    final_outcome: OutcomeKind,
) -> Result<()> {
    if surrogate.index() >= final_outcome.index() {
        return Err(Error::PairNotModeled {
            surrogate,
            final_outcome,
            hint: "the surrogate must precede the final outcome in canonical order".into(),
        });
    }
    match chains.spec.kind {
        ModelKind::Bivariate {
            surrogate: s,
            final_outcome: f,
        } => {
            if (s, f) != (surrogate, final_outcome) {
                return Err(Error::PairNotModeled {
                    surrogate,
                    final_outcome,
                    hint: format!("this fit models {s} -> {f}; fit the corresponding bivariate model"),
                });
            }
        }
        ModelKind::Trivariate { structure } => match structure {
            ModelStructure::StructuredMain => {
                if surrogate == OutcomeKind::Tr && final_outcome == OutcomeKind::Os {
                    return Err(Error::PairNotModeled {
                        surrogate,
                        final_outcome,
                        hint: "tr -> os is indirect under the main structure; \
                               fit the corresponding bivariate model"
                            .into(),
                    });
                }
            }
            ModelStructure::StructuredAlt => {
                if surrogate == OutcomeKind::Tr && final_outcome == OutcomeKind::Pfs {
                    return Err(Error::PairNotModeled {
                        surrogate,
                        final_outcome,
                        hint: "the surrogates are independent under the alternative structure; \
                               fit the corresponding bivariate model"
                            .into(),
                    });
                }
            }
            ModelStructure::Unstructured => {}
        },
    }
    Ok(())
}

/// Pairs for which this fit yields direct surrogacy summaries.
pub fn derivable_pairs(chains: &PosteriorChains) -> Vec<(OutcomeKind, OutcomeKind)> {
    use OutcomeKind::*;
    match chains.spec.kind {
        ModelKind::Bivariate {
            surrogate,
            final_outcome,
        } => vec![(surrogate, final_outcome)],
        ModelKind::Trivariate { structure } => match structure {
            ModelStructure::StructuredMain => vec![(Tr, Pfs), (Pfs, Os)],
            ModelStructure::StructuredAlt => vec![(Tr, Os), (Pfs, Os)],
            ModelStructure::Unstructured => vec![(Tr, Pfs), (Tr, Os), (Pfs, Os)],
        },
    }
}

/// Posterior surrogacy summaries for one ordered outcome pair.
pub fn criteria(
    chains: &PosteriorChains,
    surrogate: OutcomeKind,
    final_outcome: OutcomeKind,
) -> Result<SurrogacyCriteria> {
    check_pair(chains, surrogate, final_outcome)?;
    let n = chains.n_chains() * chains.retained_per_chain();
    if n == 0 {
        return Err(Error::InvalidConfig("no retained draws".into()));
    }
    let mut intercepts = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    let mut cond_vars = Vec::with_capacity(n);
    let mut r2s = Vec::with_capacity(n);
    for theta in chains.hyper_draws() {
        let (i, s, v, r) = per_draw_criteria(&theta, surrogate, final_outcome);
        intercepts.push(i);
        slopes.push(s);
        cond_vars.push(v);
        r2s.push(r);
    }
    let intercept = summarize(&intercepts);
    let slope = summarize(&slopes);
    Ok(SurrogacyCriteria {
        surrogate,
        final_outcome,
        model_dim: chains.spec.dim(),
        intercept,
        slope,
        cond_variance: summarize(&cond_vars),
        r2_adjusted: summarize(&r2s),
        intercept_contains_zero: intercept.contains(0.0),
        slope_excludes_zero: !slope.contains(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{ChainDraws, McmcConfig, ModelSpec, PriorSpec};
    use crate::data_model::WithinCorrelations;
    use approx::assert_relative_eq;

    fn fake_chains(spec: ModelSpec, hyper_rows: Vec<Vec<f64>>) -> PosteriorChains {
        let layout_len = hyper_rows[0].len();
        let names: Vec<String> = match spec.kind {
            ModelKind::Bivariate { .. } => {
                vec!["eta1", "lambda20", "tau2", "tau3", "rho23"]
            }
            ModelKind::Trivariate { .. } => vec![
                "eta1", "lambda20", "lambda30", "tau1", "tau2", "tau3", "rho12", "rho23",
            ],
        }
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(names.len(), layout_len);
        PosteriorChains {
            spec,
            config: McmcConfig::new(10, 5, 1, 1, 0),
            rho_w: WithinCorrelations::published_defaults(),
            outcomes: spec.outcomes(),
            study_ids: vec![],
            param_names: names,
            n_hyper: layout_len,
            chains: vec![ChainDraws {
                draws: hyper_rows,
                acceptance: vec![],
            }],
            dropped_studies: vec![],
        }
    }

    #[test]
    fn constant_rho_gives_constant_r2() {
        let spec = ModelSpec::trivariate(ModelStructure::StructuredMain, PriorSpec::informative());
        // Every draw has rho23 = 0.8 -> R2 = 0.64 exactly.
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let w = 0.1 + 0.01 * i as f64;
                vec![0.3, 0.0, 0.1, 0.5, 0.3, w, -0.4, 0.8]
            })
            .collect();
        let chains = fake_chains(spec, rows);
        let c = criteria(&chains, OutcomeKind::Pfs, OutcomeKind::Os).unwrap();
        assert_relative_eq!(c.r2_adjusted.mean, 0.64, max_relative = 1e-12);
        assert_relative_eq!(c.r2_adjusted.lo, 0.64, max_relative = 1e-12);
        assert_relative_eq!(c.r2_adjusted.hi, 0.64, max_relative = 1e-12);
    }

    #[test]
    fn positive_slope_draws_exclude_zero() {
        let spec = ModelSpec::trivariate(ModelStructure::StructuredMain, PriorSpec::informative());
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![0.3, 0.0, 0.1, 0.5, 0.3, 0.15, -0.4, 0.2 + 0.005 * i as f64])
            .collect();
        let chains = fake_chains(spec, rows);
        let c = criteria(&chains, OutcomeKind::Pfs, OutcomeKind::Os).unwrap();
        assert!(c.slope_excludes_zero);
        assert!(c.slope.mean > 0.0);
    }

    #[test]
    fn indirect_pair_is_rejected_under_main_structure() {
        let spec = ModelSpec::trivariate(ModelStructure::StructuredMain, PriorSpec::informative());
        let chains = fake_chains(spec, vec![vec![0.3, 0.0, 0.1, 0.5, 0.3, 0.15, -0.4, 0.8]]);
        let err = criteria(&chains, OutcomeKind::Tr, OutcomeKind::Os).unwrap_err();
        assert!(matches!(err, Error::PairNotModeled { .. }));
        assert!(err.to_string().contains("bivariate"));
    }

    #[test]
    fn summaries_invariant_to_draw_order() {
        let spec = ModelSpec::trivariate(ModelStructure::StructuredMain, PriorSpec::informative());
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64 / 199.0;
                vec![0.3, -0.1 + t, 0.1, 0.5, 0.3, 0.15, -0.3 - 0.4 * t, 0.1 + 0.7 * t]
            })
            .collect();
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = criteria(
            &fake_chains(spec, rows),
            OutcomeKind::Pfs,
            OutcomeKind::Os,
        )
        .unwrap();
        let b = criteria(
            &fake_chains(spec, reversed),
            OutcomeKind::Pfs,
            OutcomeKind::Os,
        )
        .unwrap();
        assert_eq!(a.slope, b.slope);
        assert_eq!(a.r2_adjusted, b.r2_adjusted);
    }

    #[test]
    fn per_draw_identities_hold_in_structured_models() {
        let theta = HyperParams::TrivariateMain {
            eta1: 0.3,
            lambda20: -0.05,
            lambda30: 0.02,
            tau1: 0.5,
            tau2: 0.3,
            tau3: 0.15,
            rho12: -0.7,
            rho23: 0.6,
        };
        let (_, _, _, r2_23) = per_draw_criteria(&theta, OutcomeKind::Pfs, OutcomeKind::Os);
        let (_, _, _, r2_12) = per_draw_criteria(&theta, OutcomeKind::Tr, OutcomeKind::Pfs);
        assert_relative_eq!(r2_23, 0.36, max_relative = 1e-12);
        assert_relative_eq!(r2_12, 0.49, max_relative = 1e-12);
    }

    #[test]
    fn quantiles_are_ordered() {
        let draws: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.7919).sin()).collect();
        let s = summarize(&draws);
        assert!(s.lo <= s.mean && s.mean <= s.hi);
    }
}
