//! Leave-one-out predictive validation: hide one study's final-outcome
//! effect, refit, and score the prediction.
//!
//! The predicted interval inflates the known sampling variance of the
//! hidden effect by the posterior variance of the study's latent effect;
//! a quantile interval of the imputed hidden observation is carried
//! alongside since the two constructions need not agree exactly.

use serde::{Deserialize, Serialize};

use crate::data_model::{OutcomeKind, StudyEffects, WithinCorrelations};
use crate::error::{Error, Result};
use crate::mcmc::{fit_masked, FitHarness, McmcConfig, ModelSpec, PosteriorChains};
use crate::par;
use crate::rng::substream_keyed;
use crate::surrogacy::{quantile, summarize};

/// Normal 97.5% point used for the observed and predicted intervals.
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub study_id: String,
    /// Observed effect on the target outcome.
    pub observed: f64,
    /// 95% interval of the observed effect from its sampling variance.
    pub observed_interval: (f64, f64),
    pub predicted_mean: f64,
    pub predicted_interval: (f64, f64),
    /// Sampling variance plus posterior variance of the latent effect.
    pub predictive_variance: f64,
    /// Equal-tailed 95% interval of the imputed hidden observation.
    pub imputed_interval: (f64, f64),
    /// Observed point estimate lies inside the predicted interval.
    pub covered: bool,
}

/// Per-study and summary width comparison of two prediction runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyWidths {
    pub study_id: String,
    pub width_first: f64,
    pub width_second: f64,
    /// width_first - width_second; positive when the second run is
    /// narrower. Exactly antisymmetric under argument swap.
    pub width_diff: f64,
    /// 100 * (width_first - width_second) / width_first; positive when
    /// the second run is narrower than the first (baseline) run.
    pub percent_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthComparison {
    pub per_study: Vec<StudyWidths>,
    pub average_percent_reduction: f64,
    pub min_percent_reduction: f64,
    pub max_percent_reduction: f64,
}

/// Leave-one-out prediction of the target outcome for every study.
///
/// Each refit hides one study's target effect (its sampling variance
/// stays known) and runs on a seed derived from (base seed, study_id);
/// refits are independent and may run in parallel. Any refit failure
/// aborts the whole run, since a partial cross-validation table is
/// misleading.
pub fn loo_predict(
    data: &[StudyEffects],
    rho_w: &WithinCorrelations,
    spec: &ModelSpec,
    cfg: &McmcConfig,
    target: OutcomeKind,
) -> Result<Vec<PredictionResult>> {
    if !spec.outcomes().contains(&target) {
        return Err(Error::InvalidConfig(format!(
            "target outcome {target} is not part of the model"
        )));
    }
    for study in data {
        if !study.is_observed(target) {
            return Err(Error::TargetMissing {
                study_id: study.study_id.clone(),
            });
        }
    }
    let mut ids: Vec<String> = data.iter().map(|s| s.study_id.clone()).collect();
    ids.sort();

    let results = par::try_map_indexed(ids.len(), |i| {
        let id = &ids[i];
        predict_one(data, rho_w, spec, cfg, target, id).map_err(|e| Error::RefitFailed {
            study_id: id.clone(),
            source: Box::new(e),
        })
    })?;
    Ok(results)
}

fn predict_one(
    data: &[StudyEffects],
    rho_w: &WithinCorrelations,
    spec: &ModelSpec,
    cfg: &McmcConfig,
    target: OutcomeKind,
    study_id: &str,
) -> Result<PredictionResult> {
    use rand::Rng;
    let study = data
        .iter()
        .find(|s| s.study_id == study_id)
        .expect("id came from data");
    let observed = study.effect[target.index()].expect("target observed");
    let sigma_sq = study.var[target.index()].expect("target observed");

    let seed = substream_keyed(cfg.seed, "cv-study", study_id).random::<u64>();
    let cfg_n = cfg.with_seed(seed);
    let masks = vec![(study_id.to_string(), target)];
    let chains = fit_masked(data, rho_w, spec, &cfg_n, &masks, &FitHarness::default())?;

    let mu_draws = chains.pooled(&PosteriorChains::mu_column(study_id, target))?;
    let n = mu_draws.len() as f64;
    let predicted_mean = mu_draws.iter().sum::<f64>() / n;
    let mu_var = mu_draws
        .iter()
        .map(|x| (x - predicted_mean) * (x - predicted_mean))
        .sum::<f64>()
        / (n - 1.0);
    let predictive_variance = sigma_sq + mu_var;
    let half = Z_95 * predictive_variance.sqrt();
    let predicted_interval = (predicted_mean - half, predicted_mean + half);

    let imp = summarize(&chains.pooled(&PosteriorChains::ymiss_column(study_id, target))?);

    let obs_half = Z_95 * sigma_sq.sqrt();
    Ok(PredictionResult {
        study_id: study_id.to_string(),
        observed,
        observed_interval: (observed - obs_half, observed + obs_half),
        predicted_mean,
        predicted_interval,
        predictive_variance,
        imputed_interval: (imp.lo, imp.hi),
        covered: predicted_interval.0 <= observed && observed <= predicted_interval.1,
    })
}

fn width(interval: (f64, f64)) -> f64 {
    interval.1 - interval.0
}

/// Compare predicted-interval widths of two runs over the same studies.
///
/// The per-study percent reduction is relative to the first (baseline)
/// run; positive values mean the second run produced narrower
/// intervals. The raw width differences are exactly antisymmetric under
/// argument swap.
pub fn compare_widths(
    first: &[PredictionResult],
    second: &[PredictionResult],
) -> Result<WidthComparison> {
    let ids_first: Vec<&String> = first.iter().map(|r| &r.study_id).collect();
    let ids_second: Vec<&String> = second.iter().map(|r| &r.study_id).collect();
    let only_left: Vec<String> = ids_first
        .iter()
        .filter(|id| !ids_second.contains(id))
        .map(|s| s.to_string())
        .collect();
    let only_right: Vec<String> = ids_second
        .iter()
        .filter(|id| !ids_first.contains(id))
        .map(|s| s.to_string())
        .collect();
    if !only_left.is_empty() || !only_right.is_empty() {
        return Err(Error::MismatchedStudySets {
            only_left,
            only_right,
        });
    }

    let mut per_study = Vec::with_capacity(first.len());
    for a in first {
        let b = second
            .iter()
            .find(|r| r.study_id == a.study_id)
            .expect("sets match");
        let (wa, wb) = (width(a.predicted_interval), width(b.predicted_interval));
        per_study.push(StudyWidths {
            study_id: a.study_id.clone(),
            width_first: wa,
            width_second: wb,
            width_diff: wa - wb,
            percent_reduction: 100.0 * (wa - wb) / wa,
        });
    }
    let percents: Vec<f64> = per_study.iter().map(|s| s.percent_reduction).collect();
    let average = percents.iter().sum::<f64>() / percents.len() as f64;
    Ok(WidthComparison {
        average_percent_reduction: average,
        min_percent_reduction: percents.iter().copied().fold(f64::INFINITY, f64::min),
        max_percent_reduction: percents.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        per_study,
    })
}

/// Quantile interval of pooled draws (used by the imputed-observation
/// interval emitted alongside the normal-approximation interval).
pub fn quantile_interval(draws: &[f64], p_lo: f64, p_hi: f64) -> (f64, f64) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    (quantile(&sorted, p_lo), quantile(&sorted, p_hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, lo: f64, hi: f64) -> PredictionResult {
        PredictionResult {
            study_id: id.to_string(),
            observed: 0.0,
            observed_interval: (-0.1, 0.1),
            predicted_mean: 0.5 * (lo + hi),
            predicted_interval: (lo, hi),
            predictive_variance: 1.0,
            imputed_interval: (lo, hi),
            covered: true,
        }
    }

    #[test]
    fn identical_runs_compare_to_zero() {
        let a = vec![result("S1", -1.0, 1.0), result("S2", -0.5, 0.7)];
        let cmp = compare_widths(&a, &a).unwrap();
        assert!(cmp.per_study.iter().all(|s| s.percent_reduction == 0.0));
        assert_eq!(cmp.average_percent_reduction, 0.0);
    }

    #[test]
    fn uniformly_narrower_second_run_reads_ten_percent() {
        let a = vec![result("S1", 0.0, 1.0), result("S2", 0.0, 2.0)];
        let b = vec![result("S1", 0.05, 0.95), result("S2", 0.1, 1.9)];
        let cmp = compare_widths(&a, &b).unwrap();
        for s in &cmp.per_study {
            assert!((s.percent_reduction - 10.0).abs() < 1e-12);
        }
        assert!((cmp.average_percent_reduction - 10.0).abs() < 1e-12);
    }

    #[test]
    fn wider_second_run_reads_minus_four_percent() {
        let a = vec![result("S1", 0.0, 0.50)];
        let b = vec![result("S1", 0.0, 0.52)];
        let cmp = compare_widths(&a, &b).unwrap();
        assert!((cmp.per_study[0].percent_reduction + 4.0).abs() < 1e-12);
    }

    #[test]
    fn width_differences_are_exactly_antisymmetric() {
        let a = vec![result("S1", 0.0, 0.50), result("S2", -1.0, 0.3)];
        let b = vec![result("S1", 0.0, 0.52), result("S2", -0.8, 0.1)];
        let ab = compare_widths(&a, &b).unwrap();
        let ba = compare_widths(&b, &a).unwrap();
        for (x, y) in ab.per_study.iter().zip(&ba.per_study) {
            assert_eq!(x.width_diff, -y.width_diff);
            assert_eq!(
                x.percent_reduction.signum(),
                -y.percent_reduction.signum()
            );
        }
    }

    #[test]
    fn mismatched_sets_list_symmetric_difference() {
        let a = vec![result("S1", 0.0, 1.0), result("S2", 0.0, 1.0)];
        let b = vec![result("S2", 0.0, 1.0), result("S3", 0.0, 1.0)];
        match compare_widths(&a, &b).unwrap_err() {
            Error::MismatchedStudySets {
                only_left,
                only_right,
            } => {
                assert_eq!(only_left, vec!["S1"]);
                assert_eq!(only_right, vec!["S3"]);
            }
            e => panic!("unexpected error {e}"),
        }
    }
}
