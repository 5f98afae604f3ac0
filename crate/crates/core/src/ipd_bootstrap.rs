//! Within-study correlation estimation from one trial's patient-level
//! data.
//!
//! Patients are resampled with replacement within each arm (so no
//! resample can lose an arm), the three effect estimates are refit per
//! resample, and the pairwise Pearson correlations of the estimates
//! across resamples are returned. Effect estimators: aggregated 2x2 log
//! odds ratio for tumour response and a Cox proportional-hazards log
//! hazard ratio (Breslow ties, Newton on the partial likelihood) for the
//! survival endpoints.

use rand::Rng;

use crate::data_model::{compute_log_or, IpdRecord, OutcomeKind, WithinCorrelations};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::substream;

const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 50;
/// Fraction of resamples that may fail before the bootstrap is rejected.
const MAX_DISCARD_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_resamples: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SurvObs {
    time: f64,
    event: bool,
    experimental: bool,
}

fn survival_obs(ipd: &[IpdRecord], endpoint: OutcomeKind) -> Result<Vec<SurvObs>> {
    let pick = |r: &IpdRecord| -> Option<(f64, bool)> {
        match endpoint {
            OutcomeKind::Pfs => r.pfs_time.zip(r.pfs_event),
            OutcomeKind::Os => r.os_time.zip(r.os_event),
            OutcomeKind::Tr => None,
        }
    };
    if endpoint == OutcomeKind::Tr {
        return Err(Error::InvalidConfig(
            "fit_log_hr expects a survival endpoint (pfs or os)".into(),
        ));
    }
    Ok(ipd
        .iter()
        .filter_map(|r| {
            pick(r).map(|(time, event)| SurvObs {
                time,
                event,
                experimental: r.experimental_arm,
            })
        })
        .collect())
}

/// Breslow-tie score and information accumulated over the risk sets.
fn cox_score(obs: &[SurvObs], order: &[usize], beta: f64) -> (f64, f64) {
    let ebx = beta.exp();
    let (mut s0, mut s1) = (0.0, 0.0);
    let (mut grad, mut info) = (0.0, 0.0);
    let n = order.len();
    let mut i = 0;
    while i < n {
        let t = obs[order[i]].time;
        let mut j = i;
        // Everyone with this exact time enters the risk set before its
        // events are scored.
        while j < n && obs[order[j]].time == t {
            let o = &obs[order[j]];
            let w = if o.experimental { ebx } else { 1.0 };
            s0 += w;
            if o.experimental {
                s1 += w;
            }
            j += 1;
        }
        for k in i..j {
            let o = &obs[order[k]];
            if o.event {
                let p = s1 / s0;
                grad += f64::from(o.experimental) - p;
                info += p * (1.0 - p);
            }
        }
        i = j;
    }
    (grad, info)
}

fn cox_newton(obs: &[SurvObs], endpoint: OutcomeKind) -> Result<f64> {
    let events_exp = obs.iter().filter(|o| o.event && o.experimental).count();
    let events_ctl = obs.iter().filter(|o| o.event && !o.experimental).count();
    if events_exp == 0 || events_ctl == 0 {
        return Err(Error::NonIdentifiable {
            endpoint: endpoint.label().to_string(),
        });
    }

    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| {
        obs[b]
            .time
            .partial_cmp(&obs[a].time)
            .expect("survival times are finite")
            .then(a.cmp(&b))
    });

    let mut beta = 0.0;
    let mut trace = Vec::new();
    for iter in 0..NEWTON_MAX_ITER {
        let (grad, info) = cox_score(obs, &order, beta);
        trace.push((iter, beta, grad.abs()));
        if grad.abs() < NEWTON_TOL {
            return Ok(beta);
        }
        let step = grad / info;
        if !step.is_finite() {
            return Err(Error::NewtonDiverged {
                iterations: iter + 1,
                trace,
            });
        }
        beta += step.clamp(-10.0, 10.0);
        if !beta.is_finite() {
            return Err(Error::NewtonDiverged {
                iterations: iter + 1,
                trace,
            });
        }
    }
    Err(Error::NewtonDiverged {
        iterations: NEWTON_MAX_ITER,
        trace,
    })
}

/// Log hazard ratio (experimental vs control) for one survival endpoint.
///
/// Patients without the endpoint's time/event block are excluded before
/// fitting. Requires at least one event in each arm.
pub fn fit_log_hr(ipd: &[IpdRecord], endpoint: OutcomeKind) -> Result<f64> {
    let obs = survival_obs(ipd, endpoint)?;
    cox_newton(&obs, endpoint)
}

/// Log odds ratio of tumour response from the aggregated 2x2 table.
pub fn fit_log_or_ipd(ipd: &[IpdRecord]) -> Result<f64> {
    let missing = ipd.iter().filter(|r| r.responder.is_none()).count();
    if missing > 0 {
        return Err(Error::IncompleteIpd {
            field: "responder".into(),
            missing,
        });
    }
    let mut r_t = 0u64;
    let mut n_t = 0u64;
    let mut r_c = 0u64;
    let mut n_c = 0u64;
    for rec in ipd {
        let responded = rec.responder == Some(true);
        if rec.experimental_arm {
            n_t += 1;
            r_t += u64::from(responded);
        } else {
            n_c += 1;
            r_c += u64::from(responded);
        }
    }
    compute_log_or(r_t, n_t, r_c, n_c).map(|(effect, _)| effect)
}

struct PatientTriple {
    experimental: bool,
    responder: Option<bool>,
    pfs: Option<(f64, bool)>,
    os: Option<(f64, bool)>,
}

fn triple_estimates(
    patients: &[PatientTriple],
    indices: &[usize],
) -> Result<(f64, f64, f64)> {
    let mut r_t = 0u64;
    let mut n_t = 0u64;
    let mut r_c = 0u64;
    let mut n_c = 0u64;
    let mut pfs = Vec::with_capacity(indices.len());
    let mut os = Vec::with_capacity(indices.len());
    for &i in indices {
        let p = &patients[i];
        let responded = match p.responder {
            Some(r) => r,
            None => {
                return Err(Error::IncompleteIpd {
                    field: "responder".into(),
                    missing: 1,
                })
            }
        };
        if p.experimental {
            n_t += 1;
            r_t += u64::from(responded);
        } else {
            n_c += 1;
            r_c += u64::from(responded);
        }
        if let Some((time, event)) = p.pfs {
            pfs.push(SurvObs {
                time,
                event,
                experimental: p.experimental,
            });
        }
        if let Some((time, event)) = p.os {
            os.push(SurvObs {
                time,
                event,
                experimental: p.experimental,
            });
        }
    }
    let (log_or, _) = compute_log_or(r_t, n_t, r_c, n_c)?;
    let log_hr_pfs = cox_newton(&pfs, OutcomeKind::Pfs)?;
    let log_hr_os = cox_newton(&os, OutcomeKind::Os)?;
    Ok((log_or, log_hr_pfs, log_hr_os))
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::InvalidConfig(
            "bootstrap distribution is degenerate (zero variance)".into(),
        ));
    }
    // Clamp away rounding excursions outside [-1, 1].
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Estimate the three within-study correlations by stratified
/// nonparametric bootstrap over patients.
///
/// Each resample draws patients with replacement within each arm,
/// preserving arm sizes, and refits (log OR TR, log HR PFS, log HR OS).
/// Resamples where any fit fails are discarded; more than 5% discards
/// fail the whole estimation. Fully deterministic in
/// (`ipd`, `cfg.n_resamples`, `cfg.seed`), regardless of parallelism.
pub fn estimate_within_correlations(
    ipd: &[IpdRecord],
    cfg: &BootstrapConfig,
) -> Result<WithinCorrelations> {
    if cfg.n_resamples < 2 {
        return Err(Error::InvalidConfig(
            "n_resamples must be at least 2".into(),
        ));
    }
    let patients: Vec<PatientTriple> = ipd
        .iter()
        .map(|r| PatientTriple {
            experimental: r.experimental_arm,
            responder: r.responder,
            pfs: r.pfs_time.zip(r.pfs_event),
            os: r.os_time.zip(r.os_event),
        })
        .collect();
    let control: Vec<usize> = (0..patients.len())
        .filter(|&i| !patients[i].experimental)
        .collect();
    let experimental: Vec<usize> = (0..patients.len())
        .filter(|&i| patients[i].experimental)
        .collect();

    // The full-data fits must succeed before any resampling happens.
    let all: Vec<usize> = (0..patients.len()).collect();
    triple_estimates(&patients, &all)?;

    let results: Vec<Option<(f64, f64, f64)>> = par::map_indexed(cfg.n_resamples, |r| {
        let mut rng = substream(cfg.seed, "resample", r as u64);
        let mut indices = Vec::with_capacity(patients.len());
        for _ in 0..control.len() {
            indices.push(control[rng.random_range(0..control.len())]);
        }
        for _ in 0..experimental.len() {
            indices.push(experimental[rng.random_range(0..experimental.len())]);
        }
        triple_estimates(&patients, &indices).ok()
    });

    let successes: Vec<(f64, f64, f64)> = results.iter().flatten().copied().collect();
    let failed = cfg.n_resamples - successes.len();
    if successes.len() < 2 {
        return Err(Error::TooFewResamples);
    }
    if failed as f64 > MAX_DISCARD_FRACTION * cfg.n_resamples as f64 {
        return Err(Error::TooManyFailedResamples {
            failed,
            total: cfg.n_resamples,
        });
    }

    let tr: Vec<f64> = successes.iter().map(|t| t.0).collect();
    let pfs: Vec<f64> = successes.iter().map(|t| t.1).collect();
    let os: Vec<f64> = successes.iter().map(|t| t.2).collect();
    WithinCorrelations::new(
        pearson(&tr, &pfs)?,
        pearson(&tr, &os)?,
        pearson(&pfs, &os)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn patient(
        id: &str,
        experimental: bool,
        responder: bool,
        pfs: (f64, bool),
        os: (f64, bool),
    ) -> IpdRecord {
        IpdRecord {
            patient_id: id.to_string(),
            experimental_arm: experimental,
            responder: Some(responder),
            pfs_time: Some(pfs.0),
            pfs_event: Some(pfs.1),
            os_time: Some(os.0),
            os_event: Some(os.1),
        }
    }

    /// Brute-force Breslow partial log-likelihood, independent of the
    /// Newton path.
    fn brute_log_pl(obs: &[(f64, bool, bool)], beta: f64) -> f64 {
        let mut ll = 0.0;
        for &(t, event, experimental) in obs {
            if !event {
                continue;
            }
            let mut denom = 0.0;
            for &(u, _, x) in obs {
                if u >= t {
                    denom += if x { beta.exp() } else { 1.0 };
                }
            }
            ll += if experimental { beta } else { 0.0 } - denom.ln();
        }
        ll
    }

    #[test]
    fn log_hr_zero_for_exchangeable_arms() {
        let mut ipd = Vec::new();
        for (i, (t, e)) in [(3.0, true), (5.0, true), (8.0, false), (11.0, true)]
            .iter()
            .enumerate()
        {
            ipd.push(patient(&format!("c{i}"), false, false, (*t, *e), (*t, *e)));
            ipd.push(patient(&format!("e{i}"), true, false, (*t, *e), (*t, *e)));
        }
        let beta = fit_log_hr(&ipd, OutcomeKind::Pfs).unwrap();
        assert_relative_eq!(beta, 0.0);
    }

    #[test]
    fn log_hr_negates_under_arm_relabeling() {
        let times = [
            (false, 2.0, true),
            (false, 3.5, true),
            (false, 7.0, false),
            (true, 4.0, true),
            (true, 9.0, true),
            (true, 12.0, false),
        ];
        let make = |flip: bool| -> Vec<IpdRecord> {
            times
                .iter()
                .enumerate()
                .map(|(i, &(exp, t, e))| {
                    patient(&format!("p{i}"), exp ^ flip, false, (t, e), (t, e))
                })
                .collect()
        };
        let b1 = fit_log_hr(&make(false), OutcomeKind::Os).unwrap();
        let b2 = fit_log_hr(&make(true), OutcomeKind::Os).unwrap();
        assert_relative_eq!(b1, -b2, epsilon = 1e-7);
    }

    #[test]
    fn log_hr_matches_grid_search_oracle() {
        // Small overlapping-times fixture with an interior maximizer.
        let data = [
            (false, 1.0, true),
            (false, 2.0, true),
            (false, 4.0, true),
            (false, 6.0, false),
            (true, 3.0, true),
            (true, 5.0, true),
            (true, 7.0, true),
            (true, 9.0, false),
        ];
        let ipd: Vec<IpdRecord> = data
            .iter()
            .enumerate()
            .map(|(i, &(exp, t, e))| patient(&format!("p{i}"), exp, false, (t, e), (t, e)))
            .collect();
        let obs: Vec<(f64, bool, bool)> = data.iter().map(|&(x, t, e)| (t, e, x)).collect();

        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut b = -5.0;
        while b <= 5.0 {
            let ll = brute_log_pl(&obs, b);
            if ll > best.0 {
                best = (ll, b);
            }
            b += 1e-4;
        }
        let beta = fit_log_hr(&ipd, OutcomeKind::Pfs).unwrap();
        assert!(
            (beta - best.1).abs() < 1e-4,
            "newton {beta} vs grid {}",
            best.1
        );
    }

    #[test]
    fn log_hr_monotone_likelihood_runs_away() {
        // All control events strictly before all experimental events: the
        // partial likelihood is monotone and the estimate escapes any
        // bounded grid.
        let ipd: Vec<IpdRecord> = (0..4)
            .map(|i| {
                let exp = i >= 2;
                let t = 1.0 + i as f64;
                patient(&format!("p{i}"), exp, false, (t, true), (t, true))
            })
            .collect();
        match fit_log_hr(&ipd, OutcomeKind::Pfs) {
            Ok(beta) => assert!(beta < -5.0, "expected runaway estimate, got {beta}"),
            Err(Error::NewtonDiverged { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn log_hr_requires_events_in_both_arms() {
        let ipd = vec![
            patient("c0", false, false, (2.0, false), (2.0, false)),
            patient("c1", false, false, (3.0, false), (3.0, false)),
            patient("e0", true, false, (1.0, true), (1.0, true)),
        ];
        assert!(matches!(
            fit_log_hr(&ipd, OutcomeKind::Os),
            Err(Error::NonIdentifiable { .. })
        ));
    }

    #[test]
    fn log_or_ipd_matches_direct_woolf_arithmetic() {
        let mut ipd = Vec::new();
        for i in 0..10 {
            ipd.push(patient(&format!("e{i}"), true, i < 3, (1.0, true), (1.0, true)));
            ipd.push(patient(&format!("c{i}"), false, i < 6, (1.0, true), (1.0, true)));
        }
        let effect = fit_log_or_ipd(&ipd).unwrap();
        assert_relative_eq!(
            effect,
            (3.0f64 * 4.0 / (7.0 * 6.0)).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn log_or_ipd_equal_rates_zero_and_full_response_corrects() {
        let mut ipd = Vec::new();
        for i in 0..8 {
            ipd.push(patient(&format!("e{i}"), true, i < 4, (1.0, true), (1.0, true)));
            ipd.push(patient(&format!("c{i}"), false, i < 4, (1.0, true), (1.0, true)));
        }
        assert_relative_eq!(fit_log_or_ipd(&ipd).unwrap(), 0.0);

        for p in ipd.iter_mut().filter(|p| p.experimental_arm) {
            p.responder = Some(true);
        }
        let effect = fit_log_or_ipd(&ipd).unwrap();
        assert!(effect.is_finite() && effect > 0.0);
    }

    fn synthetic_trial(n_per_arm: usize, shared_times: bool, seed: u64) -> Vec<IpdRecord> {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, "ipd-fixture", 0);
        let mut ipd = Vec::new();
        for arm in [false, true] {
            for i in 0..n_per_arm {
                let pfs_t: f64 = 0.1 + 20.0 * rng.random::<f64>();
                let os_t: f64 = if shared_times {
                    pfs_t
                } else {
                    0.1 + 30.0 * rng.random::<f64>()
                };
                let pfs_e = rng.random::<f64>() < 0.8;
                let os_e = if shared_times {
                    pfs_e
                } else {
                    rng.random::<f64>() < 0.7
                };
                ipd.push(IpdRecord {
                    patient_id: format!("{}{i}", if arm { "e" } else { "c" }),
                    experimental_arm: arm,
                    responder: Some(rng.random::<f64>() < 0.35),
                    pfs_time: Some(pfs_t),
                    pfs_event: Some(pfs_e),
                    os_time: Some(os_t),
                    os_event: Some(os_e),
                });
            }
        }
        ipd
    }

    #[test]
    fn bootstrap_is_deterministic_in_seed() {
        let ipd = synthetic_trial(60, false, 11);
        let cfg = BootstrapConfig {
            n_resamples: 200,
            seed: 42,
        };
        let a = estimate_within_correlations(&ipd, &cfg).unwrap();
        let b = estimate_within_correlations(&ipd, &cfg).unwrap();
        assert_eq!(a, b);

        let c = estimate_within_correlations(
            &ipd,
            &BootstrapConfig {
                n_resamples: 200,
                seed: 43,
            },
        )
        .unwrap();
        assert_ne!(a, c);
        // Different seeds stay within a few bootstrap standard errors.
        assert!((a.rho_23 - c.rho_23).abs() < 0.25);
    }

    #[test]
    fn bootstrap_identical_pfs_os_times_gives_unit_correlation() {
        let ipd = synthetic_trial(50, true, 5);
        let cfg = BootstrapConfig {
            n_resamples: 400,
            seed: 9,
        };
        let rho = estimate_within_correlations(&ipd, &cfg).unwrap();
        assert!(rho.rho_23 > 0.98, "rho_23 = {}", rho.rho_23);
    }

    #[test]
    fn bootstrap_rejects_tiny_resample_count() {
        let ipd = synthetic_trial(20, false, 1);
        let cfg = BootstrapConfig {
            n_resamples: 1,
            seed: 1,
        };
        assert!(estimate_within_correlations(&ipd, &cfg).is_err());
    }
}
