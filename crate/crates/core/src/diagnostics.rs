//! Convergence assessment of stored chains: split potential scale
//! reduction, effective sample size with Geyer initial-monotone
//! truncation, and lag autocorrelations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorChains;
use crate::par;

/// Default flag threshold on the split potential scale reduction.
pub const DEFAULT_RHAT_THRESHOLD: f64 = 1.05;
/// Default flag threshold on the effective sample size.
pub const DEFAULT_ESS_THRESHOLD: f64 = 400.0;

const AUTOCORR_LAGS: [usize; 4] = [1, 5, 10, 50];
const MAX_ESS_LAG: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// Split potential scale reduction; `None` when only one chain is
    /// available.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// (lag, autocorrelation) at the standard report lags.
    pub autocorr: Vec<(usize, f64)>,
    /// Chain is (numerically) constant.
    pub degenerate: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub params: Vec<ParamDiagnostics>,
    /// Metropolis acceptance rates per chain and block.
    pub acceptance: Vec<Vec<(String, f64)>>,
    /// Names of flagged parameters.
    pub flags: Vec<String>,
    pub warnings: Vec<String>,
    pub pass: bool,
    pub rhat_threshold: f64,
    pub ess_threshold: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Halve every chain, trimming all to the shortest half length.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Split potential scale reduction over two or more sequences of equal
/// length. Returns `None` on degenerate (zero within-variance) input.
fn rhat_of(sequences: &[Vec<f64>]) -> Option<f64> {
    let n = sequences.first()?.len();
    if n < 2 {
        return None;
    }
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let vars: Vec<f64> = sequences.iter().map(|s| sample_var(s)).collect();
    let w = mean(&vars);
    if w <= 0.0 {
        return None;
    }
    let b_over_n = sample_var(&means);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Biased autocovariance at `lag` (divides by the sequence length).
fn autocov(seq: &[f64], m: f64, lag: usize) -> f64 {
    let n = seq.len();
    if lag >= n {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (seq[i] - m) * (seq[i + lag] - m);
    }
    s / n as f64
}

/// Effective sample size across split sequences using paired
/// autocorrelations with Geyer initial-monotone truncation.
fn ess_of(sequences: &[Vec<f64>]) -> Option<f64> {
    let m = sequences.len();
    let n = sequences.first()?.len();
    if n < 4 {
        return None;
    }
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let chain_var: Vec<f64> = sequences
        .iter()
        .zip(&means)
        .map(|(s, &mu)| autocov(s, mu, 0) * n as f64 / (n as f64 - 1.0))
        .collect();
    let mean_var = mean(&chain_var);
    if mean_var <= 0.0 {
        return None;
    }
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }

    let max_lag = (n - 1).min(MAX_ESS_LAG);
    let rho = |lag: usize| -> f64 {
        let acov = sequences
            .iter()
            .zip(&means)
            .map(|(s, &mu)| autocov(s, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (mean_var - acov * n as f64 / (n as f64 - 1.0)) / var_plus
    };

    // Sum of paired autocorrelations until the first non-positive pair,
    // with the pairs forced to be non-increasing.
    let mut pair_sums = Vec::new();
    let mut lag = 0;
    loop {
        if lag + 1 > max_lag {
            break;
        }
        let even = if lag == 0 { 1.0 } else { rho(lag) };
        let odd = rho(lag + 1);
        let pair = even + odd;
        if pair <= 0.0 {
            break;
        }
        pair_sums.push(pair);
        lag += 2;
    }
    let mut running = f64::INFINITY;
    let mut tau = -1.0;
    for p in pair_sums {
        running = running.min(p);
        tau += 2.0 * running;
    }
    if tau <= 0.0 {
        return None;
    }
    let total = (m * n) as f64;
    Some((total / tau).min(total))
}

fn report_lags(sequences: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let n = sequences.first().map_or(0, Vec::len);
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let acov0: f64 = sequences
        .iter()
        .zip(&means)
        .map(|(s, &mu)| autocov(s, mu, 0))
        .sum::<f64>();
    AUTOCORR_LAGS
        .iter()
        .filter(|&&lag| lag < n)
        .map(|&lag| {
            let ac: f64 = sequences
                .iter()
                .zip(&means)
                .map(|(s, &mu)| autocov(s, mu, lag))
                .sum::<f64>();
            (lag, if acov0 > 0.0 { ac / acov0 } else { 0.0 })
        })
        .collect()
}

fn diagnose_param(
    name: &str,
    chains: &[Vec<f64>],
    rhat_threshold: f64,
    ess_threshold: f64,
) -> ParamDiagnostics {
    let multi_chain = chains.len() > 1;
    let split = split_chains(chains);
    let degenerate = split.iter().all(|s| sample_var(s) <= 0.0);

    let (rhat, ess) = if degenerate {
        // A constant chain has nothing to mix; report the identity value
        // with an explicit flag instead of dividing by zero.
        (if multi_chain { Some(1.0) } else { None }, None)
    } else {
        (
            if multi_chain { rhat_of(&split) } else { None },
            ess_of(&split),
        )
    };
    let flagged = rhat.is_some_and(|r| r > rhat_threshold)
        || ess.is_some_and(|e| e < ess_threshold);
    ParamDiagnostics {
        name: name.to_string(),
        rhat,
        ess,
        autocorr: if degenerate { vec![] } else { report_lags(chains) },
        degenerate,
        flagged,
    }
}

/// Assess convergence with the default thresholds (R-hat 1.05, ESS 400).
pub fn assess(chains: &PosteriorChains) -> Result<DiagnosticsReport> {
    assess_with(chains, DEFAULT_RHAT_THRESHOLD, DEFAULT_ESS_THRESHOLD)
}

pub fn assess_with(
    chains: &PosteriorChains,
    rhat_threshold: f64,
    ess_threshold: f64,
) -> Result<DiagnosticsReport> {
    if chains.retained_per_chain() < 2 {
        return Err(Error::InvalidConfig(
            "diagnostics need at least 2 retained draws per chain".into(),
        ));
    }
    let mut warnings = Vec::new();
    if chains.n_chains() < 2 {
        warnings.push(
            "single chain: potential scale reduction is unavailable; report is degraded".into(),
        );
    }
    if chains.retained_per_chain() < 100 {
        warnings.push(format!(
            "only {} retained draws per chain; diagnostics are unreliable below 100",
            chains.retained_per_chain()
        ));
    }

    let columns: Vec<Vec<Vec<f64>>> = (0..chains.param_names.len())
        .map(|idx| {
            chains
                .chains
                .iter()
                .map(|c| c.draws.iter().map(|row| row[idx]).collect())
                .collect()
        })
        .collect();
    let params: Vec<ParamDiagnostics> = par::map_indexed(chains.param_names.len(), |idx| {
        diagnose_param(
            &chains.param_names[idx],
            &columns[idx],
            rhat_threshold,
            ess_threshold,
        )
    });

    let flags: Vec<String> = params
        .iter()
        .filter(|p| p.flagged)
        .map(|p| p.name.clone())
        .collect();
    let pass = flags.is_empty() && chains.n_chains() >= 2;
    Ok(DiagnosticsReport {
        params,
        acceptance: chains.chains.iter().map(|c| c.acceptance.clone()).collect(),
        flags,
        warnings,
        pass,
        rhat_threshold,
        ess_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_chain(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = crate::rng::substream(seed, "diag-test", 0);
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + shift)
            .collect()
    }

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let chains = vec![normal_chain(1, 5000, 0.0), normal_chain(2, 5000, 0.0)];
        let split = split_chains(&chains);
        let r = rhat_of(&split).unwrap();
        assert!((1.0..1.01).contains(&r), "rhat = {r}");
    }

    #[test]
    fn rhat_flags_separated_chains() {
        let chains = vec![normal_chain(1, 1000, 0.0), normal_chain(2, 1000, 10.0)];
        let split = split_chains(&chains);
        let r = rhat_of(&split).unwrap();
        assert!(r > 2.0, "rhat = {r}");
    }

    #[test]
    fn constant_chain_reports_degenerate() {
        let d = diagnose_param(
            "c",
            &[vec![2.5; 500], vec![2.5; 500]],
            DEFAULT_RHAT_THRESHOLD,
            DEFAULT_ESS_THRESHOLD,
        );
        assert!(d.degenerate);
        assert_eq!(d.rhat, Some(1.0));
        assert_eq!(d.ess, None);
    }

    #[test]
    fn ess_of_iid_sequence_close_to_n() {
        let chains = vec![normal_chain(3, 5000, 0.0), normal_chain(4, 5000, 0.0)];
        let split = split_chains(&chains);
        let ess = ess_of(&split).unwrap();
        let total = 10_000.0;
        assert!(
            (ess - total).abs() / total < 0.2,
            "ess = {ess} for {total} iid draws"
        );
    }

    #[test]
    fn ess_detects_autocorrelation() {
        // AR(1) with phi = 0.9 has ESS ~ n * (1-phi)/(1+phi) ~ n/19.
        let mut rng = crate::rng::substream(9, "diag-test", 1);
        let mut chains = Vec::new();
        for _ in 0..2 {
            let mut x = 0.0;
            let chain: Vec<f64> = (0..5000)
                .map(|_| {
                    x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                    x
                })
                .collect();
            chains.push(chain);
        }
        let ess = ess_of(&split_chains(&chains)).unwrap();
        assert!(ess < 2000.0, "ess = {ess}");
    }

    #[test]
    fn rhat_invariant_under_affine_transform() {
        let chains = vec![normal_chain(5, 2000, 0.2), normal_chain(6, 2000, 0.0)];
        let r1 = rhat_of(&split_chains(&chains)).unwrap();
        let transformed: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|x| -3.75 * x + 11.0).collect())
            .collect();
        let r2 = rhat_of(&split_chains(&transformed)).unwrap();
        assert!((r1 - r2).abs() < 1e-10, "{r1} vs {r2}");
    }
}
