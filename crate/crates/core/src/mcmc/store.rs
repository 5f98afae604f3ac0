//! Retained-draw storage and on-disk persistence of fitted chains.
//!
//! Each chain is written as `chain_<k>.csv` with one row per retained
//! draw and one column per scalar parameter (stable names: the
//! hyperparameters, then `mu[<study_id>][<k>]` latent effects, then
//! `ymiss[<study_id>][<k>]` imputed masked observations), together with
//! a `meta.json` carrying the model, configuration, seeds and
//! acceptance rates.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::{OutcomeKind, WithinCorrelations};
use crate::error::{Error, Result};

use super::between::hyper_from_row;
use super::sampler::ChainOutput;
use super::{HyperParams, McmcConfig, ModelContext, ModelSpec};

/// Retained draws of one chain plus its Metropolis acceptance rates
/// (measured after the adaptation window).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDraws {
    pub draws: Vec<Vec<f64>>,
    pub acceptance: Vec<(String, f64)>,
}

/// Stored MCMC output of one fit.
#[derive(Debug, Clone)]
pub struct PosteriorChains {
    pub spec: ModelSpec,
    pub config: McmcConfig,
    pub rho_w: WithinCorrelations,
    pub outcomes: Vec<OutcomeKind>,
    pub study_ids: Vec<String>,
    pub param_names: Vec<String>,
    /// The first `n_hyper` columns are the hyperparameters.
    pub n_hyper: usize,
    pub chains: Vec<ChainDraws>,
    pub dropped_studies: Vec<String>,
}

impl PosteriorChains {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn retained_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no stored parameter `{name}`")))
    }

    /// Column name of a study's latent effect on an outcome.
    pub fn mu_column(study_id: &str, k: OutcomeKind) -> String {
        format!("mu[{study_id}][{}]", k.display_index())
    }

    /// Column name of a study's imputed masked observation.
    pub fn ymiss_column(study_id: &str, k: OutcomeKind) -> String {
        format!("ymiss[{study_id}][{}]", k.display_index())
    }

    /// One column per chain.
    pub fn per_chain(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let idx = self.column_index(name)?;
        Ok(self
            .chains
            .iter()
            .map(|c| c.draws.iter().map(|row| row[idx]).collect())
            .collect())
    }

    /// All chains concatenated, chain order then draw order.
    pub fn pooled(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        Ok(self
            .chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |row| row[idx]))
            .collect())
    }

    /// Mean and sample variance of a pooled column.
    pub fn pooled_mean_var(&self, name: &str) -> Result<(f64, f64)> {
        let v = self.pooled(name)?;
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Ok((mean, var))
    }

    /// Hyperparameter draws pooled across chains.
    pub fn hyper_draws(&self) -> impl Iterator<Item = HyperParams> + '_ {
        self.chains.iter().flat_map(move |c| {
            c.draws
                .iter()
                .map(move |row| hyper_from_row(&self.spec, &row[..self.n_hyper]))
        })
    }
}

pub(crate) fn assemble(
    ctx: ModelContext,
    config: McmcConfig,
    rho_w: WithinCorrelations,
    chains: Vec<ChainOutput>,
) -> PosteriorChains {
    let mut param_names = ctx.layout.hyper_names.clone();
    for study in &ctx.studies {
        for c in 0..ctx.outcomes.len() {
            param_names.push(PosteriorChains::mu_column(&study.id, ctx.outcomes[c]));
        }
    }
    for study in &ctx.studies {
        for &c in &study.mask_idx {
            param_names.push(PosteriorChains::ymiss_column(&study.id, ctx.outcomes[c]));
        }
    }
    PosteriorChains {
        spec: ctx.spec,
        config,
        rho_w,
        outcomes: ctx.outcomes,
        study_ids: ctx.studies.iter().map(|s| s.id.clone()).collect(),
        param_names,
        n_hyper: ctx.layout.n_hyper(),
        chains: chains
            .into_iter()
            .map(|c| ChainDraws {
                draws: c.draws,
                acceptance: c.acceptance,
            })
            .collect(),
        dropped_studies: ctx.dropped_studies,
    }
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    spec: ModelSpec,
    config: McmcConfig,
    rho_w: WithinCorrelations,
    outcomes: Vec<OutcomeKind>,
    study_ids: Vec<String>,
    param_names: Vec<String>,
    n_hyper: usize,
    dropped_studies: Vec<String>,
    acceptance: Vec<Vec<(String, f64)>>,
}

/// Persist chains as CSV files plus `meta.json`; output is byte-stable
/// for identical inputs.
pub fn save_chains(dir: impl AsRef<Path>, chains: &PosteriorChains) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = MetaFile {
        spec: chains.spec,
        config: chains.config,
        rho_w: chains.rho_w,
        outcomes: chains.outcomes.clone(),
        study_ids: chains.study_ids.clone(),
        param_names: chains.param_names.clone(),
        n_hyper: chains.n_hyper,
        dropped_studies: chains.dropped_studies.clone(),
        acceptance: chains
            .chains
            .iter()
            .map(|c| c.acceptance.clone())
            .collect(),
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    for (k, chain) in chains.chains.iter().enumerate() {
        let file = fs::File::create(dir.join(format!("chain_{k}.csv")))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", chains.param_names.join(","))?;
        for row in &chain.draws {
            let mut line = String::with_capacity(row.len() * 12);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Load chains persisted by [`save_chains`].
pub fn load_chains(dir: impl AsRef<Path>) -> Result<PosteriorChains> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::MissingChainFile {
            file: "meta.json".into(),
        });
    }
    let meta: MetaFile = serde_json::from_str(&fs::read_to_string(meta_path)?)?;

    let mut chains = Vec::with_capacity(meta.acceptance.len());
    for (k, acceptance) in meta.acceptance.iter().enumerate() {
        let path = dir.join(format!("chain_{k}.csv"));
        if !path.exists() {
            return Err(Error::MissingChainFile {
                file: format!("chain_{k}.csv"),
            });
        }
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let expected = meta.param_names.join(",");
        if header != expected {
            return Err(Error::MalformedHeader {
                expected,
                found: header,
            });
        }
        let mut draws = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| {
                Error::Ingest(format!("chain_{k}.csv row {}: {e}", i + 2))
            })?;
            if row.len() != meta.param_names.len() {
                return Err(Error::Ingest(format!(
                    "chain_{k}.csv row {}: expected {} values, found {}",
                    i + 2,
                    meta.param_names.len(),
                    row.len()
                )));
            }
            draws.push(row);
        }
        chains.push(ChainDraws {
            draws,
            acceptance: acceptance.clone(),
        });
    }

    Ok(PosteriorChains {
        spec: meta.spec,
        config: meta.config,
        rho_w: meta.rho_w,
        outcomes: meta.outcomes,
        study_ids: meta.study_ids,
        param_names: meta.param_names,
        n_hyper: meta.n_hyper,
        chains,
        dropped_studies: meta.dropped_studies,
    })
}
