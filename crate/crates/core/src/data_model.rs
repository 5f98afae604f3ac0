//! Domain types, CSV ingestion and within-study covariance assembly.
//!
//! Outcomes follow the canonical index order 1 = tumour response (log
//! odds ratio), 2 = progression-free survival (log hazard ratio),
//! 3 = overall survival (log hazard ratio). Study-level data carry an
//! effect estimate and its sampling variance per reported outcome;
//! missing outcomes are represented as absent, never as pseudo-values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

/// Eigenvalue floor below which the assembled covariance gets one round
/// of diagonal jitter.
const PD_EIGEN_FLOOR: f64 = 1e-10;

/// The three modeled outcomes in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    /// Tumour response; effect scale is the log odds ratio.
    Tr,
    /// Progression-free survival; effect scale is the log hazard ratio.
    Pfs,
    /// Overall survival; effect scale is the log hazard ratio.
    Os,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 3] = [OutcomeKind::Tr, OutcomeKind::Pfs, OutcomeKind::Os];

    /// Zero-based canonical index.
    pub fn index(self) -> usize {
        match self {
            OutcomeKind::Tr => 0,
            OutcomeKind::Pfs => 1,
            OutcomeKind::Os => 2,
        }
    }

    /// One-based index as used in stored parameter names (`mu[id][k]`).
    pub fn display_index(self) -> usize {
        self.index() + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            OutcomeKind::Tr => "tr",
            OutcomeKind::Pfs => "pfs",
            OutcomeKind::Os => "os",
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tr" => Ok(OutcomeKind::Tr),
            "pfs" => Ok(OutcomeKind::Pfs),
            "os" => Ok(OutcomeKind::Os),
            other => Err(Error::InvalidConfig(format!("unknown outcome `{other}`"))),
        }
    }
}

/// Treatment class of a trial, used by the subgroup filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TherapyClass {
    SystemicChemo,
    AntiEgfr,
    AntiAngiogenic,
    Mta,
    Iha,
}

impl TherapyClass {
    pub fn token(self) -> &'static str {
        match self {
            TherapyClass::SystemicChemo => "chemo",
            TherapyClass::AntiEgfr => "egfr",
            TherapyClass::AntiAngiogenic => "angio",
            TherapyClass::Mta => "mta",
            TherapyClass::Iha => "iha",
        }
    }
}

impl std::str::FromStr for TherapyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chemo" => Ok(TherapyClass::SystemicChemo),
            "egfr" => Ok(TherapyClass::AntiEgfr),
            "angio" => Ok(TherapyClass::AntiAngiogenic),
            "mta" => Ok(TherapyClass::Mta),
            "iha" => Ok(TherapyClass::Iha),
            other => Err(Error::Ingest(format!("unknown therapy class `{other}`"))),
        }
    }
}

impl fmt::Display for TherapyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One trial's observed log-scale effects with sampling variances.
///
/// `effect[k]` and `var[k]` are indexed by [`OutcomeKind::index`]; an
/// outcome is either fully present (effect and positive variance) or
/// fully absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEffects {
    pub study_id: String,
    pub therapy_class: TherapyClass,
    pub allows_crossover: Option<bool>,
    pub effect: [Option<f64>; 3],
    pub var: [Option<f64>; 3],
}

impl StudyEffects {
    /// Build a study, enforcing the presence and positivity invariants.
    pub fn new(
        study_id: impl Into<String>,
        therapy_class: TherapyClass,
        allows_crossover: Option<bool>,
        effect: [Option<f64>; 3],
        var: [Option<f64>; 3],
    ) -> Result<Self> {
        let study_id = study_id.into();
        for k in OutcomeKind::ALL {
            let i = k.index();
            match (effect[i], var[i]) {
                (Some(e), Some(v)) => {
                    if !e.is_finite() || !v.is_finite() {
                        return Err(Error::Ingest(format!(
                            "study `{study_id}`: non-finite {k} value"
                        )));
                    }
                    if v <= 0.0 {
                        return Err(Error::Ingest(format!(
                            "study `{study_id}`: var_{k} must be positive, got {v}"
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Ingest(format!(
                        "study `{study_id}`: effect and variance for {k} must be present together"
                    )));
                }
            }
        }
        let out = Self {
            study_id,
            therapy_class,
            allows_crossover,
            effect,
            var,
        };
        if out.n_observed() == 0 {
            return Err(Error::Ingest(format!(
                "study `{}`: no outcomes",
                out.study_id
            )));
        }
        Ok(out)
    }

    pub fn is_observed(&self, k: OutcomeKind) -> bool {
        self.effect[k.index()].is_some()
    }

    pub fn n_observed(&self) -> usize {
        self.effect.iter().filter(|e| e.is_some()).count()
    }

    /// Observed outcomes in canonical order.
    pub fn observed_outcomes(&self) -> Vec<OutcomeKind> {
        OutcomeKind::ALL
            .into_iter()
            .filter(|k| self.is_observed(*k))
            .collect()
    }

    /// Return a copy with outcome `k` removed. Errors if that would leave
    /// the study without any outcome.
    pub fn with_outcome_masked(&self, k: OutcomeKind) -> Result<Self> {
        let mut out = self.clone();
        out.effect[k.index()] = None;
        out.var[k.index()] = None;
        if out.n_observed() == 0 {
            return Err(Error::Ingest(format!(
                "study `{}`: masking {k} would leave no outcomes",
                self.study_id
            )));
        }
        Ok(out)
    }
}

/// Shared within-study correlations between pairs of effect estimates.
///
/// `rho_12` pairs TR with PFS, `rho_13` TR with OS, `rho_23` PFS with OS;
/// the same values are applied to every study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithinCorrelations {
    pub rho_12: f64,
    pub rho_13: f64,
    pub rho_23: f64,
}

impl WithinCorrelations {
    /// Validate ranges and positive semi-definiteness of the implied
    /// correlation matrix (eigenvalue tolerance 1e-8).
    pub fn new(rho_12: f64, rho_13: f64, rho_23: f64) -> Result<Self> {
        let out = Self {
            rho_12,
            rho_13,
            rho_23,
        };
        for (name, r) in [("rho_12", rho_12), ("rho_13", rho_13), ("rho_23", rho_23)] {
            if !(-1.0..=1.0).contains(&r) || !r.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [-1,1], got {r}"
                )));
            }
        }
        let eig = nalgebra::SymmetricEigen::new(out.correlation_matrix());
        if eig.eigenvalues.min() < -1e-8 {
            return Err(Error::InvalidConfig(format!(
                "within-study correlation matrix is not positive semi-definite \
                 (min eigenvalue {})",
                eig.eigenvalues.min()
            )));
        }
        Ok(out)
    }

    /// Values estimated from the single available IPD trial, shipped as
    /// engine defaults.
    pub fn published_defaults() -> Self {
        Self {
            rho_12: -0.433,
            rho_13: -0.333,
            rho_23: 0.513,
        }
    }

    /// Correlation between two distinct outcomes.
    pub fn get(&self, a: OutcomeKind, b: OutcomeKind) -> f64 {
        use OutcomeKind::*;
        match (a.min(b), a.max(b)) {
            (Tr, Pfs) => self.rho_12,
            (Tr, Os) => self.rho_13,
            (Pfs, Os) => self.rho_23,
            _ => 1.0,
        }
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(3, 3);
        for a in OutcomeKind::ALL {
            for b in OutcomeKind::ALL {
                if a != b {
                    m[(a.index(), b.index())] = self.get(a, b);
                }
            }
        }
        m
    }
}

/// Within-study covariance over a study's observed outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct WithinCov {
    pub matrix: DMatrix<f64>,
    /// Row/column meaning, canonical order.
    pub index_map: Vec<OutcomeKind>,
}

/// Log odds ratio and Woolf variance from a 2x2 response table.
///
/// When any cell of the table is zero, 0.5 is added to all four cells
/// before both the effect and the variance are computed.
pub fn compute_log_or(r_t: u64, n_t: u64, r_c: u64, n_c: u64) -> Result<(f64, f64)> {
    if n_t == 0 || n_c == 0 {
        return Err(Error::EmptyArm);
    }
    if r_t > n_t {
        return Err(Error::CountExceedsArm { r: r_t, n: n_t });
    }
    if r_c > n_c {
        return Err(Error::CountExceedsArm { r: r_c, n: n_c });
    }
    let mut a = r_t as f64;
    let mut b = (n_t - r_t) as f64;
    let mut c = r_c as f64;
    let mut d = (n_c - r_c) as f64;
    if a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0 {
        a += 0.5;
        b += 0.5;
        c += 0.5;
        d += 0.5;
    }
    let effect = (a * d / (b * c)).ln();
    let variance = 1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d;
    Ok((effect, variance))
}

/// Within-study covariance over the study's observed outcomes, using the
/// shared correlations for the off-diagonals.
///
/// Missing outcomes are marginalized out: their rows and columns are
/// simply omitted. If the assembled matrix has a minimum eigenvalue below
/// 1e-10 it receives one round of 1e-10 diagonal jitter; if it still
/// fails a Cholesky factorization the study is rejected.
pub fn build_within_cov(study: &StudyEffects, rho: &WithinCorrelations) -> Result<WithinCov> {
    build_within_cov_subset(study, rho, &OutcomeKind::ALL)
}

/// As [`build_within_cov`] but restricted to a modeled subset of
/// outcomes (the bivariate models only see their pair).
pub fn build_within_cov_subset(
    study: &StudyEffects,
    rho: &WithinCorrelations,
    subset: &[OutcomeKind],
) -> Result<WithinCov> {
    let observed: Vec<OutcomeKind> = subset
        .iter()
        .copied()
        .filter(|k| study.is_observed(*k))
        .collect();
    if observed.is_empty() {
        return Err(Error::Ingest(format!(
            "study `{}`: no observed outcomes among the modeled set",
            study.study_id
        )));
    }
    let vars: Vec<f64> = observed
        .iter()
        .map(|k| study.var[k.index()].expect("observed outcome has variance"))
        .collect();
    let m = assemble_cov_with_jitter(&observed, &vars, rho, &study.study_id)?;
    Ok(WithinCov {
        matrix: m,
        index_map: observed,
    })
}

/// Assemble a covariance matrix over `kinds` from variances and the
/// shared correlations, applying the one-shot jitter rule and verifying
/// positive definiteness by Cholesky.
pub(crate) fn assemble_cov_with_jitter(
    kinds: &[OutcomeKind],
    vars: &[f64],
    rho: &WithinCorrelations,
    study_id: &str,
) -> Result<DMatrix<f64>> {
    let d = kinds.len();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = vars[i];
        for j in (i + 1)..d {
            let cov = vars[i].sqrt() * vars[j].sqrt() * rho.get(kinds[i], kinds[j]);
            m[(i, j)] = cov;
            m[(j, i)] = cov;
        }
    }
    if d > 1 {
        let min_eig = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.min();
        if min_eig < PD_EIGEN_FLOOR {
            for i in 0..d {
                m[(i, i)] += PD_EIGEN_FLOOR;
            }
        }
    }
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(Error::NotPositiveDefinite {
            study_id: study_id.to_string(),
        });
    }
    Ok(m)
}

/// One patient's record from an individual-patient-data export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpdRecord {
    pub patient_id: String,
    /// false = control arm, true = experimental arm.
    pub experimental_arm: bool,
    pub responder: Option<bool>,
    pub pfs_time: Option<f64>,
    pub pfs_event: Option<bool>,
    pub os_time: Option<f64>,
    pub os_event: Option<bool>,
}

impl IpdRecord {
    fn outcome_blocks(&self) -> usize {
        usize::from(self.responder.is_some())
            + usize::from(self.pfs_time.is_some())
            + usize::from(self.os_time.is_some())
    }
}

/// Outcome of parsing a study-level CSV: accepted studies, per-row error
/// reports for rejected lines, and a completeness summary.
#[derive(Debug, Clone, Default)]
pub struct StudyIngest {
    pub studies: Vec<StudyEffects>,
    pub row_errors: Vec<RowError>,
    /// Number of accepted studies reporting exactly 1, 2 and 3 outcomes.
    pub outcome_counts: [usize; 3],
}

impl StudyIngest {
    pub fn count_with_outcomes(&self, n: usize) -> usize {
        self.outcome_counts.get(n.wrapping_sub(1)).copied().unwrap_or(0)
    }
}

const STUDY_HEADER: &str =
    "study_id,therapy_class,logor_tr,var_tr,loghr_pfs,var_pfs,loghr_os,var_os,allows_crossover";
const IPD_HEADER: &str = "patient_id,arm,responder,pfs_time,pfs_event,os_time,os_event";

fn parse_opt_f64(field: &str, col: &str, line: usize) -> std::result::Result<Option<f64>, RowError> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| RowError {
        line,
        message: format!("non-numeric value `{t}` in column {col}"),
    })
}

fn parse_opt_bool(field: &str, col: &str, line: usize) -> std::result::Result<Option<bool>, RowError> {
    match field.trim() {
        "" => Ok(None),
        "true" => Ok(Some(true)),
        "false" => Ok(Some(false)),
        other => Err(RowError {
            line,
            message: format!("expected true/false/empty in column {col}, got `{other}`"),
        }),
    }
}

fn check_header(found: &csv::StringRecord, expected: &str) -> Result<()> {
    let found_joined = found.iter().map(str::trim).collect::<Vec<_>>().join(",");
    if found_joined != expected {
        return Err(Error::MalformedHeader {
            expected: expected.to_string(),
            found: found_joined,
        });
    }
    Ok(())
}

/// Parse the study-level CSV. A malformed header is fatal; malformed rows
/// are reported and skipped.
pub fn parse_study_csv(path: impl AsRef<Path>) -> Result<StudyIngest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    check_header(reader.headers()?, STUDY_HEADER)?;

    let mut ingest = StudyIngest::default();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                ingest.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_study_record(&record, line) {
            Ok(study) => {
                ingest.outcome_counts[study.n_observed() - 1] += 1;
                ingest.studies.push(study);
            }
            Err(err) => ingest.row_errors.push(err),
        }
    }
    Ok(ingest)
}

fn parse_study_record(
    record: &csv::StringRecord,
    line: usize,
) -> std::result::Result<StudyEffects, RowError> {
    if record.len() != 9 {
        return Err(RowError {
            line,
            message: format!("expected 9 fields, found {}", record.len()),
        });
    }
    let study_id = record[0].trim().to_string();
    if study_id.is_empty() {
        return Err(RowError {
            line,
            message: "empty study_id".to_string(),
        });
    }
    let therapy_class: TherapyClass = record[1].parse().map_err(|e: Error| RowError {
        line,
        message: e.to_string(),
    })?;
    let effect = [
        parse_opt_f64(&record[2], "logor_tr", line)?,
        parse_opt_f64(&record[4], "loghr_pfs", line)?,
        parse_opt_f64(&record[6], "loghr_os", line)?,
    ];
    let var = [
        parse_opt_f64(&record[3], "var_tr", line)?,
        parse_opt_f64(&record[5], "var_pfs", line)?,
        parse_opt_f64(&record[7], "var_os", line)?,
    ];
    let allows_crossover = parse_opt_bool(&record[8], "allows_crossover", line)?;
    if effect.iter().all(Option::is_none) && var.iter().all(Option::is_none) {
        return Err(RowError {
            line,
            message: format!("study `{study_id}`: no outcomes"),
        });
    }
    StudyEffects::new(study_id, therapy_class, allows_crossover, effect, var).map_err(|e| {
        RowError {
            line,
            message: e.to_string(),
        }
    })
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write studies in the exact ingestion schema; floats use the shortest
/// representation that parses back to the same value.
pub fn write_study_csv(path: impl AsRef<Path>, studies: &[StudyEffects]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(STUDY_HEADER.split(','))?;
    for s in studies {
        writer.write_record([
            s.study_id.clone(),
            s.therapy_class.token().to_string(),
            fmt_opt_f64(s.effect[0]),
            fmt_opt_f64(s.var[0]),
            fmt_opt_f64(s.effect[1]),
            fmt_opt_f64(s.var[1]),
            fmt_opt_f64(s.effect[2]),
            fmt_opt_f64(s.var[2]),
            s.allows_crossover.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Outcome of parsing an IPD CSV.
#[derive(Debug, Clone, Default)]
pub struct IpdIngest {
    pub records: Vec<IpdRecord>,
    pub row_errors: Vec<RowError>,
}

/// Parse patient-level data. A malformed header is fatal; malformed rows
/// are reported and skipped.
pub fn parse_ipd_csv(path: impl AsRef<Path>) -> Result<IpdIngest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    check_header(reader.headers()?, IPD_HEADER)?;

    let mut ingest = IpdIngest::default();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                ingest.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_ipd_record(&record, line) {
            Ok(r) => ingest.records.push(r),
            Err(err) => ingest.row_errors.push(err),
        }
    }
    Ok(ingest)
}

fn parse_ipd_record(
    record: &csv::StringRecord,
    line: usize,
) -> std::result::Result<IpdRecord, RowError> {
    if record.len() != 7 {
        return Err(RowError {
            line,
            message: format!("expected 7 fields, found {}", record.len()),
        });
    }
    let patient_id = record[0].trim().to_string();
    let experimental_arm = match record[1].trim() {
        "0" => false,
        "1" => true,
        other => {
            return Err(RowError {
                line,
                message: format!("arm must be 0 or 1, got `{other}`"),
            });
        }
    };
    let responder = parse_opt_bool(&record[2], "responder", line)?;
    let pfs_time = parse_opt_f64(&record[3], "pfs_time", line)?;
    let pfs_event = parse_opt_bool(&record[4], "pfs_event", line)?;
    let os_time = parse_opt_f64(&record[5], "os_time", line)?;
    let os_event = parse_opt_bool(&record[6], "os_event", line)?;

    for (name, time, event) in [
        ("pfs", pfs_time, pfs_event),
        ("os", os_time, os_event),
    ] {
        match (time, event) {
            (Some(t), Some(_)) if t <= 0.0 => {
                return Err(RowError {
                    line,
                    message: format!("{name}_time must be positive, got {t}"),
                });
            }
            (Some(_), Some(_)) | (None, None) => {}
            _ => {
                return Err(RowError {
                    line,
                    message: format!("{name}_time and {name}_event must be present together"),
                });
            }
        }
    }
    let rec = IpdRecord {
        patient_id,
        experimental_arm,
        responder,
        pfs_time,
        pfs_event,
        os_time,
        os_event,
    };
    if rec.outcome_blocks() < 2 {
        return Err(RowError {
            line,
            message: format!(
                "patient `{}`: fewer than two outcome blocks present",
                rec.patient_id
            ),
        });
    }
    Ok(rec)
}

/// Ordered map from study id to index, rejecting duplicates.
pub(crate) fn index_by_study_id(studies: &[StudyEffects]) -> Result<BTreeMap<String, usize>> {
    let mut map = BTreeMap::new();
    for (i, s) in studies.iter().enumerate() {
        if map.insert(s.study_id.clone(), i).is_some() {
            return Err(Error::DuplicateStudyId {
                study_id: s.study_id.clone(),
            });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn study(effect: [Option<f64>; 3], var: [Option<f64>; 3]) -> StudyEffects {
        StudyEffects::new("S1", TherapyClass::SystemicChemo, None, effect, var).unwrap()
    }

    #[test]
    fn log_or_identical_arms_is_zero() {
        let (effect, variance) = compute_log_or(10, 20, 10, 20).unwrap();
        assert_relative_eq!(effect, 0.0);
        assert_relative_eq!(variance, 0.4);
    }

    #[test]
    fn log_or_zero_cell_corrects_all_four() {
        // table (0,10,5,10) -> corrected (0.5, 10.5, 5.5, 5.5)
        let (effect, variance) = compute_log_or(0, 10, 5, 10).unwrap();
        let expected_effect = (0.5f64 * 5.5 / (10.5 * 5.5)).ln();
        let expected_var = 1.0 / 0.5 + 1.0 / 10.5 + 2.0 / 5.5;
        assert_relative_eq!(effect, expected_effect, max_relative = 1e-15);
        assert_relative_eq!(variance, expected_var, max_relative = 1e-15);
    }

    #[test]
    fn log_or_correction_fires_only_on_zero_cells() {
        // r_t = 1: no zero cell, no correction
        let (effect, variance) = compute_log_or(1, 10, 5, 10).unwrap();
        let expected = (1.0f64 * 5.0 / (9.0 * 5.0)).ln();
        assert_relative_eq!(effect, expected, max_relative = 1e-15);
        assert_relative_eq!(
            variance,
            1.0 + 1.0 / 9.0 + 1.0 / 5.0 + 1.0 / 5.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn log_or_rejects_bad_counts() {
        assert!(matches!(compute_log_or(0, 0, 1, 5), Err(Error::EmptyArm)));
        assert!(matches!(
            compute_log_or(6, 5, 1, 5),
            Err(Error::CountExceedsArm { .. })
        ));
    }

    proptest! {
        #[test]
        fn log_or_antisymmetric_under_arm_swap(
            r_t in 0u64..30, extra_t in 1u64..30,
            r_c in 0u64..30, extra_c in 1u64..30,
        ) {
            let (n_t, n_c) = (r_t + extra_t, r_c + extra_c);
            let (e1, v1) = compute_log_or(r_t, n_t, r_c, n_c).unwrap();
            let (e2, v2) = compute_log_or(r_c, n_c, r_t, n_t).unwrap();
            prop_assert!((e1 + e2).abs() < 1e-12);
            prop_assert!((v1 - v2).abs() < 1e-12);
        }

        #[test]
        fn within_cov_symmetric_with_variance_diagonal(
            v1 in 1e-4f64..1.0, v2 in 1e-4f64..1.0, v3 in 1e-4f64..1.0,
            r12 in -0.6f64..0.6, r13 in -0.6f64..0.6, r23 in -0.6f64..0.6,
        ) {
            // Moderate correlations keep the implied matrix PD.
            let rho = match WithinCorrelations::new(r12, r13, r23) {
                Ok(r) => r,
                Err(_) => return Ok(()),
            };
            let s = study(
                [Some(0.1), Some(-0.2), Some(0.05)],
                [Some(v1), Some(v2), Some(v3)],
            );
            let cov = build_within_cov(&s, &rho).unwrap();
            let m = &cov.matrix;
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-15);
                }
            }
            for (i, v) in [v1, v2, v3].iter().enumerate() {
                prop_assert!((m[(i, i)] - v).abs() <= 1e-10 + 1e-12 * v);
            }
        }
    }

    #[test]
    fn within_cov_matches_hand_computation() {
        let rho = WithinCorrelations::new(-0.433, -0.333, 0.513).unwrap();
        let s = study(
            [Some(0.1), Some(-0.2), Some(0.05)],
            [Some(0.04), Some(0.01), Some(0.01)],
        );
        let cov = build_within_cov(&s, &rho).unwrap();
        // sigma = (0.2, 0.1, 0.1)
        assert_relative_eq!(cov.matrix[(0, 1)], -0.433 * 0.2 * 0.1, max_relative = 1e-12);
        assert_relative_eq!(cov.matrix[(0, 2)], -0.333 * 0.2 * 0.1, max_relative = 1e-12);
        assert_relative_eq!(cov.matrix[(1, 2)], 0.513 * 0.1 * 0.1, max_relative = 1e-12);
    }

    #[test]
    fn within_cov_zero_correlation_is_diagonal() {
        let rho = WithinCorrelations::new(0.0, 0.0, 0.0).unwrap();
        let s = study(
            [Some(0.1), Some(-0.2), Some(0.05)],
            [Some(0.04), Some(0.01), Some(0.02)],
        );
        let cov = build_within_cov(&s, &rho).unwrap();
        assert_eq!(cov.matrix, DMatrix::from_diagonal(&nalgebra::dvector![0.04, 0.01, 0.02]));
    }

    #[test]
    fn within_cov_marginalizes_missing_outcomes() {
        let rho = WithinCorrelations::new(-0.433, -0.333, 0.513).unwrap();
        let s = study(
            [None, Some(-0.19), Some(-0.05)],
            [None, Some(0.004), Some(0.001)],
        );
        let cov = build_within_cov(&s, &rho).unwrap();
        assert_eq!(cov.index_map, vec![OutcomeKind::Pfs, OutcomeKind::Os]);
        assert_eq!(cov.matrix.nrows(), 2);
        assert_relative_eq!(
            cov.matrix[(0, 1)],
            0.513 * 0.004f64.sqrt() * 0.001f64.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn within_cov_rejects_degenerate_correlation() {
        // Perfectly correlated pair: eigenvalue 0, jitter rescues it.
        let rho = WithinCorrelations::new(0.0, 0.0, 1.0).unwrap();
        let s = study(
            [None, Some(-0.19), Some(-0.05)],
            [None, Some(0.004), Some(0.004)],
        );
        let cov = build_within_cov(&s, &rho).unwrap();
        assert!(nalgebra::Cholesky::new(cov.matrix).is_some());
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn parse_study_csv_maps_fields_and_reports_errors() {
        let f = write_temp(
            "study_id,therapy_class,logor_tr,var_tr,loghr_pfs,var_pfs,loghr_os,var_os,allows_crossover\n\
             S1,chemo,,,-0.19,0.004,-0.05,0.001,false\n\
             S2,egfr,,,,,,,\n\
             S3,angio,0.2,abc,,,-0.1,0.01,true\n\
             S4,mta,0.2,-0.5,,,-0.1,0.01,\n",
        );
        let ingest = parse_study_csv(f.path()).unwrap();
        assert_eq!(ingest.studies.len(), 1);
        let s1 = &ingest.studies[0];
        assert_eq!(s1.study_id, "S1");
        assert!(!s1.is_observed(OutcomeKind::Tr));
        assert_eq!(s1.effect[1], Some(-0.19));
        assert_eq!(s1.var[1], Some(0.004));
        assert_eq!(s1.effect[2], Some(-0.05));
        assert_eq!(s1.allows_crossover, Some(false));
        assert_eq!(ingest.row_errors.len(), 3);
        assert!(ingest.row_errors[0].message.contains("no outcomes"));
        assert!(ingest.row_errors[1].message.contains("non-numeric"));
        assert!(ingest.row_errors[2].message.contains("positive"));
        assert_eq!(ingest.count_with_outcomes(2), 1);
    }

    #[test]
    fn parse_study_csv_rejects_malformed_header() {
        let f = write_temp("study,class\nS1,chemo\n");
        assert!(matches!(
            parse_study_csv(f.path()),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn study_csv_round_trips_exactly() {
        let studies = vec![
            study(
                [Some(0.123456789012345), Some(-0.19), None],
                [Some(0.04), Some(0.004), None],
            ),
            StudyEffects::new(
                "S2",
                TherapyClass::AntiAngiogenic,
                Some(true),
                [None, None, Some(1e-7)],
                [None, None, Some(3.5e-3)],
            )
            .unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("studies.csv");
        write_study_csv(&path, &studies).unwrap();
        let back = parse_study_csv(&path).unwrap();
        assert!(back.row_errors.is_empty());
        assert_eq!(back.studies, studies);

        // A second serialization is byte-identical.
        let path2 = dir.path().join("studies2.csv");
        write_study_csv(&path2, &back.studies).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn parse_ipd_enforces_pairing_and_blocks() {
        let f = write_temp(
            "patient_id,arm,responder,pfs_time,pfs_event,os_time,os_event\n\
             P1,0,true,5.2,true,10.4,false\n\
             P2,1,,3.0,true,8.8,true\n\
             P3,0,true,,,,\n\
             P4,2,true,1.0,true,2.0,true\n\
             P5,1,false,4.0,,6.0,true\n",
        );
        let ingest = parse_ipd_csv(f.path()).unwrap();
        assert_eq!(ingest.records.len(), 2);
        assert!(!ingest.records[0].experimental_arm);
        assert_eq!(ingest.records[1].responder, None);
        assert_eq!(ingest.row_errors.len(), 3);
        assert!(ingest.row_errors[0].message.contains("fewer than two"));
        assert!(ingest.row_errors[1].message.contains("arm"));
        assert!(ingest.row_errors[2].message.contains("present together"));
    }

    #[test]
    fn published_defaults_match_reported_values() {
        let rho = WithinCorrelations::published_defaults();
        assert_eq!(rho.rho_23, 0.513);
        assert_eq!(rho.rho_13, -0.333);
        assert_eq!(rho.rho_12, -0.433);
        WithinCorrelations::new(rho.rho_12, rho.rho_13, rho.rho_23).unwrap();
    }
}
