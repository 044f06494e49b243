//! `duplication` and `oracle`: unit counts and closed-form variances of
//! observation files.

use std::path::{Path, PathBuf};

use depboot_core::duplication::duplication_over_time;
use depboot_core::oracle::{var_delta_coeffs, var_delta_counts, var_delta_sharp_null, VarianceComponents};
use depboot_core::{DuplicationCounter, DuplicationStats};
use serde::Serialize;

use crate::error::{AppError, AppResult};
use crate::input::{Format, IngestStats, RecordReader};

/// Flat duplication summary: the pooled ν over both conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicationSummary {
    pub schema_version: u32,
    pub library_version: &'static str,
    pub rows: u64,
    pub malformed_rows: u64,
    pub users: u64,
    pub items: u64,
    pub user_item_pairs: u64,
    pub nu_users: f64,
    pub nu_items: f64,
}

impl DuplicationSummary {
    fn new(stats: &DuplicationStats, ingest: &IngestStats) -> Self {
        DuplicationSummary {
            schema_version: crate::report::SCHEMA_VERSION,
            library_version: depboot_core::VERSION,
            rows: ingest.rows,
            malformed_rows: ingest.malformed,
            users: stats.users,
            items: stats.items,
            user_item_pairs: stats.pairs,
            nu_users: stats.nu_user_pooled,
            nu_items: stats.nu_item_pooled,
        }
    }
}

/// Per-day cumulative duplication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailySummary {
    pub day: String,
    pub rows: u64,
    pub users: u64,
    pub items: u64,
    pub user_item_pairs: u64,
    pub nu_users: f64,
    pub nu_items: f64,
    pub relative_nu_users: f64,
    pub relative_nu_items: f64,
}

/// Streams inputs into an exact counter. Rows without a condition count
/// as condition 0, since pooled ν ignores it.
pub fn duplication(inputs: &[PathBuf], format: Option<Format>) -> AppResult<DuplicationSummary> {
    let mut counter = DuplicationCounter::new();
    let mut ingest = IngestStats::default();
    for path in inputs {
        let mut reader = RecordReader::open(path, format)?;
        while let Some(rec) = reader.next_record()? {
            counter.push(&rec.into_observation_or(0))?;
        }
        ingest.absorb(reader.stats());
    }
    ingest.check()?;
    Ok(DuplicationSummary::new(&counter.stats(), &ingest))
}

/// Cumulative duplication by `day`. Rows without a day are malformed.
pub fn duplication_by_day(inputs: &[PathBuf], format: Option<Format>) -> AppResult<Vec<DailySummary>> {
    let mut rows = Vec::new();
    let mut ingest = IngestStats::default();
    for path in inputs {
        let mut reader = RecordReader::open(path, format)?;
        while let Some(rec) = reader.next_record()? {
            match rec.day.clone() {
                Some(day) => rows.push((day, rec.into_observation_or(0))),
                None => reader.reject_last("missing day"),
            }
        }
        ingest.absorb(reader.stats());
    }
    ingest.check()?;
    Ok(duplication_over_time(rows)?
        .into_iter()
        .map(|d| DailySummary {
            day: d.day,
            rows: d.stats.n[0] + d.stats.n[1],
            users: d.stats.users,
            items: d.stats.items,
            user_item_pairs: d.stats.pairs,
            nu_users: d.stats.nu_user_pooled,
            nu_items: d.stats.nu_item_pooled,
            relative_nu_users: d.relative_nu_user,
            relative_nu_items: d.relative_nu_item,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleParams {
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_eps: f64,
    pub rho_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResults {
    pub n: u64,
    pub duplication: DuplicationStats,
    /// From per-unit counts; pair-level residuals.
    pub var_counts: f64,
    /// From ν and ω; exact when no pair repeats.
    pub var_coefficients: f64,
    /// Sharp-null form; only when `rho_beta = 1`.
    pub var_sharp_null: Option<f64>,
    pub sd_counts: f64,
}

/// Closed-form `Var(δ̂)` for a labeled dataset with equal condition sizes.
pub fn oracle(path: &Path, format: Option<Format>, params: OracleParams) -> AppResult<(OracleResults, IngestStats)> {
    let mut reader = RecordReader::open(path, format)?;
    if !reader.has_condition_column() {
        return Err(AppError::Input("input has no `condition` column".into()));
    }
    let mut counter = DuplicationCounter::new();
    while let Some(rec) = reader.next_record()? {
        match rec.into_observation() {
            Some(obs) => counter.push(&obs)?,
            None => reader.reject_last("missing condition"),
        }
    }
    let ingest = reader.into_stats();
    ingest.check()?;
    let stats = counter.stats();
    let n = stats.n[0];
    let vc = VarianceComponents::homogeneous(params.sigma_alpha, params.sigma_beta, params.sigma_eps, params.rho_beta);
    let var_counts = var_delta_counts(counter.counts(), &vc, n)?;
    let var_coefficients = var_delta_coeffs(&stats, &vc, n)?;
    let var_sharp_null = if params.rho_beta == 1.0 {
        Some(var_delta_sharp_null(
            &stats,
            params.sigma_alpha,
            params.sigma_beta,
            params.sigma_eps,
            n,
        )?)
    } else {
        None
    };
    Ok((
        OracleResults {
            n,
            duplication: stats,
            var_counts,
            var_coefficients,
            var_sharp_null,
            sd_counts: var_counts.sqrt(),
        },
        ingest,
    ))
}
