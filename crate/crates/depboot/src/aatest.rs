//! A/A coverage evaluation of observation files.

use depboot_core::evaluation::{build_aa_plan, run_null_experiments, CoverageReport, NullConfig, NullExperimentReport};
use depboot_core::{BootstrapMode, Observation};
use serde::Serialize;

use crate::analyze::AnalysisConfig;
use crate::error::{AppError, AppResult};
use crate::input::{read_all, IngestStats};

#[derive(Debug, Clone, Serialize)]
pub struct PlanSummary {
    pub salts: Vec<u64>,
    pub segments: u32,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AATestResults {
    pub ingest: IngestStats,
    pub plan: PlanSummary,
    pub coverage: Vec<CoverageReport>,
}

#[derive(Debug, Clone)]
pub struct AATestOutput {
    pub results: AATestResults,
    pub per_mode: Vec<NullExperimentReport>,
}

/// Runs every requested mode over the plan built from `salts` and
/// `segments`. Conditions in the input are ignored.
pub fn aatest_dataset(data: &[Observation], cfg: &AnalysisConfig, ingest: IngestStats) -> AppResult<AATestOutput> {
    if cfg.modes.is_empty() {
        return Err(AppError::Config("at least one mode is required".into()));
    }
    if cfg.salts == 0 {
        return Err(AppError::Config("--salts must be positive".into()));
    }
    let salts: Vec<u64> = (0..cfg.salts).collect();
    let plan = build_aa_plan(&salts, cfg.segments)?;
    let null_cfg = |mode| NullConfig {
        mode,
        replicates: cfg.replicates,
        alpha: cfg.alpha,
        dist: cfg.dist,
        seed: cfg.seed,
        level: depboot_core::evaluation::DEFAULT_LEVEL,
        imbalance: cfg.imbalance,
    };
    let per_mode = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .modes
            .iter()
            .map(|&mode| {
                let plan = &plan;
                s.spawn(move || run_null_experiments(data, plan, &null_cfg(mode)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("null experiment thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(AATestOutput {
        results: AATestResults {
            ingest,
            plan: PlanSummary {
                k: plan.k(),
                salts,
                segments: plan.segments,
            },
            coverage: per_mode.iter().map(|r| r.coverage.clone()).collect(),
        },
        per_mode,
    })
}

pub fn aatest(cfg: &AnalysisConfig) -> AppResult<AATestOutput> {
    if cfg.inputs.is_empty() {
        return Err(AppError::Config("no input files".into()));
    }
    let (records, ingest) = read_all(&cfg.inputs, cfg.format)?;
    ingest.check()?;
    let data: Vec<Observation> = records.into_iter().map(|r| r.into_observation_as(0)).collect();
    aatest_dataset(&data, cfg, ingest)
}

/// One row per comparison and mode.
pub fn comparisons_csv(per_mode: &[NullExperimentReport]) -> AppResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "mode",
        "salt",
        "even_segment",
        "odd_segment",
        "bootstrap_salt",
        "n_control",
        "n_treatment",
        "delta_hat",
        "ci_lo",
        "ci_hi",
        "reject_null",
        "skipped",
    ];
    let encode = |e: csv::Error| AppError::Input(format!("cannot encode CSV: {e}"));
    w.write_record(header).map_err(encode)?;
    for report in per_mode {
        let mode: BootstrapMode = report.coverage.method;
        for c in &report.comparisons {
            let mut row = vec![
                mode.name().to_string(),
                c.comparison.salt.to_string(),
                c.comparison.even.to_string(),
                c.comparison.odd.to_string(),
                c.bootstrap_salt.to_string(),
            ];
            match &c.report {
                Some(r) => row.extend([
                    r.n_control.to_string(),
                    r.n_treatment.to_string(),
                    r.delta_hat.to_string(),
                    r.ci_lo.to_string(),
                    r.ci_hi.to_string(),
                    r.reject_null.to_string(),
                    String::new(),
                ]),
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 6));
                    row.push(c.skipped.clone().unwrap_or_default());
                }
            }
            w.write_record(&row).map_err(encode)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AppError::Input(format!("cannot encode CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AppError::Input(e.to_string()))
}
