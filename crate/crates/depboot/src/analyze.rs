//! Single-pass bootstrap analysis of observation files.

use std::path::PathBuf;

use depboot_core::bootstrap::RowKeys;
use depboot_core::{BootstrapConfig, BootstrapMode, IntervalReport, ReplicateAccumulator, WeightDistribution};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::input::{Format, IngestStats, RecordReader};

const BATCH: usize = 4096;

/// Effective settings of `analyze` and `aatest`, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub modes: Vec<BootstrapMode>,
    pub replicates: usize,
    pub alpha: f64,
    pub dist: WeightDistribution,
    pub salt: u64,
    pub salts: u64,
    pub segments: u32,
    pub seed: u64,
    pub imbalance: Option<f64>,
    pub inputs: Vec<PathBuf>,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            modes: BootstrapMode::ALL.to_vec(),
            replicates: depboot_core::bootstrap::DEFAULT_REPLICATES,
            alpha: depboot_core::bootstrap::DEFAULT_ALPHA,
            dist: WeightDistribution::Poisson,
            salt: 0,
            salts: depboot_core::evaluation::DEFAULT_SALTS,
            segments: depboot_core::hashing::DEFAULT_SEGMENTS,
            seed: 0,
            imbalance: None,
            inputs: Vec::new(),
            format: None,
            output: None,
        }
    }
}

/// Feeds rows to one accumulator per mode in fixed-size batches; modes run
/// on separate threads. Memory is `O(R · modes + batch)`.
#[derive(Debug)]
pub struct StreamingAnalysis {
    accs: Vec<ReplicateAccumulator>,
    batch: Vec<(u8, f64, RowKeys)>,
    salt: u64,
    ordinal: u64,
}

impl StreamingAnalysis {
    pub fn new(modes: &[BootstrapMode], replicates: usize, dist: WeightDistribution, salt: u64) -> AppResult<Self> {
        if modes.is_empty() {
            return Err(AppError::Config("at least one mode is required".into()));
        }
        let accs = modes
            .iter()
            .map(|&m| {
                ReplicateAccumulator::new(
                    BootstrapConfig::new(m)
                        .with_replicates(replicates)
                        .with_salt(salt)
                        .with_dist(dist),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StreamingAnalysis {
            accs,
            batch: Vec::with_capacity(BATCH),
            salt,
            ordinal: 0,
        })
    }

    /// Adds a row; its ordinal is the number of rows pushed before it.
    pub fn push(&mut self, user: &str, item: &str, condition: u8, outcome: f64) -> AppResult<()> {
        if condition > 1 {
            return Err(depboot_core::Error::InvalidCondition(condition).into());
        }
        if !outcome.is_finite() {
            return Err(depboot_core::Error::NonFiniteOutcome(outcome).into());
        }
        let keys = RowKeys::new(user, item, self.salt, self.ordinal)?;
        self.ordinal += 1;
        self.batch.push((condition, outcome, keys));
        if self.batch.len() == BATCH {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> AppResult<()> {
        let batch = &self.batch;
        let feed = |acc: &mut ReplicateAccumulator| -> AppResult<()> {
            for &(d, y, keys) in batch {
                acc.push_keyed(d, y, keys)?;
            }
            Ok(())
        };
        if self.accs.len() == 1 {
            feed(&mut self.accs[0])?;
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self.accs.iter_mut().map(|acc| s.spawn(move || feed(acc))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("accumulator thread panicked"))
                    .collect::<AppResult<Vec<()>>>()
            })?;
        }
        self.batch.clear();
        Ok(())
    }

    pub fn finish(mut self) -> AppResult<Vec<ReplicateAccumulator>> {
        self.flush()?;
        Ok(self.accs)
    }
}

/// Streams every row of `reader` into `analysis`. Rows without a condition
/// count as malformed.
pub fn feed_reader(reader: &mut RecordReader, analysis: &mut StreamingAnalysis) -> AppResult<()> {
    if !reader.has_condition_column() {
        return Err(AppError::Input("input has no `condition` column".into()));
    }
    while let Some(rec) = reader.next_record()? {
        match rec.condition {
            Some(d) => analysis.push(&rec.user_id, &rec.item_id, d, rec.outcome)?,
            None => reader.reject_last("missing condition"),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisResults {
    pub ingest: IngestStats,
    pub reports: Vec<IntervalReport>,
}

/// Reads all inputs in order and returns one interval per mode.
pub fn analyze(cfg: &AnalysisConfig) -> AppResult<AnalysisResults> {
    if cfg.inputs.is_empty() {
        return Err(AppError::Config("no input files".into()));
    }
    let mut analysis = StreamingAnalysis::new(&cfg.modes, cfg.replicates, cfg.dist, cfg.salt)?;
    let mut ingest = IngestStats::default();
    for path in &cfg.inputs {
        let mut reader = RecordReader::open(path, cfg.format)?;
        feed_reader(&mut reader, &mut analysis)?;
        ingest.absorb(reader.stats());
    }
    ingest.check()?;
    let reports = analysis
        .finish()?
        .iter()
        .map(|acc| acc.interval(cfg.alpha))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AnalysisResults { ingest, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use depboot_core::Observation;

    #[test]
    fn batched_threads_match_sequential_push() {
        let rows: Vec<Observation> = (0..10_000)
            .map(|i| {
                Observation::new(
                    format!("u{}", i % 301),
                    format!("i{}", i % 17),
                    (i % 2) as u8,
                    (i % 5) as f64,
                )
            })
            .collect();
        let mut s = StreamingAnalysis::new(&BootstrapMode::ALL, 40, WeightDistribution::Poisson, 9).unwrap();
        for o in &rows {
            s.push(&o.user, &o.item, o.condition, o.outcome).unwrap();
        }
        let accs = s.finish().unwrap();
        for (acc, mode) in accs.iter().zip(BootstrapMode::ALL) {
            let mut seq =
                ReplicateAccumulator::new(BootstrapConfig::new(mode).with_replicates(40).with_salt(9)).unwrap();
            for o in &rows {
                seq.push(o).unwrap();
            }
            assert_eq!(acc, &seq);
        }
    }

    #[test]
    fn bad_rows_and_modes() {
        assert!(StreamingAnalysis::new(&[], 10, WeightDistribution::Poisson, 0).is_err());
        let mut s = StreamingAnalysis::new(&[BootstrapMode::User], 10, WeightDistribution::Poisson, 0).unwrap();
        assert!(s.push("u", "i", 3, 1.0).is_err());
        assert!(s.push("", "i", 0, 1.0).is_err());
        assert!(s.push("u", "i", 0, f64::INFINITY).is_err());
    }
}
