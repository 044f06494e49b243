//! A/A tests: segment pairing, null comparisons, item imbalance, coverage
//! with Wilson intervals, and simulation sweeps over random-effects cells.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::bootstrap::{BootstrapConfig, BootstrapMode, IntervalReport, ReplicateAccumulator, RowKeys};
use crate::error::{Error, Result};
use crate::generators::{Layout, LayoutRow, OutcomeSampler, RandomEffectsConfig};
use crate::hashing::{segment_of, splitmix64, UnitKey, UnitKind, WeightDistribution, DEFAULT_SEGMENTS};
use crate::normal;
use crate::observation::Observation;

pub const DEFAULT_SALTS: u64 = 10;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Even/odd segment pairs for every salt.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AAPlan {
    pub salts: Vec<u64>,
    pub segments: u32,
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Comparison {
    pub salt: u64,
    /// Relabeled condition 0.
    pub even: u32,
    /// Relabeled condition 1.
    pub odd: u32,
}

impl AAPlan {
    /// Number of comparisons, `|salts| · M/2`.
    pub fn k(&self) -> usize {
        self.comparisons.len()
    }
}

impl Default for AAPlan {
    fn default() -> Self {
        build_aa_plan(&(0..DEFAULT_SALTS).collect::<Vec<_>>(), DEFAULT_SEGMENTS).expect("default plan is valid")
    }
}

/// Pairs segment `2k` with `2k + 1` for each salt.
pub fn build_aa_plan(salts: &[u64], segments: u32) -> Result<AAPlan> {
    if segments < 2 {
        return Err(Error::InvalidSegments(segments));
    }
    if segments % 2 == 1 {
        return Err(Error::OddSegments(segments));
    }
    if salts.is_empty() {
        return Err(Error::param("salts", "at least one salt is required"));
    }
    let comparisons = salts
        .iter()
        .flat_map(|&salt| {
            (0..segments / 2).map(move |k| Comparison {
                salt,
                even: 2 * k,
                odd: 2 * k + 1,
            })
        })
        .collect();
    Ok(AAPlan {
        salts: salts.to_vec(),
        segments,
        comparisons,
    })
}

/// Wilson score interval for `successes` out of `n` at confidence `level`.
pub fn wilson_interval(successes: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::NoTrials);
    }
    if successes > n {
        return Err(Error::SuccessesExceedTrials { successes, trials: n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param("level", "confidence level must lie in (0, 1)"));
    }
    let z = normal::quantile(0.5 * (1.0 + level));
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * libm::sqrt(p * (1.0 - p) / nf + z2 / (4.0 * nf * nf));
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Share of null comparisons whose interval covered zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverageReport {
    pub method: BootstrapMode,
    /// Comparisons that produced an interval.
    pub k: u64,
    pub rejections: u64,
    pub true_coverage: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Level of the bootstrap intervals.
    pub alpha: f64,
    /// Level of the Wilson interval.
    pub level: f64,
    /// Comparisons skipped (empty side or failed bootstrap).
    pub skipped: u64,
}

impl CoverageReport {
    pub fn from_counts(method: BootstrapMode, k: u64, rejections: u64, alpha: f64, level: f64) -> Result<Self> {
        if rejections > k {
            return Err(Error::SuccessesExceedTrials {
                successes: rejections,
                trials: k,
            });
        }
        let (wilson_lo, wilson_hi) = wilson_interval(k - rejections, k, level)?;
        Ok(CoverageReport {
            method,
            k,
            rejections,
            true_coverage: 1.0 - rejections as f64 / k as f64,
            wilson_lo,
            wilson_hi,
            alpha,
            level,
            skipped: 0,
        })
    }

    /// Half-width of the Wilson interval for nominal coverage `1 − alpha`
    /// over the same number of comparisons.
    pub fn nominal_band(&self) -> Result<(f64, f64)> {
        let nominal = libm::round((1.0 - self.alpha) * self.k as f64) as u64;
        wilson_interval(nominal.min(self.k), self.k, self.level)
    }
}

/// Settings shared by all comparisons of a null-experiment run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NullConfig {
    pub mode: BootstrapMode,
    pub replicates: usize,
    pub alpha: f64,
    pub dist: WeightDistribution,
    /// Seeds the per-comparison bootstrap salts.
    pub seed: u64,
    /// Wilson level for the coverage report.
    pub level: f64,
    /// Item imbalance applied inside each comparison, `p ∈ [0, 1]`.
    pub imbalance: Option<f64>,
}

impl NullConfig {
    pub fn new(mode: BootstrapMode) -> Self {
        NullConfig {
            mode,
            replicates: crate::bootstrap::DEFAULT_REPLICATES,
            alpha: crate::bootstrap::DEFAULT_ALPHA,
            dist: WeightDistribution::Poisson,
            seed: 0,
            level: DEFAULT_LEVEL,
            imbalance: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::ZeroReplicates);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::param("level", "confidence level must lie in (0, 1)"));
        }
        if let Some(p) = self.imbalance {
            check_probability(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonOutcome {
    pub comparison: Comparison,
    pub bootstrap_salt: u64,
    pub report: Option<IntervalReport>,
    /// Why the comparison produced no interval.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NullExperimentReport {
    pub comparisons: Vec<ComparisonOutcome>,
    pub coverage: CoverageReport,
}

/// Bootstrap salt of one comparison, so item weights differ across
/// comparisons.
pub fn comparison_salt(seed: u64, comparison: &Comparison) -> u64 {
    splitmix64(seed ^ splitmix64(comparison.salt ^ splitmix64(u64::from(comparison.even))))
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::param("p", "removal probability must lie in [0, 1]"))
    }
}

/// Whether a row falls on its item's downsampled side and loses the draw.
/// The side is a salted item hash; the draw hashes the row's units and
/// ordinal.
fn removed(user: UnitKey, item: UnitKey, condition: u8, ordinal: u64, p: f64) -> bool {
    let side = u8::from(item.uniform(0) >= 0.5);
    condition == side && UnitKey::observation(user, item, ordinal).uniform(1) < p
}

/// Removes each observation on one randomly chosen side of every item with
/// probability `p`.
pub fn downsample_imbalance(dataset: &[Observation], p: f64, seed: u64) -> Result<Vec<Observation>> {
    check_probability(p)?;
    let mut out = Vec::with_capacity(dataset.len());
    for (ordinal, obs) in dataset.iter().enumerate() {
        obs.validate()?;
        let user = UnitKey::new(UnitKind::User, &obs.user, seed)?;
        let item = UnitKey::new(UnitKind::Item, &obs.item, seed)?;
        if !removed(user, item, obs.condition, ordinal as u64, p) {
            out.push(obs.clone());
        }
    }
    Ok(out)
}

/// Runs one bootstrap per comparison of `plan`, treating the even segment as
/// control, and aggregates the reject flags into a coverage report.
///
/// The input `condition` field is ignored. Row positions in `dataset` serve
/// as iid ordinals.
pub fn run_null_experiments(dataset: &[Observation], plan: &AAPlan, cfg: &NullConfig) -> Result<NullExperimentReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for obs in dataset {
        if obs.user.is_empty() || obs.item.is_empty() {
            return Err(Error::EmptyId);
        }
        if !obs.outcome.is_finite() {
            return Err(Error::NonFiniteOutcome(obs.outcome));
        }
    }
    let half = plan.segments / 2;
    let mut outcomes = Vec::with_capacity(plan.k());
    for &salt in &plan.salts {
        let comparisons: Vec<Comparison> = plan.comparisons.iter().filter(|c| c.salt == salt).copied().collect();
        let mut slot_of: Vec<Option<usize>> = vec![None; half as usize];
        for (i, c) in comparisons.iter().enumerate() {
            if c.odd == c.even + 1 && c.even % 2 == 0 && c.even / 2 < half {
                slot_of[(c.even / 2) as usize] = Some(i);
            }
        }
        let salts: Vec<u64> = comparisons.iter().map(|c| comparison_salt(cfg.seed, c)).collect();
        let mut accs = comparisons
            .iter()
            .zip(&salts)
            .map(|(_, &s)| {
                ReplicateAccumulator::new(
                    BootstrapConfig::new(cfg.mode)
                        .with_replicates(cfg.replicates)
                        .with_salt(s)
                        .with_dist(cfg.dist),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut segment_cache: HashMap<&str, u32> = HashMap::new();
        for (ordinal, obs) in dataset.iter().enumerate() {
            let seg = match segment_cache.get(obs.user.as_str()) {
                Some(&s) => s,
                None => {
                    let s = segment_of(&obs.user, salt, plan.segments)?;
                    segment_cache.insert(obs.user.as_str(), s);
                    s
                }
            };
            let Some(slot) = slot_of[(seg / 2) as usize] else {
                continue;
            };
            let condition = (seg % 2) as u8;
            let keys = RowKeys::new(&obs.user, &obs.item, salts[slot], ordinal as u64)?;
            if let Some(p) = cfg.imbalance {
                if removed(keys.user, keys.item, condition, ordinal as u64, p) {
                    continue;
                }
            }
            accs[slot].push_keyed(condition, obs.outcome, keys)?;
        }
        for ((c, acc), s) in comparisons.iter().zip(&accs).zip(&salts) {
            let (report, skipped) = match acc.interval(cfg.alpha) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            outcomes.push(ComparisonOutcome {
                comparison: *c,
                bootstrap_salt: *s,
                report,
                skipped,
            });
        }
    }
    let k = outcomes.iter().filter(|o| o.report.is_some()).count() as u64;
    let rejections = outcomes
        .iter()
        .filter(|o| o.report.as_ref().is_some_and(|r| r.reject_null))
        .count() as u64;
    let mut coverage = CoverageReport::from_counts(cfg.mode, k, rejections, cfg.alpha, cfg.level)?;
    coverage.skipped = outcomes.len() as u64 - k;
    Ok(NullExperimentReport {
        comparisons: outcomes,
        coverage,
    })
}

/// Settings for repeated simulation on a fixed layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimulationPlan {
    pub modes: Vec<BootstrapMode>,
    pub runs: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub dist: WeightDistribution,
    pub level: f64,
    pub seed: u64,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        SimulationPlan {
            modes: BootstrapMode::ALL.to_vec(),
            runs: 500,
            replicates: crate::bootstrap::DEFAULT_REPLICATES,
            alpha: crate::bootstrap::DEFAULT_ALPHA,
            dist: WeightDistribution::Poisson,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

/// Per-unit replicate weights for one bootstrap salt, laid out `unit · R + r`.
#[derive(Debug, Clone)]
struct WeightTables {
    replicates: usize,
    user_keys: Vec<UnitKey>,
    item_keys: Vec<UnitKey>,
    user: Vec<f64>,
    item: Vec<f64>,
}

impl WeightTables {
    fn new(layout: &Layout, salt: u64, replicates: usize, dist: WeightDistribution) -> Result<Self> {
        let keys = |kind, n: usize| {
            (0..n as u32)
                .map(|u| UnitKey::new(kind, &Layout::user_id(u), salt))
                .collect::<Result<Vec<_>>>()
        };
        let user_keys = keys(UnitKind::User, layout.n_users_pool())?;
        let item_keys = keys(UnitKind::Item, layout.n_items_pool())?;
        let table = |ks: &[UnitKey]| {
            let mut t = Vec::with_capacity(ks.len() * replicates);
            for k in ks {
                t.extend((0..replicates).map(|r| k.weight(r, dist)));
            }
            t
        };
        Ok(WeightTables {
            replicates,
            user: table(&user_keys),
            item: table(&item_keys),
            user_keys,
            item_keys,
        })
    }

    fn accumulate(&self, rows: &[LayoutRow], outcomes: &[f64], cfg: BootstrapConfig) -> Result<ReplicateAccumulator> {
        let mut acc = ReplicateAccumulator::new(cfg)?;
        let r_n = self.replicates;
        for (ordinal, (row, &y)) in rows.iter().zip(outcomes).enumerate() {
            let u = &self.user[row.user as usize * r_n..][..r_n];
            let i = &self.item[row.item as usize * r_n..][..r_n];
            match cfg.mode {
                BootstrapMode::User => acc.push_with(row.condition, y, |r| u[r])?,
                BootstrapMode::Item => acc.push_with(row.condition, y, |r| i[r])?,
                BootstrapMode::Multiway => acc.push_with(row.condition, y, |r| u[r] * i[r])?,
                BootstrapMode::Iid => {
                    let key = UnitKey::observation(
                        self.user_keys[row.user as usize],
                        self.item_keys[row.item as usize],
                        ordinal as u64,
                    );
                    acc.push_with(row.condition, y, |r| key.weight(r, cfg.dist))?
                }
            }
        }
        Ok(acc)
    }
}

/// Bootstrap intervals for one outcome vector on a layout, one per mode.
///
/// Identical to streaming `layout.observations(outcomes)` through
/// [`ReplicateAccumulator::push`] with the same salt.
pub fn layout_intervals(
    layout: &Layout,
    outcomes: &[f64],
    modes: &[BootstrapMode],
    replicates: usize,
    alpha: f64,
    dist: WeightDistribution,
    salt: u64,
) -> Result<Vec<IntervalReport>> {
    let tables = WeightTables::new(layout, salt, replicates, dist)?;
    modes
        .iter()
        .map(|&mode| {
            let cfg = BootstrapConfig::new(mode)
                .with_replicates(replicates)
                .with_salt(salt)
                .with_dist(dist);
            tables.accumulate(layout.rows(), outcomes, cfg)?.interval(alpha)
        })
        .collect()
}

/// Redraws outcomes `plan.runs` times on a fixed layout and reports, per
/// mode, how often the interval missed zero. The bootstrap salt changes
/// every run. Runs whose bootstrap fails are counted as skipped.
pub fn simulate_coverage(
    layout: &Layout,
    effects: &RandomEffectsConfig,
    plan: &SimulationPlan,
) -> Result<Vec<CoverageReport>> {
    if plan.runs == 0 {
        return Err(Error::param("runs", "must be positive"));
    }
    if plan.modes.is_empty() {
        return Err(Error::param("modes", "at least one mode is required"));
    }
    if layout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sampler = OutcomeSampler::new(layout, *effects)?;
    let mut rejections = vec![0u64; plan.modes.len()];
    let mut ok = vec![0u64; plan.modes.len()];
    let mut y = Vec::with_capacity(layout.len());
    for run in 0..plan.runs as u64 {
        let run_seed = splitmix64(plan.seed ^ splitmix64(run));
        sampler.draw_into(run_seed, &mut y);
        let salt = splitmix64(run_seed);
        let tables = WeightTables::new(layout, salt, plan.replicates, plan.dist)?;
        for (m, &mode) in plan.modes.iter().enumerate() {
            let cfg = BootstrapConfig::new(mode)
                .with_replicates(plan.replicates)
                .with_salt(salt)
                .with_dist(plan.dist);
            match tables.accumulate(layout.rows(), &y, cfg)?.interval(plan.alpha) {
                Ok(report) => {
                    ok[m] += 1;
                    rejections[m] += u64::from(report.reject_null);
                }
                Err(e) if e.kind() == crate::ErrorKind::Analysis => {}
                Err(e) => return Err(e),
            }
        }
    }
    plan.modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| {
            let mut report = CoverageReport::from_counts(mode, ok[m], rejections[m], plan.alpha, plan.level)?;
            report.skipped = plan.runs as u64 - ok[m];
            Ok(report)
        })
        .collect()
}

/// Drops layout rows by the [`downsample_imbalance`] rule.
pub fn downsample_layout(layout: &Layout, p: f64, seed: u64) -> Result<Layout> {
    check_probability(p)?;
    if p == 0.0 {
        return Ok(layout.clone());
    }
    let mut rows = Vec::with_capacity(layout.len());
    for (ordinal, row) in layout.rows().iter().enumerate() {
        let user = UnitKey::new(UnitKind::User, &Layout::user_id(row.user), seed)?;
        let item = UnitKey::new(UnitKind::Item, &Layout::item_id(row.item), seed)?;
        if !removed(user, item, row.condition, ordinal as u64, p) {
            rows.push(*row);
        }
    }
    Layout::from_rows(rows, layout.n_users_pool(), layout.n_items_pool())
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepCell {
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub rho_beta: f64,
    /// Item imbalance probability.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepGrid {
    pub sigma_alpha: Vec<f64>,
    pub sigma_beta: Vec<f64>,
    pub rho_beta: Vec<f64>,
    pub p: Vec<f64>,
}

impl SweepGrid {
    /// Cartesian product in row-major order (σ_α, σ_β, ρ_β, p).
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &sigma_alpha in &self.sigma_alpha {
            for &sigma_beta in &self.sigma_beta {
                for &rho_beta in &self.rho_beta {
                    for &p in &self.p {
                        out.push(SweepCell {
                            sigma_alpha,
                            sigma_beta,
                            rho_beta,
                            p,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub result: Result<Vec<CoverageReport>>,
}

/// Runs one cell: downsample the layout by `cell.p`, then simulate with the
/// cell's effects on top of `base`.
pub fn run_cell(
    layout: &Layout,
    base: &RandomEffectsConfig,
    cell: &SweepCell,
    plan: &SimulationPlan,
) -> Result<Vec<CoverageReport>> {
    let mut effects = *base;
    effects.sigma_alpha = cell.sigma_alpha;
    effects.sigma_beta = cell.sigma_beta;
    effects.rho_beta = cell.rho_beta;
    let layout = downsample_layout(layout, cell.p, plan.seed)?;
    simulate_coverage(&layout, &effects, plan)
}

/// Runs every cell; a failing cell yields an error row instead of stopping
/// the sweep.
pub fn sweep(layout: &Layout, base: &RandomEffectsConfig, grid: &SweepGrid, plan: &SimulationPlan) -> Vec<SweepRow> {
    grid.cells()
        .into_iter()
        .map(|cell| SweepRow {
            cell,
            result: run_cell(layout, base, &cell, plan),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{gen_layout, LayoutConfig};
    use alloc::format;

    #[test]
    fn plan_shapes() {
        let p = build_aa_plan(&[7], 4).unwrap();
        assert_eq!(p.k(), 2);
        assert_eq!(
            p.comparisons,
            vec![
                Comparison {
                    salt: 7,
                    even: 0,
                    odd: 1
                },
                Comparison {
                    salt: 7,
                    even: 2,
                    odd: 3
                }
            ]
        );
        assert_eq!(AAPlan::default().k(), 500);
        assert!(matches!(build_aa_plan(&[0], 5), Err(Error::OddSegments(5))));
        assert!(matches!(build_aa_plan(&[0], 0), Err(Error::InvalidSegments(0))));
        assert!(build_aa_plan(&[], 4).is_err());
    }

    #[test]
    fn wilson_values() {
        let (lo, hi) = wilson_interval(0, 10, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.2775).abs() < 1e-3);
        let (_, hi) = wilson_interval(9, 9, 0.9).unwrap();
        assert_eq!(hi, 1.0);
        assert_eq!(wilson_interval(0, 0, 0.95), Err(Error::NoTrials));
        assert!(wilson_interval(3, 2, 0.95).is_err());
    }

    #[test]
    fn wilson_golden_475_of_500() {
        // Closed form with z = 1.959963984540054, p = 0.95, n = 500:
        // center ± half evaluated separately in double precision.
        let (lo, hi) = wilson_interval(475, 500, 0.95).unwrap();
        assert!((lo - 0.927_232).abs() < 1e-5, "{lo}");
        assert!((hi - 0.965_906).abs() < 1e-5, "{hi}");
    }

    #[test]
    fn coverage_report_counts() {
        let r = CoverageReport::from_counts(BootstrapMode::User, 200, 10, 0.05, 0.95).unwrap();
        assert_eq!(r.true_coverage, 0.95);
        assert!(r.wilson_lo <= 0.95 && 0.95 <= r.wilson_hi);
        assert!(CoverageReport::from_counts(BootstrapMode::User, 2, 3, 0.05, 0.95).is_err());
        assert_eq!(
            CoverageReport::from_counts(BootstrapMode::User, 0, 0, 0.05, 0.95),
            Err(Error::NoTrials)
        );
    }

    fn labeled(n: usize) -> Vec<Observation> {
        (0..n)
            .map(|i| {
                Observation::new(
                    format!("u{}", i % 97),
                    format!("i{}", i % 13),
                    (i % 2) as u8,
                    (i % 7) as f64,
                )
            })
            .collect()
    }

    #[test]
    fn downsample_edges() {
        let data = labeled(2000);
        assert_eq!(downsample_imbalance(&data, 0.0, 3).unwrap(), data);
        let full = downsample_imbalance(&data, 1.0, 3).unwrap();
        for item in 0..13 {
            let id = format!("i{item}");
            let sides: Vec<u8> = full.iter().filter(|o| o.item == id).map(|o| o.condition).collect();
            assert!(sides.iter().all(|&d| d == sides[0]), "item {id} on both sides");
        }
        assert!(downsample_imbalance(&data, 1.5, 3).is_err());
    }

    #[test]
    fn downsample_removal_rate() {
        let data: Vec<Observation> = (0..10_000)
            .map(|i| Observation::new(format!("u{i}"), String::from("only"), (i % 2) as u8, 0.0))
            .collect();
        let kept = downsample_imbalance(&data, 0.5, 11).unwrap();
        let side = u8::from(UnitKey::new(UnitKind::Item, "only", 11).unwrap().uniform(0) >= 0.5);
        let left = kept.iter().filter(|o| o.condition == side).count() as f64;
        assert!((1.0 - left / 5000.0 - 0.5).abs() < 0.02);
        assert_eq!(kept.iter().filter(|o| o.condition != side).count(), 5000);
    }

    #[test]
    fn null_experiments_skip_empty_sides() {
        // Only two users: most segment pairs are empty on a side.
        let data = vec![Observation::new("a", "x", 0, 1.0), Observation::new("b", "x", 0, 0.0)];
        let plan = build_aa_plan(&[0, 1], 4).unwrap();
        let mut cfg = NullConfig::new(BootstrapMode::User);
        cfg.replicates = 50;
        let res = run_null_experiments(&data, &plan, &cfg);
        match res {
            Err(Error::NoTrials) => {}
            Ok(r) => {
                assert_eq!(r.comparisons.len(), 4);
                assert_eq!(r.coverage.k + r.coverage.skipped, 4);
            }
            Err(e) => panic!("{e}"),
        }
        assert_eq!(run_null_experiments(&[], &plan, &cfg), Err(Error::EmptyDataset));
    }

    #[test]
    fn rejections_match_reports() {
        let data: Vec<Observation> = (0..4000)
            .map(|i| {
                let y = (splitmix64(i) % 1000) as f64 / 1000.0;
                Observation::new(format!("u{}", i % 800), format!("i{}", i % 37), 0, y)
            })
            .collect();
        let plan = build_aa_plan(&[0, 1], 10).unwrap();
        let mut cfg = NullConfig::new(BootstrapMode::Multiway);
        cfg.replicates = 100;
        let a = run_null_experiments(&data, &plan, &cfg).unwrap();
        let flagged = a
            .comparisons
            .iter()
            .filter(|c| c.report.as_ref().is_some_and(|r| r.reject_null))
            .count();
        assert_eq!(a.coverage.rejections, flagged as u64);
        assert_eq!(a.coverage.k, 10);
        assert_eq!(a, run_null_experiments(&data, &plan, &cfg).unwrap());
        let salts: Vec<u64> = a.comparisons.iter().map(|c| c.bootstrap_salt).collect();
        let mut dedup = salts.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), salts.len());
    }

    #[test]
    fn layout_intervals_match_streaming() {
        let layout = gen_layout(&LayoutConfig {
            n_users_pool: 40,
            n_items_pool: 15,
            n_obs: 300,
            seed: 5,
            ..LayoutConfig::default()
        })
        .unwrap();
        let y: Vec<f64> = (0..layout.len()).map(|i| (i % 11) as f64 * 0.3).collect();
        let obs = layout.observations(&y);
        let fast = layout_intervals(
            &layout,
            &y,
            &BootstrapMode::ALL,
            64,
            0.05,
            WeightDistribution::Poisson,
            77,
        )
        .unwrap();
        for (mode, report) in BootstrapMode::ALL.iter().zip(&fast) {
            let mut acc =
                ReplicateAccumulator::new(BootstrapConfig::new(*mode).with_replicates(64).with_salt(77)).unwrap();
            for o in &obs {
                acc.push(o).unwrap();
            }
            assert_eq!(&acc.interval(0.05).unwrap(), report);
        }
    }

    #[test]
    fn sweep_keeps_going_after_bad_cell() {
        let layout = gen_layout(&LayoutConfig {
            n_users_pool: 60,
            n_items_pool: 10,
            n_obs: 400,
            seed: 1,
            ..LayoutConfig::default()
        })
        .unwrap();
        let grid = SweepGrid {
            sigma_alpha: vec![0.3],
            sigma_beta: vec![0.5],
            rho_beta: vec![2.0, 1.0],
            p: vec![0.0],
        };
        let plan = SimulationPlan {
            modes: vec![BootstrapMode::User],
            runs: 5,
            replicates: 50,
            ..SimulationPlan::default()
        };
        let rows = sweep(&layout, &RandomEffectsConfig::probit(0.3, 0.5, 1.0), &grid, &plan);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].result.is_err());
        let ok = rows[1].result.as_ref().unwrap();
        assert_eq!(ok[0].k + ok[0].skipped, 5);
        let empty = SweepGrid {
            sigma_alpha: vec![],
            sigma_beta: vec![0.1],
            rho_beta: vec![0.0],
            p: vec![0.0],
        };
        assert!(empty.cells().is_empty());
    }
}
