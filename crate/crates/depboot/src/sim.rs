//! `simulate` and `sweep`: flat TOML configs, dataset emission and
//! resumable coverage sweeps.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use depboot_core::evaluation::{run_cell, CoverageReport, SimulationPlan, SweepCell, SweepGrid};
use depboot_core::generators::{
    calibrate_layout, gen_layout, Assignment, CalibrationResult, CalibrationTarget, Layout, LayoutConfig, LogNormal,
    OutcomeSampler, RandomEffectsConfig, Residual,
};
use depboot_core::{BootstrapMode, DuplicationStats, WeightDistribution};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::input::Format;
use crate::report::{to_json, write_atomic, Report};

/// Parses a flat TOML config, listing every unknown key in one error.
pub fn parse_config<T: DeserializeOwned + Serialize + Default>(text: &str) -> AppResult<T> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| AppError::Config(format!("invalid TOML: {e}")))?;
    let known = match serde_json::to_value(T::default()) {
        Ok(serde_json::Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect::<BTreeSet<_>>(),
        _ => BTreeSet::new(),
    };
    let unknown: Vec<&str> = table
        .keys()
        .filter(|k| !known.contains(*k))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(AppError::Config(format!("unknown config keys: {}", unknown.join(", "))));
    }
    table
        .try_into()
        .map_err(|e| AppError::Config(format!("invalid config: {e}")))
}

pub fn read_config<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>) -> AppResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| AppError::io(format!("cannot read {}", p.display()), e))?;
            parse_config(&text)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentKind {
    Coin,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Probit,
    Linear,
}

/// Layout keys shared by `simulate` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutSettings {
    pub seed: u64,
    pub n_users_pool: usize,
    pub n_items_pool: usize,
    /// Total observations over both conditions.
    pub n_obs: usize,
    pub user_meanlog: f64,
    pub user_sdlog: f64,
    pub item_meanlog: f64,
    pub item_sdlog: f64,
    pub assignment: AssignmentKind,
    pub assignment_salt: u64,
    pub max_rebalance: usize,
    /// Tune the sdlogs (and `n_obs` if `target_users` is set) first.
    pub calibrate: bool,
    pub target_nu_user: f64,
    pub target_nu_item: f64,
    pub target_users: Option<u64>,
}

impl Default for LayoutSettings {
    fn default() -> Self {
        let t = CalibrationTarget::ADS_LIKE;
        LayoutSettings {
            seed: 1,
            n_users_pool: 3000,
            n_items_pool: 200,
            n_obs: 20_000,
            user_meanlog: 0.0,
            user_sdlog: 1.25,
            item_meanlog: 0.0,
            item_sdlog: 2.7,
            assignment: AssignmentKind::Coin,
            assignment_salt: 0,
            max_rebalance: 100_000,
            calibrate: false,
            target_nu_user: t.nu_user,
            target_nu_item: t.nu_item,
            target_users: t.users,
        }
    }
}

/// A built layout with how it was obtained.
#[derive(Debug, Clone)]
pub struct BuiltLayout {
    pub layout: Layout,
    pub config: LayoutConfig,
    pub calibration: Option<CalibrationResult>,
}

impl LayoutSettings {
    pub fn layout_config(&self) -> LayoutConfig {
        LayoutConfig {
            n_users_pool: self.n_users_pool,
            n_items_pool: self.n_items_pool,
            n_obs: self.n_obs,
            user_scores: LogNormal {
                meanlog: self.user_meanlog,
                sdlog: self.user_sdlog,
            },
            item_scores: LogNormal {
                meanlog: self.item_meanlog,
                sdlog: self.item_sdlog,
            },
            assignment: match self.assignment {
                AssignmentKind::Coin => Assignment::Coin,
                AssignmentKind::Segment => Assignment::Segment {
                    salt: self.assignment_salt,
                },
            },
            max_rebalance: self.max_rebalance,
            seed: self.seed,
        }
    }

    pub fn build(&self) -> AppResult<BuiltLayout> {
        let mut config = self.layout_config();
        let calibration = if self.calibrate {
            let res = calibrate_layout(
                &config,
                CalibrationTarget {
                    nu_user: self.target_nu_user,
                    nu_item: self.target_nu_item,
                    users: self.target_users,
                },
            )?;
            config = res.config;
            Some(res)
        } else {
            None
        };
        Ok(BuiltLayout {
            layout: gen_layout(&config)?,
            config,
            calibration,
        })
    }
}

/// Outcome-model keys other than the swept ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectSettings {
    pub model: Model,
    /// Defaults to −2 for probit and 0 for linear.
    pub mu: Option<f64>,
    pub delta: f64,
    pub sigma_eps: f64,
    pub rho_alpha: f64,
    pub rho_eps: f64,
    /// Defaults to true for probit.
    pub rescale: Option<bool>,
    /// Defaults to `observation` for probit and `pair` for linear.
    pub residual: Option<Residual>,
}

impl Default for EffectSettings {
    fn default() -> Self {
        EffectSettings {
            model: Model::Probit,
            mu: None,
            delta: 0.0,
            sigma_eps: 1.0,
            rho_alpha: 1.0,
            rho_eps: 1.0,
            rescale: None,
            residual: None,
        }
    }
}

impl EffectSettings {
    pub fn effects(&self, sigma_alpha: f64, sigma_beta: f64, rho_beta: f64) -> RandomEffectsConfig {
        let mut cfg = match self.model {
            Model::Probit => RandomEffectsConfig::probit(sigma_alpha, sigma_beta, rho_beta),
            Model::Linear => {
                RandomEffectsConfig::linear(0.0, sigma_alpha, sigma_beta, self.sigma_eps).with_rho_beta(rho_beta)
            }
        };
        if let Some(mu) = self.mu {
            cfg.mu = mu;
        }
        if let Some(r) = self.rescale {
            cfg.rescale_to_unit_total = r;
        }
        if let Some(r) = self.residual {
            cfg.residual = r;
        }
        cfg.delta = self.delta;
        cfg.sigma_eps = self.sigma_eps;
        cfg.rho_alpha = self.rho_alpha;
        cfg.rho_eps = self.rho_eps;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub layout: LayoutSettings,
    #[serde(flatten)]
    pub effects: EffectSettings,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub rho_beta: f64,
    /// Seed of the outcome draw; the layout uses `seed`.
    pub outcome_seed: u64,
    pub format: Format,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            layout: LayoutSettings::default(),
            effects: EffectSettings::default(),
            sigma_alpha: 0.3,
            sigma_beta: 0.5,
            rho_beta: 1.0,
            outcome_seed: 0,
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub files: Vec<PathBuf>,
    pub rows: usize,
    pub balanced: bool,
    pub mean_outcome: f64,
    pub duplication: DuplicationStats,
    pub layout: LayoutConfig,
    pub effects: RandomEffectsConfig,
    pub calibration: Option<CalibrationResult>,
}

fn dataset_text(layout: &Layout, y: &[f64], format: Format) -> AppResult<String> {
    let encode = |e: csv::Error| AppError::Input(format!("cannot encode CSV: {e}"));
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["user_id", "item_id", "condition", "outcome"])
                .map_err(encode)?;
            for (r, v) in layout.rows().iter().zip(y) {
                w.write_record([
                    Layout::user_id(r.user),
                    Layout::item_id(r.item),
                    r.condition.to_string(),
                    v.to_string(),
                ])
                .map_err(encode)?;
            }
            let bytes = w.into_inner().map_err(|e| AppError::Input(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| AppError::Input(e.to_string()))
        }
        Format::Jsonl => {
            let mut s = String::new();
            for (r, v) in layout.rows().iter().zip(y) {
                let line = serde_json::json!({
                    "user_id": Layout::user_id(r.user),
                    "item_id": Layout::item_id(r.item),
                    "condition": r.condition,
                    "outcome": v,
                });
                s.push_str(&line.to_string());
                s.push('\n');
            }
            Ok(s)
        }
    }
}

/// Generates a dataset into `out_dir` as `data.csv`/`data.jsonl` plus
/// `manifest.json`.
pub fn simulate(cfg: &SimulateConfig, out_dir: &Path) -> AppResult<Report<SimulateConfig, Manifest>> {
    let built = cfg.layout.build()?;
    let effects = cfg.effects.effects(cfg.sigma_alpha, cfg.sigma_beta, cfg.rho_beta);
    let y = OutcomeSampler::new(&built.layout, effects)?.draw(cfg.outcome_seed);
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(format!("cannot create {}", out_dir.display()), e))?;
    let name = match cfg.format {
        Format::Csv => "data.csv",
        Format::Jsonl => "data.jsonl",
    };
    let data_path = out_dir.join(name);
    write_atomic(&data_path, &dataset_text(&built.layout, &y, cfg.format)?)?;
    let manifest = Manifest {
        files: vec![PathBuf::from(name)],
        rows: y.len(),
        balanced: built.layout.is_balanced(),
        mean_outcome: y.iter().sum::<f64>() / y.len() as f64,
        duplication: built.layout.duplication(),
        layout: built.config,
        effects,
        calibration: built.calibration,
    };
    let report = Report::new("simulate", cfg.clone(), manifest);
    write_atomic(&out_dir.join("manifest.json"), &to_json(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    #[serde(flatten)]
    pub layout: LayoutSettings,
    #[serde(flatten)]
    pub effects: EffectSettings,
    pub sigma_alpha: Vec<f64>,
    pub sigma_beta: Vec<f64>,
    pub rho_beta: Vec<f64>,
    /// Item imbalance probabilities.
    pub p: Vec<f64>,
    pub modes: Vec<BootstrapMode>,
    pub runs: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub dist: WeightDistribution,
    pub level: f64,
    pub sim_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            layout: LayoutSettings::default(),
            effects: EffectSettings::default(),
            sigma_alpha: vec![0.3],
            sigma_beta: vec![0.1, 0.3, 0.5, 1.0],
            rho_beta: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            p: vec![0.0],
            modes: BootstrapMode::ALL.to_vec(),
            runs: 100,
            replicates: 200,
            alpha: depboot_core::bootstrap::DEFAULT_ALPHA,
            dist: WeightDistribution::Poisson,
            level: depboot_core::evaluation::DEFAULT_LEVEL,
            sim_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            sigma_alpha: self.sigma_alpha.clone(),
            sigma_beta: self.sigma_beta.clone(),
            rho_beta: self.rho_beta.clone(),
            p: self.p.clone(),
        }
    }

    pub fn plan(&self) -> SimulationPlan {
        SimulationPlan {
            modes: self.modes.clone(),
            runs: self.runs,
            replicates: self.replicates,
            alpha: self.alpha,
            dist: self.dist,
            level: self.level,
            seed: self.sim_seed,
        }
    }
}

/// Saved result of one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Whole sweep config; a checkpoint from another config is ignored.
    pub config: serde_json::Value,
    pub index: usize,
    pub cell: SweepCell,
    pub result: Result<Vec<CoverageReport>, String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub computed: usize,
    pub resumed: usize,
    pub failed: usize,
}

fn checkpoint_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("cell-{index:05}.json"))
}

fn load_checkpoint(path: &Path, config: &serde_json::Value, index: usize) -> Option<Checkpoint> {
    let text = std::fs::read_to_string(path).ok()?;
    let cp: Checkpoint = serde_json::from_str(&text).ok()?;
    (cp.config == *config && cp.index == index).then_some(cp)
}

const CSV_HEADER: [&str; 12] = [
    "sigma_alpha",
    "sigma_beta",
    "rho_beta",
    "p",
    "mode",
    "K",
    "rejections",
    "coverage",
    "wilson_lo",
    "wilson_hi",
    "skipped",
    "error",
];

/// Results table: one row per cell and mode, or one error row per failed
/// cell.
pub fn sweep_csv(checkpoints: &[Checkpoint]) -> AppResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let encode = |e: csv::Error| AppError::Input(format!("cannot encode CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(encode)?;
    for cp in checkpoints {
        let c = cp.cell;
        let head = [c.sigma_alpha, c.sigma_beta, c.rho_beta, c.p].map(|v| v.to_string());
        match &cp.result {
            Ok(reports) => {
                for r in reports {
                    let mut row = head.to_vec();
                    row.extend([
                        r.method.name().to_string(),
                        r.k.to_string(),
                        r.rejections.to_string(),
                        r.true_coverage.to_string(),
                        r.wilson_lo.to_string(),
                        r.wilson_hi.to_string(),
                        r.skipped.to_string(),
                        String::new(),
                    ]);
                    w.write_record(&row).map_err(encode)?;
                }
            }
            Err(msg) => {
                let mut row = head.to_vec();
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(msg.clone());
                w.write_record(&row).map_err(encode)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| AppError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AppError::Input(e.to_string()))
}

/// Runs every grid cell not already checkpointed in `checkpoint_dir`,
/// writing each finished cell before moving on. Cells run on `jobs`
/// threads. Returns the table of all cells in grid order.
pub fn sweep(cfg: &SweepConfig, checkpoint_dir: &Path, jobs: usize) -> AppResult<(String, SweepSummary)> {
    let config_value = serde_json::to_value(cfg).map_err(|e| AppError::Config(e.to_string()))?;
    let cells = cfg.grid().cells();
    let mut summary = SweepSummary {
        cells: cells.len(),
        ..SweepSummary::default()
    };
    if cells.is_empty() {
        return Ok((sweep_csv(&[])?, summary));
    }
    std::fs::create_dir_all(checkpoint_dir)
        .map_err(|e| AppError::io(format!("cannot create {}", checkpoint_dir.display()), e))?;
    let mut done: Vec<Option<Checkpoint>> = (0..cells.len())
        .map(|i| load_checkpoint(&checkpoint_path(checkpoint_dir, i), &config_value, i))
        .collect();
    summary.resumed = done.iter().filter(|c| c.is_some()).count();
    let todo: Vec<usize> = (0..cells.len()).filter(|&i| done[i].is_none()).collect();
    if !todo.is_empty() {
        let built = cfg.layout.build()?;
        let base = cfg.effects.effects(0.0, 0.0, 1.0);
        let plan = cfg.plan();
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::new());
        let first_error: Mutex<Option<AppError>> = Mutex::new(None);
        std::thread::scope(|s| {
            for _ in 0..jobs.clamp(1, todo.len()) {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&index) = todo.get(k) else { break };
                    let cell = cells[index];
                    let result = run_cell(&built.layout, &base, &cell, &plan).map_err(|e| e.to_string());
                    let cp = Checkpoint {
                        config: config_value.clone(),
                        index,
                        cell,
                        result,
                    };
                    let written = to_json(&cp).and_then(|t| write_atomic(&checkpoint_path(checkpoint_dir, index), &t));
                    if let Err(e) = written {
                        first_error.lock().expect("lock").get_or_insert(e);
                        break;
                    }
                    results.lock().expect("lock").push(cp);
                });
            }
        });
        if let Some(e) = first_error.into_inner().expect("lock") {
            return Err(e);
        }
        for cp in results.into_inner().expect("lock") {
            summary.computed += 1;
            let i = cp.index;
            done[i] = Some(cp);
        }
    }
    let all: Vec<Checkpoint> = done.into_iter().map(|c| c.expect("every cell finished")).collect();
    summary.failed = all.iter().filter(|c| c.result.is_err()).count();
    Ok((sweep_csv(&all)?, summary))
}
