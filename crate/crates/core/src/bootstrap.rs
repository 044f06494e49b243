//! Single-pass weighted bootstrap of a difference in means.
//!
//! Each row adds `w_r` and `w_r · y` to the running sums of its condition for
//! every replicate `r`, where `w_r` comes from the row's unit weight streams
//! (see [`crate::hashing`]). Memory is `O(R)` per condition no matter how many
//! rows are seen, and accumulators over disjoint parts of a stream merge by
//! elementwise addition.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hashing::{observation_weight, UnitKey, UnitKind, UnitWeights, WeightDistribution};
use crate::normal;
use crate::observation::Observation;

pub const DEFAULT_REPLICATES: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Largest tolerated fraction of degenerate replicates.
pub const MAX_DEGENERATE_FRACTION: f64 = 0.01;

/// Which units share a bootstrap weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BootstrapMode {
    /// Every observation is reweighted independently.
    Iid,
    /// One-way bootstrap clustered on users.
    User,
    /// One-way bootstrap clustered on items.
    Item,
    /// Product of independent user and item weights.
    Multiway,
}

impl BootstrapMode {
    pub const ALL: [BootstrapMode; 4] = [
        BootstrapMode::Iid,
        BootstrapMode::User,
        BootstrapMode::Item,
        BootstrapMode::Multiway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BootstrapMode::Iid => "iid",
            BootstrapMode::User => "user",
            BootstrapMode::Item => "item",
            BootstrapMode::Multiway => "multiway",
        }
    }
}

impl core::fmt::Display for BootstrapMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for BootstrapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(BootstrapMode::Iid),
            "user" => Ok(BootstrapMode::User),
            "item" => Ok(BootstrapMode::Item),
            "multiway" => Ok(BootstrapMode::Multiway),
            other => Err(Error::param(
                "mode",
                alloc::format!("unknown bootstrap mode `{other}` (expected iid, user, item or multiway)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapConfig {
    pub mode: BootstrapMode,
    pub replicates: usize,
    /// Salt of the weight streams.
    pub salt: u64,
    pub dist: WeightDistribution,
}

impl BootstrapConfig {
    pub fn new(mode: BootstrapMode) -> Self {
        BootstrapConfig {
            mode,
            replicates: DEFAULT_REPLICATES,
            salt: 0,
            dist: WeightDistribution::default(),
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn with_salt(mut self, salt: u64) -> Self {
        self.salt = salt;
        self
    }

    pub fn with_dist(mut self, dist: WeightDistribution) -> Self {
        self.dist = dist;
        self
    }
}

/// Hashed keys of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowKeys {
    pub user: UnitKey,
    pub item: UnitKey,
    /// Position of the row in its input; only the iid mode uses it.
    pub ordinal: u64,
}

impl RowKeys {
    pub fn new(user: &str, item: &str, salt: u64, ordinal: u64) -> Result<Self> {
        Ok(RowKeys {
            user: UnitKey::new(UnitKind::User, user, salt)?,
            item: UnitKey::new(UnitKind::Item, item, salt)?,
            ordinal,
        })
    }

    /// Weights of all three unit kinds for replicate `r`.
    pub fn unit_weights(&self, r: usize, dist: WeightDistribution) -> UnitWeights {
        UnitWeights {
            user: self.user.weight(r, dist),
            item: self.item.weight(r, dist),
            observation: UnitKey::observation(self.user, self.item, self.ordinal).weight(r, dist),
        }
    }
}

/// Running per-replicate sufficient statistics for both conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateAccumulator {
    config: BootstrapConfig,
    sum_w: [Vec<f64>; 2],
    sum_wy: [Vec<f64>; 2],
    count: [u64; 2],
    sum_y: [f64; 2],
    rows: u64,
}

/// Replicate statistics that had positive weight in both conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateDeltas {
    pub deltas: Vec<f64>,
    /// Replicates dropped because a condition had zero total weight.
    pub degenerate: usize,
}

/// Normal-quantile interval from the spread of the replicates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntervalReport {
    pub mode: BootstrapMode,
    pub replicates: usize,
    pub n_control: u64,
    pub n_treatment: u64,
    /// Unweighted difference in means, treatment minus control.
    pub delta_hat: f64,
    pub replicate_mean: f64,
    pub replicate_sd: f64,
    pub alpha: f64,
    pub z: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reject_null: bool,
    pub degenerate_replicates: usize,
}

impl ReplicateAccumulator {
    pub fn new(config: BootstrapConfig) -> Result<Self> {
        if config.replicates == 0 {
            return Err(Error::ZeroReplicates);
        }
        let r = config.replicates;
        Ok(ReplicateAccumulator {
            config,
            sum_w: [vec![0.0; r], vec![0.0; r]],
            sum_wy: [vec![0.0; r], vec![0.0; r]],
            count: [0; 2],
            sum_y: [0.0; 2],
            rows: 0,
        })
    }

    pub fn config(&self) -> &BootstrapConfig {
        &self.config
    }

    /// Rows absorbed so far.
    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn count(&self, condition: u8) -> u64 {
        self.count[usize::from(condition)]
    }

    pub fn sum_outcomes(&self, condition: u8) -> f64 {
        self.sum_y[usize::from(condition)]
    }

    pub fn sum_weights(&self, condition: u8) -> &[f64] {
        &self.sum_w[usize::from(condition)]
    }

    pub fn sum_weighted_outcomes(&self, condition: u8) -> &[f64] {
        &self.sum_wy[usize::from(condition)]
    }

    /// Adds a row, using the number of rows seen so far as its ordinal.
    pub fn push(&mut self, obs: &Observation) -> Result<()> {
        self.push_at(obs, self.rows)
    }

    /// Adds a row with an explicit ordinal, for workers that each see part of
    /// a stream.
    pub fn push_at(&mut self, obs: &Observation, ordinal: u64) -> Result<()> {
        obs.validate()?;
        let keys = RowKeys::new(&obs.user, &obs.item, self.config.salt, ordinal)?;
        self.push_keyed(obs.condition, obs.outcome, keys)
    }

    /// Adds a row whose unit keys were already hashed with this
    /// accumulator's salt.
    pub fn push_keyed(&mut self, condition: u8, outcome: f64, keys: RowKeys) -> Result<()> {
        let dist = self.config.dist;
        match self.config.mode {
            BootstrapMode::Iid => {
                let key = UnitKey::observation(keys.user, keys.item, keys.ordinal);
                self.push_with(condition, outcome, |r| key.weight(r, dist))
            }
            BootstrapMode::User => self.push_with(condition, outcome, |r| keys.user.weight(r, dist)),
            BootstrapMode::Item => self.push_with(condition, outcome, |r| keys.item.weight(r, dist)),
            BootstrapMode::Multiway => self.push_with(condition, outcome, |r| {
                let w = UnitWeights {
                    user: keys.user.weight(r, dist),
                    item: keys.item.weight(r, dist),
                    observation: 0.0,
                };
                observation_weight(w, BootstrapMode::Multiway)
            }),
        }
    }

    /// Adds a row with caller-supplied replicate weights.
    pub fn push_with<F>(&mut self, condition: u8, outcome: f64, mut weight: F) -> Result<()>
    where
        F: FnMut(usize) -> f64,
    {
        if condition > 1 {
            return Err(Error::InvalidCondition(condition));
        }
        if !outcome.is_finite() {
            return Err(Error::NonFiniteOutcome(outcome));
        }
        let d = usize::from(condition);
        let (sw, swy) = (&mut self.sum_w[d], &mut self.sum_wy[d]);
        for (r, (w_acc, wy_acc)) in sw.iter_mut().zip(swy.iter_mut()).enumerate() {
            let w = weight(r);
            *w_acc += w;
            *wy_acc += w * outcome;
        }
        self.count[d] += 1;
        self.sum_y[d] += outcome;
        self.rows += 1;
        Ok(())
    }

    /// Adds the sums of `other`. Both must share one configuration.
    pub fn merge(&mut self, other: &ReplicateAccumulator) -> Result<()> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch);
        }
        for d in 0..2 {
            for (a, b) in self.sum_w[d].iter_mut().zip(&other.sum_w[d]) {
                *a += b;
            }
            for (a, b) in self.sum_wy[d].iter_mut().zip(&other.sum_wy[d]) {
                *a += b;
            }
            self.count[d] += other.count[d];
            self.sum_y[d] += other.sum_y[d];
        }
        self.rows += other.rows;
        Ok(())
    }

    pub fn merged(mut self, other: &ReplicateAccumulator) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    /// Unweighted difference in means, treatment minus control.
    pub fn delta_hat(&self) -> Result<f64> {
        for d in 0..2u8 {
            if self.count[usize::from(d)] == 0 {
                return Err(Error::EmptyCondition(d));
            }
        }
        Ok(self.sum_y[1] / self.count[1] as f64 - self.sum_y[0] / self.count[0] as f64)
    }

    /// Per-replicate weighted differences in means.
    pub fn replicate_deltas(&self) -> Result<ReplicateDeltas> {
        let r = self.config.replicates;
        let mut deltas = Vec::with_capacity(r);
        let mut degenerate = 0;
        for i in 0..r {
            let (w0, w1) = (self.sum_w[0][i], self.sum_w[1][i]);
            if w0 > 0.0 && w1 > 0.0 {
                deltas.push(self.sum_wy[1][i] / w1 - self.sum_wy[0][i] / w0);
            } else {
                degenerate += 1;
            }
        }
        if deltas.is_empty() {
            return Err(Error::AllReplicatesDegenerate { replicates: r });
        }
        Ok(ReplicateDeltas { deltas, degenerate })
    }

    /// Interval `mean ± z_{1-α/2} · sd` over the replicate deltas.
    pub fn interval(&self, alpha: f64) -> Result<IntervalReport> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let delta_hat = self.delta_hat()?;
        let ReplicateDeltas { deltas, degenerate } = self.replicate_deltas()?;
        let replicates = self.config.replicates;
        if degenerate as f64 > MAX_DEGENERATE_FRACTION * replicates as f64 {
            return Err(Error::TooManyDegenerate { degenerate, replicates });
        }
        if deltas.len() < 2 {
            return Err(Error::InsufficientReplicates {
                usable: deltas.len(),
                degenerate,
            });
        }
        let (replicate_mean, replicate_sd) = mean_sd(&deltas);
        let z = normal::two_sided_critical(alpha);
        let ci_lo = replicate_mean - z * replicate_sd;
        let ci_hi = replicate_mean + z * replicate_sd;
        Ok(IntervalReport {
            mode: self.config.mode,
            replicates,
            n_control: self.count[0],
            n_treatment: self.count[1],
            delta_hat,
            replicate_mean,
            replicate_sd,
            alpha,
            z,
            ci_lo,
            ci_hi,
            reject_null: !(ci_lo <= 0.0 && 0.0 <= ci_hi),
            degenerate_replicates: degenerate,
        })
    }
}

/// Mean and sample standard deviation.
pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}
