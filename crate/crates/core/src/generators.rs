//! Synthetic user–item layouts and outcomes from crossed random-effects
//! models.
//!
//! A layout is drawn by giving every pooled user and item a log-normal
//! popularity score and sampling each observation's user and item
//! independently in proportion to those scores. Users are then assigned to
//! conditions. Outcomes follow
//!
//! `y = μ + δ·[d = 1] + α_i^(d) + β_j^(d) + ε_ij^(d)`
//!
//! where each effect is a bivariate normal across the two conditions. The
//! probit variant reports `1{y > 0}`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::duplication::{DuplicationStats, ExposureCounts};
use crate::error::{Error, Result};
use crate::hashing::{segment_of, splitmix64};
use crate::normal;
use crate::observation::Observation;

const USER_STREAM: u64 = 1;
const ITEM_STREAM: u64 = 2;
const ASSIGN_STREAM: u64 = 3;
const USER_EFFECT_STREAM: u64 = 4;
const ITEM_EFFECT_STREAM: u64 = 5;
const RESIDUAL_STREAM: u64 = 6;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogNormal {
    pub meanlog: f64,
    pub sdlog: f64,
}

impl Default for LogNormal {
    fn default() -> Self {
        LogNormal {
            meanlog: 0.0,
            sdlog: 1.0,
        }
    }
}

/// How realized users are split between conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Assignment {
    /// Fair coin per user, redrawn until the conditions balance.
    Coin,
    /// Parity of `segment_of(user, salt + attempt, 2)`.
    Segment { salt: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutConfig {
    pub n_users_pool: usize,
    pub n_items_pool: usize,
    /// Total observations over both conditions (2N).
    pub n_obs: usize,
    pub user_scores: LogNormal,
    pub item_scores: LogNormal,
    pub assignment: Assignment,
    /// Assignment redraws allowed while searching for `|N_1 − N_0| ≤ 1`.
    pub max_rebalance: usize,
    pub seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            n_users_pool: 3000,
            n_items_pool: 200,
            n_obs: 10_000,
            user_scores: LogNormal::default(),
            item_scores: LogNormal::default(),
            assignment: Assignment::Coin,
            max_rebalance: 100_000,
            seed: 0,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users_pool == 0 || self.n_items_pool == 0 {
            return Err(Error::DegenerateLayout(String::from("unit pools must be non-empty")));
        }
        if self.n_users_pool > u32::MAX as usize || self.n_items_pool > u32::MAX as usize {
            return Err(Error::DegenerateLayout(String::from("unit pools exceed u32 range")));
        }
        if self.n_obs < 2 {
            return Err(Error::DegenerateLayout(format!(
                "need at least 2 observations, got {}",
                self.n_obs
            )));
        }
        for (name, s) in [("user_scores", self.user_scores), ("item_scores", self.item_scores)] {
            if !s.meanlog.is_finite() || !s.sdlog.is_finite() || s.sdlog < 0.0 {
                return Err(Error::param(
                    name,
                    "log-normal parameters must be finite with sdlog >= 0",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutRow {
    pub user: u32,
    pub item: u32,
    pub condition: u8,
}

/// Observed user–item pairs with a condition per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    rows: Vec<LayoutRow>,
    n_users_pool: usize,
    n_items_pool: usize,
    balanced: bool,
}

impl Layout {
    /// Builds a layout from explicit rows. A user must keep one condition.
    pub fn from_rows(rows: Vec<LayoutRow>, n_users_pool: usize, n_items_pool: usize) -> Result<Self> {
        let mut seen: Vec<Option<u8>> = vec![None; n_users_pool];
        let mut n = [0usize; 2];
        for r in &rows {
            if r.user as usize >= n_users_pool || r.item as usize >= n_items_pool {
                return Err(Error::DegenerateLayout(String::from("unit index outside its pool")));
            }
            if r.condition > 1 {
                return Err(Error::InvalidCondition(r.condition));
            }
            match seen[r.user as usize] {
                Some(c) if c != r.condition => {
                    return Err(Error::DegenerateLayout(format!(
                        "user {} appears in both conditions",
                        r.user
                    )))
                }
                _ => seen[r.user as usize] = Some(r.condition),
            }
            n[usize::from(r.condition)] += 1;
        }
        Ok(Layout {
            rows,
            n_users_pool,
            n_items_pool,
            balanced: n[0] == n[1],
        })
    }

    pub fn rows(&self) -> &[LayoutRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_users_pool(&self) -> usize {
        self.n_users_pool
    }

    pub fn n_items_pool(&self) -> usize {
        self.n_items_pool
    }

    /// Whether both conditions hold exactly N observations.
    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    pub fn n_per_condition(&self) -> [u64; 2] {
        let mut n = [0u64; 2];
        for r in &self.rows {
            n[usize::from(r.condition)] += 1;
        }
        n
    }

    /// Exposure counts indexed by pool position (unseen units count zero).
    pub fn counts(&self) -> ExposureCounts {
        let mut users = vec![[0u64; 2]; self.n_users_pool];
        let mut items = vec![[0u64; 2]; self.n_items_pool];
        let mut pair_keys: Vec<(u32, u32, u8)> = self.rows.iter().map(|r| (r.user, r.item, r.condition)).collect();
        for r in &self.rows {
            users[r.user as usize][usize::from(r.condition)] += 1;
            items[r.item as usize][usize::from(r.condition)] += 1;
        }
        pair_keys.sort_unstable();
        let mut pairs: Vec<[u64; 2]> = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        for (u, i, d) in pair_keys {
            if last != Some((u, i)) {
                pairs.push([0, 0]);
                last = Some((u, i));
            }
            if let Some(p) = pairs.last_mut() {
                p[usize::from(d)] += 1;
            }
        }
        ExposureCounts { users, items, pairs }
    }

    pub fn duplication(&self) -> DuplicationStats {
        self.counts().stats()
    }

    /// Whether every user–item pair appears at most once.
    pub fn pairs_unique(&self) -> bool {
        self.counts().pairs.iter().all(|c| c[0] + c[1] <= 1)
    }

    pub fn user_id(user: u32) -> String {
        format!("{user}")
    }

    pub fn item_id(item: u32) -> String {
        format!("{item}")
    }

    /// Pairs rows with outcomes drawn for this layout.
    pub fn observations(&self, outcomes: &[f64]) -> Vec<Observation> {
        self.rows
            .iter()
            .zip(outcomes)
            .map(|(r, &y)| Observation::new(Self::user_id(r.user), Self::item_id(r.item), r.condition, y))
            .collect()
    }
}

fn cumulative_scores(rng: &mut ChaCha8Rng, pool: usize, dist: LogNormal) -> Vec<f64> {
    let mut acc = 0.0;
    (0..pool)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            acc += libm::exp(dist.meanlog + dist.sdlog * z);
            acc
        })
        .collect()
}

fn pick(cumulative: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let total = cumulative[cumulative.len() - 1];
    let target = rng.random::<f64>() * total;
    let idx = cumulative.partition_point(|&c| c <= target);
    idx.min(cumulative.len() - 1) as u32
}

/// Draws the unassigned (user, item) pairs.
fn sample_pairs(cfg: &LayoutConfig) -> Vec<(u32, u32)> {
    let mut user_rng = rng_for(cfg.seed, USER_STREAM);
    let mut item_rng = rng_for(cfg.seed, ITEM_STREAM);
    let users = cumulative_scores(&mut user_rng, cfg.n_users_pool, cfg.user_scores);
    let items = cumulative_scores(&mut item_rng, cfg.n_items_pool, cfg.item_scores);
    (0..cfg.n_obs)
        .map(|_| (pick(&users, &mut user_rng), pick(&items, &mut item_rng)))
        .collect()
}

fn pooled_stats(pairs: &[(u32, u32)], cfg: &LayoutConfig) -> (f64, f64, u64, u64) {
    let mut users = vec![0u64; cfg.n_users_pool];
    let mut items = vec![0u64; cfg.n_items_pool];
    for &(u, i) in pairs {
        users[u as usize] += 1;
        items[i as usize] += 1;
    }
    let n = pairs.len() as f64;
    let nu = |v: &[u64]| v.iter().map(|&c| (c * c) as f64).sum::<f64>() / n;
    let distinct = |v: &[u64]| v.iter().filter(|&&c| c > 0).count() as u64;
    (nu(&users), nu(&items), distinct(&users), distinct(&items))
}

/// Draws a layout: scored sampling of pairs, then user-level assignment
/// redrawn until `|N_1 − N_0| ≤ 1`, then one row trimmed if needed.
///
/// If no balanced assignment is found within `max_rebalance` draws, the
/// closest one is kept and the layout reports `is_balanced() == false`.
pub fn gen_layout(cfg: &LayoutConfig) -> Result<Layout> {
    cfg.validate()?;
    let pairs = sample_pairs(cfg);
    let mut user_obs = vec![0u64; cfg.n_users_pool];
    for &(u, _) in &pairs {
        user_obs[u as usize] += 1;
    }
    let realized: Vec<u32> = (0..cfg.n_users_pool as u32)
        .filter(|&u| user_obs[u as usize] > 0)
        .collect();

    let mut assign_rng = rng_for(cfg.seed, ASSIGN_STREAM);
    let mut condition = vec![0u8; cfg.n_users_pool];
    let mut best: Option<(u64, Vec<u8>)> = None;
    for attempt in 0..cfg.max_rebalance.max(1) {
        let mut n = [0u64; 2];
        for &u in &realized {
            let d = match cfg.assignment {
                Assignment::Coin => u8::from(assign_rng.random::<bool>()),
                Assignment::Segment { salt } => {
                    segment_of(&Layout::user_id(u), salt.wrapping_add(attempt as u64), 2)? as u8
                }
            };
            condition[u as usize] = d;
            n[usize::from(d)] += user_obs[u as usize];
        }
        let gap = n[0].abs_diff(n[1]);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, condition.clone()));
        }
        if gap <= 1 {
            break;
        }
    }
    let (gap, condition) = best.unwrap_or((u64::MAX, condition));

    let mut rows: Vec<LayoutRow> = pairs
        .iter()
        .map(|&(user, item)| LayoutRow {
            user,
            item,
            condition: condition[user as usize],
        })
        .collect();
    if gap == 1 {
        let n1 = rows.iter().filter(|r| r.condition == 1).count();
        let larger = u8::from(2 * n1 > rows.len());
        if let Some(pos) = rows.iter().rposition(|r| r.condition == larger) {
            rows.remove(pos);
        }
    }
    let mut layout = Layout::from_rows(rows, cfg.n_users_pool, cfg.n_items_pool)?;
    layout.balanced = gap <= 1;
    Ok(layout)
}

/// Targets for [`calibrate_layout`], on pooled (both-condition) duplication.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationTarget {
    pub nu_user: f64,
    pub nu_item: f64,
    /// Distinct realized users; when set, `n_obs` is tuned as well.
    pub users: Option<u64>,
}

impl CalibrationTarget {
    /// The ads-like layout: ν_A ≈ 30.9, ν_B ≈ 6077.4, 2481 realized users.
    pub const ADS_LIKE: CalibrationTarget = CalibrationTarget {
        nu_user: 30.9,
        nu_item: 6077.4,
        users: Some(2481),
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationResult {
    pub config: LayoutConfig,
    pub nu_user: f64,
    pub nu_item: f64,
    pub users: u64,
    pub items: u64,
}

fn bisect_sdlog(cfg: &mut LayoutConfig, target: f64, item: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 6.0f64);
    let mut value = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if item {
            cfg.item_scores.sdlog = mid;
        } else {
            cfg.user_scores.sdlog = mid;
        }
        let pairs = sample_pairs(cfg);
        let (nu_u, nu_i, _, _) = pooled_stats(&pairs, cfg);
        value = if item { nu_i } else { nu_u };
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    value
}

/// Tunes the log-normal `sdlog`s (and `n_obs` when a user count is targeted)
/// so the pooled duplication of a layout drawn with `base.seed` hits the
/// targets. Users and items are sampled from separate streams, so the two
/// `sdlog`s are solved independently by bisection.
pub fn calibrate_layout(base: &LayoutConfig, target: CalibrationTarget) -> Result<CalibrationResult> {
    base.validate()?;
    if !(target.nu_user >= 1.0 && target.nu_item >= 1.0) {
        return Err(Error::param("target", "duplication targets must be at least 1"));
    }
    let solve = |n_obs: usize| {
        let mut cfg = *base;
        cfg.n_obs = n_obs;
        bisect_sdlog(&mut cfg, target.nu_user, false);
        bisect_sdlog(&mut cfg, target.nu_item, true);
        let (nu_u, nu_i, users, items) = pooled_stats(&sample_pairs(&cfg), &cfg);
        CalibrationResult {
            config: cfg,
            nu_user: nu_u,
            nu_item: nu_i,
            users,
            items,
        }
    };
    let Some(target_users) = target.users else {
        return Ok(solve(base.n_obs));
    };
    if target_users as usize > base.n_users_pool {
        return Err(Error::param("target.users", "exceeds the user pool"));
    }
    // Realized users grow with n_obs once ν_user is pinned.
    let (mut lo, mut hi) = (base.n_users_pool.max(2) / 4, base.n_users_pool * 64);
    let mut best = solve(base.n_obs);
    let mut best_gap = best.users.abs_diff(target_users);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let res = solve(mid);
        let gap = res.users.abs_diff(target_users);
        if gap < best_gap {
            best = res;
            best_gap = gap;
        }
        if res.users < target_users {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= base.n_obs.max(2) / 1000 {
            break;
        }
    }
    Ok(best)
}

/// Link between the latent score and the reported outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Link {
    Identity,
    /// `1{y > 0}`.
    Probit,
}

/// Granularity of the residual ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Residual {
    /// One draw per user–item pair, shared by repeated observations.
    Pair,
    /// One draw per observation.
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomEffectsConfig {
    /// Grand mean on the latent scale.
    pub mu: f64,
    /// Shift added to condition 1 (0 under the null).
    pub delta: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_eps: f64,
    pub rho_alpha: f64,
    pub rho_beta: f64,
    pub rho_eps: f64,
    pub link: Link,
    /// Scale the three variances by one factor so they sum to 1.
    pub rescale_to_unit_total: bool,
    pub residual: Residual,
}

impl RandomEffectsConfig {
    pub fn linear(mu: f64, sigma_alpha: f64, sigma_beta: f64, sigma_eps: f64) -> Self {
        RandomEffectsConfig {
            mu,
            delta: 0.0,
            sigma_alpha,
            sigma_beta,
            sigma_eps,
            rho_alpha: 1.0,
            rho_beta: 1.0,
            rho_eps: 1.0,
            link: Link::Identity,
            rescale_to_unit_total: false,
            residual: Residual::Pair,
        }
    }

    /// Probit model with `μ = −2`, a unit-variance residual before rescaling,
    /// and variances rescaled to sum to 1, giving `E[Y] = Φ(−2) ≈ 0.023`.
    pub fn probit(sigma_alpha: f64, sigma_beta: f64, rho_beta: f64) -> Self {
        RandomEffectsConfig {
            mu: -2.0,
            delta: 0.0,
            sigma_alpha,
            sigma_beta,
            sigma_eps: 1.0,
            rho_alpha: 1.0,
            rho_beta,
            rho_eps: 1.0,
            link: Link::Probit,
            rescale_to_unit_total: true,
            residual: Residual::Observation,
        }
    }

    pub fn with_rho_beta(mut self, rho_beta: f64) -> Self {
        self.rho_beta = rho_beta;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.delta.is_finite() {
            return Err(Error::param("mu", "mean parameters must be finite"));
        }
        for (name, s) in [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::param(name, format!("must be finite and non-negative, got {s}")));
            }
        }
        for (name, r) in [
            ("rho_alpha", self.rho_alpha),
            ("rho_beta", self.rho_beta),
            ("rho_eps", self.rho_eps),
        ] {
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::param(name, format!("must lie in [-1, 1], got {r}")));
            }
        }
        if self.rescale_to_unit_total && self.total_variance() == 0.0 {
            return Err(Error::param("rescale_to_unit_total", "all variances are zero"));
        }
        Ok(())
    }

    fn total_variance(&self) -> f64 {
        self.sigma_alpha * self.sigma_alpha + self.sigma_beta * self.sigma_beta + self.sigma_eps * self.sigma_eps
    }

    /// `(σ_α, σ_β, σ_ε)` after optional rescaling.
    pub fn effective_sds(&self) -> (f64, f64, f64) {
        let scale = if self.rescale_to_unit_total {
            libm::sqrt(1.0 / self.total_variance())
        } else {
            1.0
        };
        (
            self.sigma_alpha * scale,
            self.sigma_beta * scale,
            self.sigma_eps * scale,
        )
    }

    /// Variance components implied for the linear model.
    pub fn variance_components(&self) -> crate::oracle::VarianceComponents {
        let (sa, sb, se) = self.effective_sds();
        crate::oracle::VarianceComponents {
            sigma_alpha: [sa; 2],
            sigma_beta: [sb; 2],
            sigma_eps: [se; 2],
            cov_beta01: self.rho_beta * sb * sb,
            cov_alpha01: self.rho_alpha * sa * sa,
            cov_eps01: self.rho_eps * se * se,
        }
    }
}

/// Bivariate normal with both margins `N(0, sd²)` and correlation `rho`.
pub fn draw_correlated_pair<R: Rng + ?Sized>(sd: f64, rho: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    correlate(sd, rho, z1, z2)
}

#[inline]
fn correlate(sd: f64, rho: f64, z1: f64, z2: f64) -> (f64, f64) {
    (sd * z1, sd * (rho * z1 + libm::sqrt((1.0 - rho * rho).max(0.0)) * z2))
}

/// Normal draw keyed by `(seed, a, b, slot)` without RNG state.
fn keyed_normal(seed: u64, a: u32, b: u32, slot: u64) -> f64 {
    let bits = splitmix64(splitmix64(seed ^ (u64::from(a) << 32 | u64::from(b))) ^ slot);
    let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    normal::quantile(u)
}

/// Reusable sampler of outcome vectors for a fixed layout.
#[derive(Debug, Clone)]
pub struct OutcomeSampler<'a> {
    layout: &'a Layout,
    cfg: RandomEffectsConfig,
    alpha: Vec<f64>,
    beta: Vec<[f64; 2]>,
    user_condition: Vec<u8>,
}

impl<'a> OutcomeSampler<'a> {
    pub fn new(layout: &'a Layout, cfg: RandomEffectsConfig) -> Result<Self> {
        cfg.validate()?;
        let mut user_condition = vec![0u8; layout.n_users_pool];
        for r in &layout.rows {
            user_condition[r.user as usize] = r.condition;
        }
        Ok(OutcomeSampler {
            layout,
            cfg,
            alpha: vec![0.0; layout.n_users_pool],
            beta: vec![[0.0; 2]; layout.n_items_pool],
            user_condition,
        })
    }

    pub fn config(&self) -> &RandomEffectsConfig {
        &self.cfg
    }

    /// Draws one outcome per layout row into `out`, deterministically in
    /// `seed`.
    pub fn draw_into(&mut self, seed: u64, out: &mut Vec<f64>) {
        let cfg = self.cfg;
        let (sa, sb, se) = cfg.effective_sds();
        let mut user_rng = rng_for(seed, USER_EFFECT_STREAM);
        for (a, &d) in self.alpha.iter_mut().zip(&self.user_condition) {
            let (a0, a1) = draw_correlated_pair(sa, cfg.rho_alpha, &mut user_rng);
            *a = if d == 1 { a1 } else { a0 };
        }
        let mut item_rng = rng_for(seed, ITEM_EFFECT_STREAM);
        for b in &mut self.beta {
            let (b0, b1) = draw_correlated_pair(sb, cfg.rho_beta, &mut item_rng);
            *b = [b0, b1];
        }
        let mut resid_rng = rng_for(seed, RESIDUAL_STREAM);
        out.clear();
        out.reserve(self.layout.rows.len());
        for r in &self.layout.rows {
            let d = usize::from(r.condition);
            let eps = match cfg.residual {
                Residual::Observation => {
                    let (e0, e1) = draw_correlated_pair(se, cfg.rho_eps, &mut resid_rng);
                    if d == 1 {
                        e1
                    } else {
                        e0
                    }
                }
                Residual::Pair => {
                    let z1 = keyed_normal(seed, r.user, r.item, 0);
                    let z2 = keyed_normal(seed, r.user, r.item, 1);
                    let (e0, e1) = correlate(se, cfg.rho_eps, z1, z2);
                    if d == 1 {
                        e1
                    } else {
                        e0
                    }
                }
            };
            let shift = if d == 1 { cfg.delta } else { 0.0 };
            let y = cfg.mu + shift + self.alpha[r.user as usize] + self.beta[r.item as usize][d] + eps;
            out.push(match cfg.link {
                Link::Identity => y,
                Link::Probit => {
                    if y > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            });
        }
    }

    pub fn draw(&mut self, seed: u64) -> Vec<f64> {
        let mut out = Vec::new();
        self.draw_into(seed, &mut out);
        out
    }

    /// Item effects of the last draw, `[β^(0), β^(1)]` per pooled item.
    pub fn item_effects(&self) -> &[[f64; 2]] {
        &self.beta
    }
}

/// Linear-normal outcomes for a layout.
pub fn gen_linear(layout: &Layout, cfg: &RandomEffectsConfig, seed: u64) -> Result<Vec<Observation>> {
    if cfg.link != Link::Identity {
        return Err(Error::param("link", "gen_linear needs the identity link"));
    }
    let y = OutcomeSampler::new(layout, *cfg)?.draw(seed);
    Ok(layout.observations(&y))
}

/// Binary outcomes `1{y > 0}` for a layout.
pub fn gen_probit(layout: &Layout, cfg: &RandomEffectsConfig, seed: u64) -> Result<Vec<Observation>> {
    if cfg.link != Link::Probit {
        return Err(Error::param("link", "gen_probit needs the probit link"));
    }
    let y = OutcomeSampler::new(layout, *cfg)?.draw(seed);
    Ok(layout.observations(&y))
}

/// Unweighted difference in means of an outcome vector over a layout.
pub fn delta_hat(layout: &Layout, outcomes: &[f64]) -> f64 {
    let mut sum = [0.0f64; 2];
    let mut n = [0u64; 2];
    for (r, &y) in layout.rows.iter().zip(outcomes) {
        sum[usize::from(r.condition)] += y;
        n[usize::from(r.condition)] += 1;
    }
    sum[1] / n[1] as f64 - sum[0] / n[0] as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> LayoutConfig {
        LayoutConfig {
            n_users_pool: 50,
            n_items_pool: 20,
            n_obs: 400,
            seed,
            ..LayoutConfig::default()
        }
    }

    #[test]
    fn single_pair_layout() {
        let cfg = LayoutConfig {
            n_users_pool: 1,
            n_items_pool: 1,
            n_obs: 4,
            max_rebalance: 10,
            ..LayoutConfig::default()
        };
        let layout = gen_layout(&cfg).unwrap();
        assert_eq!(layout.len(), 4);
        assert!(!layout.is_balanced());
        let s = layout.duplication();
        let d = if s.n[0] == 4 { 0 } else { 1 };
        assert_eq!(s.nu_user[d], 4.0);
        assert_eq!(s.nu_item[d], 4.0);
        assert_eq!(s.pairs, 1);
    }

    #[test]
    fn layout_is_balanced_and_user_level() {
        let layout = gen_layout(&small_cfg(3)).unwrap();
        assert!(layout.is_balanced());
        let n = layout.n_per_condition();
        assert_eq!(n[0], n[1]);
        assert!(n[0] as usize * 2 >= 398);
        // from_rows re-checks that no user spans both conditions
        assert!(Layout::from_rows(layout.rows().to_vec(), 50, 20).is_ok());
        let s = layout.duplication();
        assert!(s.users <= 50 && s.items <= 20);
    }

    #[test]
    fn segment_assignment_balances() {
        let cfg = LayoutConfig {
            assignment: Assignment::Segment { salt: 11 },
            ..small_cfg(4)
        };
        let layout = gen_layout(&cfg).unwrap();
        assert!(layout.is_balanced());
    }

    #[test]
    fn layout_errors() {
        let mut cfg = small_cfg(0);
        cfg.n_users_pool = 0;
        assert!(matches!(gen_layout(&cfg), Err(Error::DegenerateLayout(_))));
        cfg = small_cfg(0);
        cfg.n_obs = 1;
        assert!(gen_layout(&cfg).is_err());
        let rows = vec![
            LayoutRow {
                user: 0,
                item: 0,
                condition: 0,
            },
            LayoutRow {
                user: 0,
                item: 1,
                condition: 1,
            },
        ];
        assert!(Layout::from_rows(rows, 1, 2).is_err());
    }

    #[test]
    fn seed_determinism() {
        let a = gen_layout(&small_cfg(9)).unwrap();
        let b = gen_layout(&small_cfg(9)).unwrap();
        assert_eq!(a, b);
        let re = RandomEffectsConfig::linear(0.5, 1.0, 0.7, 0.3).with_rho_beta(0.4);
        assert_eq!(gen_linear(&a, &re, 5).unwrap(), gen_linear(&b, &re, 5).unwrap());
        assert_ne!(gen_linear(&a, &re, 5).unwrap(), gen_linear(&a, &re, 6).unwrap());
    }

    #[test]
    fn zero_variance_gives_constant_outcomes() {
        let layout = gen_layout(&small_cfg(1)).unwrap();
        let rows = gen_linear(&layout, &RandomEffectsConfig::linear(1.5, 0.0, 0.0, 0.0), 0).unwrap();
        assert!(rows.iter().all(|o| o.outcome == 1.5));
    }

    #[test]
    fn perfect_correlation_shares_item_effects() {
        let layout = gen_layout(&small_cfg(2)).unwrap();
        let mut s = OutcomeSampler::new(&layout, RandomEffectsConfig::linear(0.0, 1.0, 2.0, 1.0)).unwrap();
        s.draw(17);
        assert!(s.item_effects().iter().all(|b| b[0] == b[1]));
    }

    #[test]
    fn tiny_mean_probit_is_all_zero() {
        let layout = gen_layout(&small_cfg(2)).unwrap();
        let mut cfg = RandomEffectsConfig::probit(0.1, 0.1, 1.0);
        cfg.mu = -10.0;
        cfg.rescale_to_unit_total = false;
        cfg.sigma_eps = 0.1;
        let rows = gen_probit(&layout, &cfg, 3).unwrap();
        assert!(rows.iter().all(|o| o.outcome == 0.0));
    }

    #[test]
    fn link_mismatch_and_bad_params() {
        let layout = gen_layout(&small_cfg(2)).unwrap();
        assert!(gen_linear(&layout, &RandomEffectsConfig::probit(0.3, 0.5, 0.75), 0).is_err());
        assert!(gen_probit(&layout, &RandomEffectsConfig::linear(0.0, 1.0, 1.0, 1.0), 0).is_err());
        let bad = RandomEffectsConfig::linear(0.0, 1.0, 1.0, 1.0).with_rho_beta(1.5);
        assert!(gen_linear(&layout, &bad, 0).is_err());
        let neg = RandomEffectsConfig::linear(0.0, -1.0, 1.0, 1.0);
        assert!(neg.validate().is_err());
    }

    #[test]
    fn rescaling_sums_to_one() {
        for sb in [0.1, 0.3, 0.5, 1.0] {
            let (a, b, e) = RandomEffectsConfig::probit(0.3, sb, 0.5).effective_sds();
            assert!((a * a + b * b + e * e - 1.0).abs() < 1e-12);
            assert!((b / a - sb / 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn correlated_pair_edges() {
        let mut rng = rng_for(1, 0);
        for _ in 0..100 {
            let (x0, x1) = draw_correlated_pair(0.8, 1.0, &mut rng);
            assert_eq!(x0, x1);
        }
        let (x0, x1) = correlate(2.0, -1.0, 0.5, 3.0);
        assert_eq!((x0, x1), (1.0, -1.0));
    }

    #[test]
    fn calibration_without_user_target() {
        let base = LayoutConfig {
            n_users_pool: 300,
            n_items_pool: 40,
            n_obs: 3000,
            ..LayoutConfig::default()
        };
        let res = calibrate_layout(
            &base,
            CalibrationTarget {
                nu_user: 20.0,
                nu_item: 200.0,
                users: None,
            },
        )
        .unwrap();
        assert!((res.nu_user / 20.0 - 1.0).abs() < 0.2, "{res:?}");
        assert!((res.nu_item / 200.0 - 1.0).abs() < 0.2, "{res:?}");
        assert_eq!(res.config.n_obs, 3000);
    }
}
