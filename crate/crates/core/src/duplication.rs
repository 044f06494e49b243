//! Duplication coefficients of a user–item dataset.
//!
//! With `n_i^(d)` the observations of user `i` in condition `d` and `N_d`
//! the condition size:
//!
//! - `ν_user^(d) = Σ_i (n_i^(d))² / N_d`, and likewise `ν_item^(d)` over items;
//! - `ω = Σ_j n_j^(0) n_j^(1) / N` measures items shared between conditions;
//! - `κ = Σ_j (n_j^(1) − n_j^(0))² / N` measures item imbalance.
//!
//! `ω` and `κ` assume `N_0 = N_1 = N`. Otherwise `N = (N_0 + N_1)/2` is used
//! and the stats are flagged approximate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::error::Result;
use crate::observation::Observation;

/// Per-unit exposure counts for each condition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExposureCounts {
    pub users: Vec<[u64; 2]>,
    pub items: Vec<[u64; 2]>,
    pub pairs: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DuplicationStats {
    /// Observations per condition.
    pub n: [u64; 2],
    pub users: u64,
    pub items: u64,
    pub pairs: u64,
    pub nu_user: [f64; 2],
    pub nu_item: [f64; 2],
    /// `ν` with both conditions pooled into one dataset.
    pub nu_user_pooled: f64,
    pub nu_item_pooled: f64,
    pub omega_item: f64,
    pub kappa_item: f64,
    /// Set when `N_0 ≠ N_1` and `ω`, `κ` use the mean condition size.
    pub approximate: bool,
}

impl DuplicationStats {
    /// The `N` used for `ω` and `κ`.
    pub fn n_common(&self) -> f64 {
        (self.n[0] + self.n[1]) as f64 / 2.0
    }

    /// Per-condition ν averaged over the two conditions.
    pub fn mean_nu_user(&self) -> f64 {
        0.5 * (self.nu_user[0] + self.nu_user[1])
    }

    pub fn mean_nu_item(&self) -> f64 {
        0.5 * (self.nu_item[0] + self.nu_item[1])
    }
}

fn ratio(num: u128, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn sum_squares(counts: &[[u64; 2]]) -> ([u128; 2], u128) {
    let mut per = [0u128; 2];
    let mut pooled = 0u128;
    for c in counts {
        per[0] += u128::from(c[0]) * u128::from(c[0]);
        per[1] += u128::from(c[1]) * u128::from(c[1]);
        let t = u128::from(c[0] + c[1]);
        pooled += t * t;
    }
    (per, pooled)
}

impl ExposureCounts {
    /// Observations per condition, read off the user counts.
    pub fn totals(&self) -> [u64; 2] {
        self.users.iter().fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]])
    }

    pub fn stats(&self) -> DuplicationStats {
        let n = self.totals();
        let n_total = n[0] + n[1];
        let (user_sq, user_pooled) = sum_squares(&self.users);
        let (item_sq, item_pooled) = sum_squares(&self.items);
        let mut cross = 0u128;
        let mut diff_sq = 0u128;
        for c in &self.items {
            cross += u128::from(c[0]) * u128::from(c[1]);
            let d = u128::from(c[0].abs_diff(c[1]));
            diff_sq += d * d;
        }
        let n_common = n_total as f64 / 2.0;
        let (omega_item, kappa_item) = if n_total == 0 {
            (0.0, 0.0)
        } else {
            (cross as f64 / n_common, diff_sq as f64 / n_common)
        };
        let nonzero = |v: &[[u64; 2]]| v.iter().filter(|c| c[0] + c[1] > 0).count() as u64;
        DuplicationStats {
            n,
            users: nonzero(&self.users),
            items: nonzero(&self.items),
            pairs: nonzero(&self.pairs),
            nu_user: [ratio(user_sq[0], n[0]), ratio(user_sq[1], n[1])],
            nu_item: [ratio(item_sq[0], n[0]), ratio(item_sq[1], n[1])],
            nu_user_pooled: ratio(user_pooled, n_total),
            nu_item_pooled: ratio(item_pooled, n_total),
            omega_item,
            kappa_item,
            approximate: n[0] != n[1],
        }
    }
}

/// Streaming exact counter of unit and pair exposures.
///
/// Memory is proportional to the number of distinct users, items and pairs.
#[derive(Debug, Clone, Default)]
pub struct DuplicationCounter {
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    pair_index: HashMap<(u32, u32), u32>,
    counts: ExposureCounts,
}

fn intern(index: &mut HashMap<String, u32>, counts: &mut Vec<[u64; 2]>, id: &str) -> u32 {
    if let Some(&i) = index.get(id) {
        return i;
    }
    let i = counts.len() as u32;
    index.insert(String::from(id), i);
    counts.push([0, 0]);
    i
}

impl DuplicationCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: &Observation) -> Result<()> {
        obs.validate()?;
        let d = usize::from(obs.condition);
        let u = intern(&mut self.user_index, &mut self.counts.users, &obs.user);
        let i = intern(&mut self.item_index, &mut self.counts.items, &obs.item);
        let next = self.counts.pairs.len() as u32;
        let p = *self.pair_index.entry((u, i)).or_insert(next);
        if p == next {
            self.counts.pairs.push([0, 0]);
        }
        self.counts.users[u as usize][d] += 1;
        self.counts.items[i as usize][d] += 1;
        self.counts.pairs[p as usize][d] += 1;
        Ok(())
    }

    /// Adds the counts of another shard.
    pub fn merge(&mut self, other: &DuplicationCounter) {
        let mut user_map = alloc::vec![0u32; other.counts.users.len()];
        for (id, &j) in &other.user_index {
            let i = intern(&mut self.user_index, &mut self.counts.users, id);
            user_map[j as usize] = i;
            let c = other.counts.users[j as usize];
            self.counts.users[i as usize][0] += c[0];
            self.counts.users[i as usize][1] += c[1];
        }
        let mut item_map = alloc::vec![0u32; other.counts.items.len()];
        for (id, &j) in &other.item_index {
            let i = intern(&mut self.item_index, &mut self.counts.items, id);
            item_map[j as usize] = i;
            let c = other.counts.items[j as usize];
            self.counts.items[i as usize][0] += c[0];
            self.counts.items[i as usize][1] += c[1];
        }
        for (&(u, i), &j) in &other.pair_index {
            let key = (user_map[u as usize], item_map[i as usize]);
            let next = self.counts.pairs.len() as u32;
            let p = *self.pair_index.entry(key).or_insert(next);
            if p == next {
                self.counts.pairs.push([0, 0]);
            }
            let c = other.counts.pairs[j as usize];
            self.counts.pairs[p as usize][0] += c[0];
            self.counts.pairs[p as usize][1] += c[1];
        }
    }

    pub fn counts(&self) -> &ExposureCounts {
        &self.counts
    }

    pub fn into_counts(self) -> ExposureCounts {
        self.counts
    }

    pub fn stats(&self) -> DuplicationStats {
        self.counts.stats()
    }
}

/// Duplication stats of a whole stream.
pub fn duplication_stats<'a>(rows: impl IntoIterator<Item = &'a Observation>) -> Result<DuplicationStats> {
    let mut counter = DuplicationCounter::new();
    for obs in rows {
        counter.push(obs)?;
    }
    Ok(counter.stats())
}

/// Stats over the cumulative prefix ending at `day`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DailyDuplication<D> {
    pub day: D,
    pub stats: DuplicationStats,
    /// Pooled `ν_user` divided by its value after the first day.
    pub relative_nu_user: f64,
    pub relative_nu_item: f64,
}

/// Duplication of cumulative prefixes of a dated stream, one entry per
/// distinct day in increasing order. Rows need not arrive sorted.
pub fn duplication_over_time<D: Ord + Clone>(
    rows: impl IntoIterator<Item = (D, Observation)>,
) -> Result<Vec<DailyDuplication<D>>> {
    let mut by_day: BTreeMap<D, Vec<Observation>> = BTreeMap::new();
    for (day, obs) in rows {
        obs.validate()?;
        by_day.entry(day).or_default().push(obs);
    }
    let mut counter = DuplicationCounter::new();
    let mut out = Vec::with_capacity(by_day.len());
    let mut first: Option<(f64, f64)> = None;
    for (day, day_rows) in by_day {
        for obs in &day_rows {
            counter.push(obs)?;
        }
        let stats = counter.stats();
        let (u0, i0) = *first.get_or_insert((stats.nu_user_pooled, stats.nu_item_pooled));
        out.push(DailyDuplication {
            day,
            stats,
            relative_nu_user: stats.nu_user_pooled / u0,
            relative_nu_item: stats.nu_item_pooled / i0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn o(u: &str, i: &str, d: u8) -> Observation {
        Observation::new(u, i, d, 0.0)
    }

    #[test]
    fn all_distinct_units() {
        let rows: Vec<_> = (0..6)
            .map(|k| o(&format!("u{k}"), &format!("i{k}"), (k % 2) as u8))
            .collect();
        let s = duplication_stats(&rows).unwrap();
        assert_eq!(s.nu_user, [1.0, 1.0]);
        assert_eq!(s.nu_item, [1.0, 1.0]);
        assert_eq!(s.omega_item, 0.0);
        assert_eq!((s.users, s.items, s.pairs), (6, 6, 6));
        assert!(!s.approximate);
    }

    #[test]
    fn one_item_four_rows() {
        let rows: Vec<_> = (0..4).map(|k| o(&format!("u{k}"), "ad", 0)).collect();
        let s = duplication_stats(&rows).unwrap();
        assert_eq!(s.nu_item[0], 4.0);
        assert_eq!(s.nu_user[0], 1.0);
        assert_eq!(s.nu_item[1], 0.0);
        assert!(s.approximate);
    }

    #[test]
    fn disjoint_items_kappa_is_sum_of_nus() {
        let rows = vec![
            o("a", "x", 0),
            o("b", "x", 0),
            o("c", "y", 0),
            o("d", "z", 1),
            o("e", "z", 1),
            o("e", "z", 1),
        ];
        let s = duplication_stats(&rows).unwrap();
        assert_eq!(s.n, [3, 3]);
        assert_eq!(s.omega_item, 0.0);
        assert!((s.kappa_item - (s.nu_item[0] + s.nu_item[1])).abs() < 1e-12);
        assert_eq!(s.nu_item, [5.0 / 3.0, 3.0]);
        assert_eq!(s.pairs, 5);
    }

    #[test]
    fn balanced_items_have_zero_kappa() {
        let rows = vec![o("a", "x", 0), o("b", "x", 1), o("c", "y", 0), o("d", "y", 1)];
        let s = duplication_stats(&rows).unwrap();
        assert_eq!(s.kappa_item, 0.0);
        assert_eq!(s.omega_item, 1.0);
    }

    #[test]
    fn empty_stream() {
        let s = duplication_stats(&[]).unwrap();
        assert_eq!(s.n, [0, 0]);
        assert_eq!(s.nu_user, [0.0, 0.0]);
        assert_eq!(s.kappa_item, 0.0);
    }

    #[test]
    fn repeated_day_doubles_nu() {
        let day1 = [o("a", "x", 0), o("a", "y", 0), o("b", "x", 0)];
        let rows: Vec<_> = day1
            .iter()
            .cloned()
            .map(|r| (1u32, r))
            .chain(day1.iter().cloned().map(|r| (2u32, r)))
            .collect();
        let days = duplication_over_time(rows).unwrap();
        assert_eq!(days.len(), 2);
        // day 1: users (2,1) → 5/3; after day 2: (4,2) → 20/6
        assert!((days[0].stats.nu_user_pooled - 5.0 / 3.0).abs() < 1e-12);
        assert!((days[1].relative_nu_user - 2.0).abs() < 1e-12);
        assert!((days[1].relative_nu_item - 2.0).abs() < 1e-12);
        assert_eq!(days[0].relative_nu_user, 1.0);
    }

    #[test]
    fn single_day_matches_whole_stream() {
        let rows = [o("a", "x", 0), o("a", "y", 1), o("b", "x", 1)];
        let days = duplication_over_time(rows.iter().cloned().map(|r| ("2013-05-01", r))).unwrap();
        assert_eq!(days.len(), 1);
        assert_eq!(days[0].stats, duplication_stats(&rows).unwrap());
    }

    #[test]
    fn unsorted_days_are_ordered() {
        let rows = vec![(3u8, o("a", "x", 0)), (1, o("b", "x", 0)), (3, o("b", "x", 0))];
        let days = duplication_over_time(rows).unwrap();
        assert_eq!(days.iter().map(|d| d.day).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(days[1].stats.n, [3, 0]);
    }

    #[test]
    fn sharded_merge_equals_single_pass() {
        let rows: Vec<_> = (0..50)
            .map(|k| o(&format!("{}", k % 7), &format!("{}", (k * 3) % 5), (k % 3 == 0) as u8))
            .collect();
        let whole = duplication_stats(&rows).unwrap();
        let mut a = DuplicationCounter::new();
        let mut b = DuplicationCounter::new();
        for (k, r) in rows.iter().enumerate() {
            if k % 2 == 0 { a.push(r) } else { b.push(r) }.unwrap();
        }
        a.merge(&b);
        assert_eq!(a.stats(), whole);
    }
}
