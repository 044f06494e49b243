use std::collections::HashMap;

use depboot_core::duplication::duplication_stats;
use depboot_core::generators::{Layout, LayoutRow};
use depboot_core::oracle::{var_delta_coeffs, var_delta_counts, var_delta_sharp_null, VarianceComponents};
use depboot_core::{
    weight_stream, BootstrapConfig, BootstrapMode, Observation, ReplicateAccumulator, UnitKey, UnitKind,
    WeightDistribution,
};
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn observations(rows: &[(u8, u8, u8, i8)]) -> Vec<Observation> {
    rows.iter()
        .map(|&(u, i, d, y)| Observation::new(format!("u{u}"), format!("i{i}"), d % 2, f64::from(y) / 4.0))
        .collect()
}

fn acc(mode: BootstrapMode, salt: u64) -> ReplicateAccumulator {
    ReplicateAccumulator::new(BootstrapConfig::new(mode).with_replicates(16).with_salt(salt)).unwrap()
}

fn accumulate(mode: BootstrapMode, salt: u64, rows: &[Observation], first_ordinal: u64) -> ReplicateAccumulator {
    let mut a = acc(mode, salt);
    for (k, o) in rows.iter().enumerate() {
        a.push_at(o, first_ordinal + k as u64).unwrap();
    }
    a
}

fn assert_sums_close(a: &ReplicateAccumulator, b: &ReplicateAccumulator, tol: f64) {
    assert_eq!(a.rows(), b.rows());
    for d in 0..2u8 {
        assert_eq!(a.count(d), b.count(d));
        assert!(rel_close(a.sum_outcomes(d), b.sum_outcomes(d), tol));
        for (x, y) in a.sum_weights(d).iter().zip(b.sum_weights(d)) {
            assert!(rel_close(*x, *y, tol), "{x} vs {y}");
        }
        for (x, y) in a.sum_weighted_outcomes(d).iter().zip(b.sum_weighted_outcomes(d)) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }
}

/// Replicate sums recomputed from scratch, one unit weight at a time.
fn batch_sums(mode: BootstrapMode, salt: u64, replicates: usize, rows: &[Observation]) -> [[Vec<f64>; 2]; 2] {
    let dist = WeightDistribution::Poisson;
    let mut sw = [vec![0.0; replicates], vec![0.0; replicates]];
    let mut swy = [vec![0.0; replicates], vec![0.0; replicates]];
    for (k, o) in rows.iter().enumerate() {
        let d = usize::from(o.condition);
        for r in 0..replicates {
            let user = weight_stream(UnitKind::User, &o.user, salt, r, dist).unwrap();
            let item = weight_stream(UnitKind::Item, &o.item, salt, r, dist).unwrap();
            let w = match mode {
                BootstrapMode::Iid => {
                    let uk = UnitKey::new(UnitKind::User, &o.user, salt).unwrap();
                    let ik = UnitKey::new(UnitKind::Item, &o.item, salt).unwrap();
                    UnitKey::observation(uk, ik, k as u64).weight(r, dist)
                }
                BootstrapMode::User => user,
                BootstrapMode::Item => item,
                BootstrapMode::Multiway => user * item,
            };
            sw[d][r] += w;
            swy[d][r] += w * o.outcome;
        }
    }
    [sw, swy]
}

fn row_strategy() -> impl Strategy<Value = Vec<(u8, u8, u8, i8)>> {
    prop::collection::vec((0u8..12, 0u8..6, 0u8..2, -8i8..8), 0..60)
}

fn mode_strategy() -> impl Strategy<Value = BootstrapMode> {
    prop::sample::select(BootstrapMode::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_is_commutative(rows in row_strategy(), cut in 0usize..60, mode in mode_strategy(), salt in any::<u64>()) {
        let obs = observations(&rows);
        let cut = cut.min(obs.len());
        let a = accumulate(mode, salt, &obs[..cut], 0);
        let b = accumulate(mode, salt, &obs[cut..], cut as u64);
        let ab = a.clone().merged(&b).unwrap();
        let ba = b.merged(&a).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn merge_is_associative(rows in row_strategy(), c1 in 0usize..60, c2 in 0usize..60, mode in mode_strategy()) {
        let obs = observations(&rows);
        let (lo, hi) = (c1.min(c2).min(obs.len()), c1.max(c2).min(obs.len()));
        let a = accumulate(mode, 3, &obs[..lo], 0);
        let b = accumulate(mode, 3, &obs[lo..hi], lo as u64);
        let c = accumulate(mode, 3, &obs[hi..], hi as u64);
        let left = a.clone().merged(&b).unwrap().merged(&c).unwrap();
        let right = a.merged(&b.merged(&c).unwrap()).unwrap();
        assert_sums_close(&left, &right, 1e-12);
    }

    #[test]
    fn split_streams_match_one_stream(rows in row_strategy(), cut in 0usize..60, mode in mode_strategy()) {
        let obs = observations(&rows);
        let cut = cut.min(obs.len());
        let whole = accumulate(mode, 11, &obs, 0);
        let parts = accumulate(mode, 11, &obs[..cut], 0).merged(&accumulate(mode, 11, &obs[cut..], cut as u64)).unwrap();
        assert_sums_close(&whole, &parts, 1e-12);
    }

    #[test]
    fn streaming_matches_batch(rows in row_strategy(), mode in mode_strategy(), salt in any::<u64>()) {
        let obs = observations(&rows);
        let streamed = accumulate(mode, salt, &obs, 0);
        let [sw, swy] = batch_sums(mode, salt, 16, &obs);
        for d in 0..2u8 {
            for r in 0..16 {
                let (a, b) = (streamed.sum_weights(d)[r], sw[usize::from(d)][r]);
                prop_assert!(rel_close(a, b, 1e-10), "sum_w {} vs {}", a, b);
                let (a, b) = (streamed.sum_weighted_outcomes(d)[r], swy[usize::from(d)][r]);
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs())), "sum_wy {} vs {}", a, b);
            }
        }
    }
}

/// Balanced layout with users confined to one condition and no pair
/// repeated within a condition.
fn layout_strategy() -> impl Strategy<Value = Layout> {
    (2u32..40, 1u32..15, prop::collection::vec((0u32..40, 0u32..15), 1..300)).prop_filter_map(
        "needs rows in both conditions",
        |(n_users, n_items, draws)| {
            let mut seen = std::collections::HashSet::new();
            let mut by_cond: [Vec<LayoutRow>; 2] = [Vec::new(), Vec::new()];
            for (u, i) in draws {
                let (u, i) = (u % n_users, i % n_items);
                if seen.insert((u, i)) {
                    let condition = (u % 2) as u8;
                    by_cond[usize::from(condition)].push(LayoutRow {
                        user: u,
                        item: i,
                        condition,
                    });
                }
            }
            let n = by_cond[0].len().min(by_cond[1].len());
            if n == 0 {
                return None;
            }
            let rows: Vec<LayoutRow> = by_cond.into_iter().flat_map(|v| v.into_iter().take(n)).collect();
            Layout::from_rows(rows, n_users as usize, n_items as usize).ok()
        },
    )
}

/// Var(δ̂) as cᵀΣc over every latent effect, built directly from the rows.
fn brute_force_variance(layout: &Layout, sa: f64, sb: f64, se: f64, rho: f64) -> f64 {
    let n = layout.n_per_condition()[0] as f64;
    let mut users: HashMap<u32, f64> = HashMap::new();
    let mut items: HashMap<u32, [f64; 2]> = HashMap::new();
    let mut pairs: HashMap<(u32, u32, u8), f64> = HashMap::new();
    for row in layout.rows() {
        let c = if row.condition == 1 { 1.0 / n } else { -1.0 / n };
        *users.entry(row.user).or_default() += c;
        items.entry(row.item).or_default()[usize::from(row.condition)] += c;
        *pairs.entry((row.user, row.item, row.condition)).or_default() += c;
    }
    let user_part: f64 = users.values().map(|c| c * c * sa * sa).sum();
    let item_part: f64 = items
        .values()
        .map(|c| (c[0] * c[0] + c[1] * c[1]) * sb * sb + 2.0 * c[0] * c[1] * rho * sb * sb)
        .sum();
    let pair_part: f64 = pairs.values().map(|c| c * c * se * se).sum();
    user_part + item_part + pair_part
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn variance_forms_agree(
        layout in layout_strategy(),
        sa in 0.0f64..2.0,
        sb in 0.0f64..2.0,
        se in 0.01f64..2.0,
        rho in -1.0f64..=1.0,
    ) {
        let n = layout.n_per_condition()[0];
        let stats = layout.duplication();
        let vc = VarianceComponents::homogeneous(sa, sb, se, rho);
        let counts = var_delta_counts(&layout.counts(), &vc, n).unwrap();
        let coeffs = var_delta_coeffs(&stats, &vc, n).unwrap();
        let brute = brute_force_variance(&layout, sa, sb, se, rho);
        prop_assert!(rel_close(counts, brute, 1e-9), "counts {} brute {}", counts, brute);
        prop_assert!(rel_close(coeffs, counts, 1e-9), "coeffs {} counts {}", coeffs, counts);

        let sharp = VarianceComponents::sharp_null(sa, sb, se);
        let coeffs_sharp = var_delta_coeffs(&stats, &sharp, n).unwrap();
        let eq_sharp = var_delta_sharp_null(&stats, sa, sb, se, n).unwrap();
        prop_assert!(rel_close(eq_sharp, coeffs_sharp, 1e-9), "sharp {} coeffs {}", eq_sharp, coeffs_sharp);
    }

    #[test]
    fn kappa_identity(layout in layout_strategy()) {
        let s = layout.duplication();
        let lhs = s.kappa_item;
        let rhs = s.nu_item[0] + s.nu_item[1] - 2.0 * s.omega_item;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + s.nu_item[0] + s.nu_item[1]), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn layout_and_row_stats_agree(layout in layout_strategy()) {
        let obs = layout.observations(&vec![0.0; layout.len()]);
        prop_assert_eq!(duplication_stats(&obs).unwrap(), layout.duplication());
    }
}
