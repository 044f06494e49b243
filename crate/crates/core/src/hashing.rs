//! Salted hashing for segment assignment and per-unit bootstrap weights.
//!
//! Segment assignment follows the usual experimentation-platform recipe:
//! the unit id is concatenated with the decimal salt (`id ‖ salt`, no
//! separator), hashed with MD5, and the first 7 lowercase hex characters of
//! the digest are read as a base-16 integer and reduced modulo the segment
//! count.
//!
//! Bootstrap weights are counter-based: a unit's 64-bit key is derived once
//! from MD5 of `kind ‖ 0x1f ‖ id ‖ 0x1f ‖ salt`, and replicate `r` draws its
//! uniform from SplitMix64 at counter `r + 1`. Any weight can therefore be
//! recomputed in O(1) from the unit id, whatever order rows arrive in.

use md5::{Digest, Md5};

use crate::bootstrap::BootstrapMode;
use crate::error::{Error, Result};

/// Default number of hash segments.
pub const DEFAULT_SEGMENTS: u32 = 100;

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const EXP_NEG_ONE: f64 = 0.367_879_441_171_442_33;
const POISSON_MAX: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum UnitKind {
    User,
    Item,
}

impl UnitKind {
    fn tag(self) -> &'static [u8] {
        match self {
            UnitKind::User => b"user",
            UnitKind::Item => b"item",
        }
    }
}

/// Distribution of the per-unit bootstrap weights. Both have mean 1 and
/// variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum WeightDistribution {
    /// Poisson(1), drawn by CDF inversion.
    #[default]
    Poisson,
    /// Two-point uniform on {0, 2}.
    Uniform2,
}

impl WeightDistribution {
    /// Maps a uniform on `[0, 1)` to a weight.
    #[inline]
    pub fn from_uniform(self, u: f64) -> f64 {
        match self {
            WeightDistribution::Poisson => poisson1_inverse(u),
            WeightDistribution::Uniform2 => {
                if u < 0.5 {
                    0.0
                } else {
                    2.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightDistribution::Poisson => "poisson",
            WeightDistribution::Uniform2 => "uniform2",
        }
    }
}

impl core::str::FromStr for WeightDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(WeightDistribution::Poisson),
            "uniform2" => Ok(WeightDistribution::Uniform2),
            other => Err(Error::param(
                "dist",
                alloc::format!("unknown weight distribution `{other}` (expected poisson or uniform2)"),
            )),
        }
    }
}

#[inline]
fn poisson1_inverse(u: f64) -> f64 {
    let mut k = 0u32;
    let mut p = EXP_NEG_ONE;
    let mut cdf = p;
    while u >= cdf && k < POISSON_MAX {
        k += 1;
        p /= f64::from(k);
        cdf += p;
    }
    f64::from(k)
}

#[inline]
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(SPLITMIX_GAMMA);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 53-bit uniform on `[0, 1)`.
#[inline]
pub(crate) fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Formats `value` as decimal ASCII without allocating.
struct Decimal {
    buf: [u8; 20],
    start: usize,
}

impl Decimal {
    fn new(mut value: u64) -> Self {
        let mut buf = [0u8; 20];
        let mut start = buf.len();
        loop {
            start -= 1;
            buf[start] = b'0' + (value % 10) as u8;
            value /= 10;
            if value == 0 {
                break;
            }
        }
        Decimal { buf, start }
    }

    fn as_bytes(&self) -> &[u8] {
        &self.buf[self.start..]
    }
}

/// Segment of a unit: MD5 of `id ‖ salt`, first 7 hex digits, modulo
/// `segments`.
pub fn segment_of(id: &str, salt: u64, segments: u32) -> Result<u32> {
    if id.is_empty() {
        return Err(Error::EmptyId);
    }
    if segments < 2 {
        return Err(Error::InvalidSegments(segments));
    }
    let digest = Md5::new()
        .chain_update(id.as_bytes())
        .chain_update(Decimal::new(salt).as_bytes())
        .finalize();
    // Seven hex characters are the top 28 bits of the digest.
    let prefix = (u32::from(digest[0]) << 20)
        | (u32::from(digest[1]) << 12)
        | (u32::from(digest[2]) << 4)
        | (u32::from(digest[3]) >> 4);
    Ok(prefix % segments)
}

/// Seed of one unit's weight stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UnitKey(pub u64);

impl UnitKey {
    pub fn new(kind: UnitKind, id: &str, salt: u64) -> Result<Self> {
        if id.is_empty() {
            return Err(Error::EmptyId);
        }
        let digest = Md5::new()
            .chain_update(kind.tag())
            .chain_update([0x1f])
            .chain_update(id.as_bytes())
            .chain_update([0x1f])
            .chain_update(Decimal::new(salt).as_bytes())
            .finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Ok(UnitKey(u64::from_le_bytes(head)))
    }

    /// Key of a single observation for the iid bootstrap, derived from its
    /// user and item keys and its ordinal in the input.
    pub fn observation(user: UnitKey, item: UnitKey, ordinal: u64) -> Self {
        let mixed = splitmix64(user.0 ^ splitmix64(item.0.rotate_left(17) ^ splitmix64(ordinal)));
        UnitKey(mixed)
    }

    /// Uniform draw for replicate `r`.
    #[inline]
    pub fn uniform(self, r: usize) -> f64 {
        let counter = (r as u64).wrapping_add(1).wrapping_mul(SPLITMIX_GAMMA);
        unit_interval(splitmix64(self.0.wrapping_add(counter)))
    }

    #[inline]
    pub fn weight(self, r: usize, dist: WeightDistribution) -> f64 {
        dist.from_uniform(self.uniform(r))
    }
}

/// The `r`-th bootstrap weight of a unit.
pub fn weight_stream(kind: UnitKind, id: &str, salt: u64, r: usize, dist: WeightDistribution) -> Result<f64> {
    Ok(UnitKey::new(kind, id, salt)?.weight(r, dist))
}

/// Per-replicate weights of the units an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitWeights {
    pub user: f64,
    pub item: f64,
    /// Independent draw for this observation alone.
    pub observation: f64,
}

/// Combines unit weights into the weight of one observation.
#[inline]
pub fn observation_weight(weights: UnitWeights, mode: BootstrapMode) -> f64 {
    match mode {
        BootstrapMode::Iid => weights.observation,
        BootstrapMode::User => weights.user,
        BootstrapMode::Item => weights.item,
        BootstrapMode::Multiway => weights.user * weights.item,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    #[test]
    fn segment_is_pure_and_in_range() {
        for salt in 0..5 {
            for i in 0..200 {
                let id = format!("{i}");
                let a = segment_of(&id, salt, 100).unwrap();
                assert_eq!(a, segment_of(&id, salt, 100).unwrap());
                assert!(a < 100);
            }
        }
    }

    #[test]
    fn segment_golden_values() {
        // md5("123450") = 149787a6..., 0x149787a = 21592186
        assert_eq!(segment_of("12345", 0, 100).unwrap(), 86);
        assert_eq!(segment_of("12345", 0, 1 << 28).unwrap(), 21_592_186);
        // md5("10") = d3d94468..., 0xd3d9446 = 222139462
        assert_eq!(segment_of("1", 0, 1 << 28).unwrap(), 222_139_462);
    }

    #[test]
    fn segment_errors() {
        assert_eq!(segment_of("", 0, 100), Err(Error::EmptyId));
        assert_eq!(segment_of("1", 0, 1), Err(Error::InvalidSegments(1)));
        assert_eq!(UnitKey::new(UnitKind::User, "", 0), Err(Error::EmptyId));
    }

    #[test]
    fn decimal_formatting() {
        assert_eq!(Decimal::new(0).as_bytes(), b"0");
        assert_eq!(Decimal::new(907).as_bytes(), b"907");
        assert_eq!(Decimal::new(u64::MAX).as_bytes(), b"18446744073709551615");
    }

    #[test]
    fn segments_are_balanced() {
        let n = 100_000u32;
        let mut counts = [0u32; 100];
        for i in 0..n {
            counts[segment_of(&format!("{}", 1_000_000 + i), 3, 100).unwrap() as usize] += 1;
        }
        let p = 0.01;
        let se = libm::sqrt(p * (1.0 - p) / f64::from(n));
        for c in counts {
            let frac = f64::from(c) / f64::from(n);
            assert!((frac - p).abs() <= 4.0 * se, "segment fraction {frac}");
        }
    }

    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: alloc::vec::Vec<f64> = xs.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn weight_moments() {
        for dist in [WeightDistribution::Poisson, WeightDistribution::Uniform2] {
            let key = UnitKey::new(UnitKind::User, "42", 7).unwrap();
            let (mean, var) = moments((0..10_000).map(|r| key.weight(r, dist)));
            assert!((mean - 1.0).abs() < 0.05, "{dist:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.1, "{dist:?} var {var}");
        }
    }

    #[test]
    fn poisson_inversion_matches_pmf() {
        assert_eq!(poisson1_inverse(0.0), 0.0);
        assert_eq!(poisson1_inverse(0.3678), 0.0);
        assert_eq!(poisson1_inverse(0.3679), 1.0);
        assert_eq!(poisson1_inverse(0.7357), 1.0);
        assert_eq!(poisson1_inverse(0.7359), 2.0);
        assert!(poisson1_inverse(1.0 - f64::EPSILON) < 25.0);
    }

    #[test]
    fn user_and_item_streams_uncorrelated() {
        let u = UnitKey::new(UnitKind::User, "17", 0).unwrap();
        let i = UnitKey::new(UnitKind::Item, "17", 0).unwrap();
        let n = 10_000;
        let a: alloc::vec::Vec<f64> = (0..n).map(|r| u.weight(r, WeightDistribution::Poisson)).collect();
        let b: alloc::vec::Vec<f64> = (0..n).map(|r| i.weight(r, WeightDistribution::Poisson)).collect();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        let corr = cov / libm::sqrt(va * vb);
        assert!(corr.abs() < 0.05, "corr {corr}");
    }

    #[test]
    fn same_user_same_weights() {
        let w1 = weight_stream(UnitKind::User, "9", 1, 12, WeightDistribution::Poisson).unwrap();
        let w2 = weight_stream(UnitKind::User, "9", 1, 12, WeightDistribution::Poisson).unwrap();
        assert_eq!(w1, w2);
        // kind and salt both separate the streams
        let a = UnitKey::new(UnitKind::User, "9", 1).unwrap();
        assert_ne!(a, UnitKey::new(UnitKind::Item, "9", 1).unwrap());
        assert_ne!(a, UnitKey::new(UnitKind::User, "9", 2).unwrap());
    }

    #[test]
    fn observation_weight_modes() {
        let w = UnitWeights {
            user: 2.0,
            item: 3.0,
            observation: 5.0,
        };
        assert_eq!(observation_weight(w, BootstrapMode::Multiway), 6.0);
        assert_eq!(observation_weight(w, BootstrapMode::User), 2.0);
        assert_eq!(observation_weight(w, BootstrapMode::Item), 3.0);
        assert_eq!(observation_weight(w, BootstrapMode::Iid), 5.0);
        let zero = UnitWeights { user: 0.0, ..w };
        assert_eq!(observation_weight(zero, BootstrapMode::Multiway), 0.0);
        let w7 = UnitWeights { item: 7.0, ..w };
        assert_eq!(observation_weight(w7, BootstrapMode::User), 2.0);
    }

    #[test]
    fn iid_keys_differ_by_ordinal() {
        let u = UnitKey::new(UnitKind::User, "1", 0).unwrap();
        let i = UnitKey::new(UnitKind::Item, "1", 0).unwrap();
        assert_ne!(UnitKey::observation(u, i, 0), UnitKey::observation(u, i, 1));
        assert_eq!(UnitKey::observation(u, i, 3), UnitKey::observation(u, i, 3));
    }
}
