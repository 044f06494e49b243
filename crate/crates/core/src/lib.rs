//! Streaming bootstrap inference for user–item experiments with dependent
//! observations.
//!
//! Observations that share a user or an item are correlated, so the variance
//! of a difference in means depends on how often units are repeated. This
//! crate provides:
//!
//! - [`hashing`]: salted MD5 segmentation and counter-based per-unit weight
//!   streams, so any replicate weight can be recomputed from a unit id alone;
//! - [`bootstrap`]: single-pass accumulation of `R` reweighted
//!   difference-in-means replicates (iid, one-way, multiway) with mergeable
//!   accumulators and normal-quantile intervals;
//! - [`duplication`]: duplication coefficients (ν, ω, κ) and unit counts;
//! - [`oracle`]: closed-form variance of the difference in means under a
//!   crossed random-effects model;
//! - [`generators`]: synthetic layouts and linear/probit outcomes;
//! - [`evaluation`]: A/A test plans, coverage with Wilson intervals,
//!   imbalance downsampling and simulation sweeps.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod bootstrap;
pub mod duplication;
pub mod error;
pub mod evaluation;
pub mod generators;
pub mod hashing;
pub mod normal;
pub mod observation;
pub mod oracle;

pub use bootstrap::{BootstrapConfig, BootstrapMode, IntervalReport, ReplicateAccumulator};
pub use duplication::{DuplicationCounter, DuplicationStats, ExposureCounts};
pub use error::{Error, ErrorKind, Result};
pub use hashing::{segment_of, weight_stream, UnitKey, UnitKind, WeightDistribution};
pub use observation::Observation;

/// Library version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
