//! File formats, reports and command implementations behind the `depboot`
//! binary. The statistics live in [`depboot_core`].

pub mod aatest;
pub mod analyze;
pub mod error;
pub mod input;
pub mod inspect;
pub mod report;
pub mod sim;

pub use error::{AppError, AppResult};
