use alloc::string::String;

use crate::error::{Error, Result};

/// One exposure of a user to an item under a condition, with its outcome.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    pub user: String,
    pub item: String,
    /// 0 (control) or 1 (treatment).
    pub condition: u8,
    pub outcome: f64,
}

impl Observation {
    pub fn new(user: impl Into<String>, item: impl Into<String>, condition: u8, outcome: f64) -> Self {
        Observation {
            user: user.into(),
            item: item.into(),
            condition,
            outcome,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.user.is_empty() || self.item.is_empty() {
            return Err(Error::EmptyId);
        }
        if self.condition > 1 {
            return Err(Error::InvalidCondition(self.condition));
        }
        if !self.outcome.is_finite() {
            return Err(Error::NonFiniteOutcome(self.outcome));
        }
        Ok(())
    }
}
