pub mod combine;
pub mod evaluate;
pub mod federation;
pub mod power;
pub mod semisynth;
pub mod test;

use fedsurv_core::SurgeHypothesis;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Hypothesis fields as they appear in configs, every field optional so
/// flags and defaults can fill the gaps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisOptions {
    pub theta: Option<f64>,
    pub baseline_len: Option<usize>,
    pub alpha: Option<f64>,
}

impl HypothesisOptions {
    pub fn overlay(
        self,
        theta: Option<f64>,
        baseline_len: Option<usize>,
        alpha: Option<f64>,
    ) -> Self {
        Self {
            theta: theta.or(self.theta),
            baseline_len: baseline_len.or(self.baseline_len),
            alpha: alpha.or(self.alpha),
        }
    }

    pub fn build(self) -> Result<SurgeHypothesis> {
        Ok(SurgeHypothesis::new(
            self.theta.unwrap_or(0.3),
            self.baseline_len.unwrap_or(4),
            self.alpha.unwrap_or(0.05),
        )?)
    }
}

/// Comma-separated floats on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl std::str::FromStr for FloatList {
    type Err = String;

    fn from_str(raw: &str) -> std::result::Result<Self, String> {
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("'{s}' is not a number"))
            })
            .collect::<std::result::Result<_, _>>()
            .map(FloatList)
    }
}
