//! Federated epidemic surveillance.
//!
//! Each data custodian runs an exact conditional test for a surge in its own
//! Poisson count series and releases only the resulting p-value. An
//! aggregator combines those p-values with meta-analytic combiners into a
//! region-level alarm. The crate also carries the semi-synthetic data
//! generator and the alarm evaluation used to compare federated alarms
//! against centralized ground truth.

pub mod combine;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod federation;
pub mod numerics;
pub mod rng;
pub mod semisynth;
pub mod surge_test;

pub use combine::{CombinedResult, EvidenceSet, Method};
pub use error::{Error, Result};
pub use evaluation::{AlarmSeries, MatchWindow, PrCurve, PrPoint};
pub use federation::{CoarseReport, FederationConfig, PValueReport, ShareSource, SiteNode};
pub use numerics::Probability;
pub use semisynth::{Cadence, CountSeries, PrevalenceSeries, ShareVector};
pub use surge_test::{PowerScenario, SurgeHypothesis, SurgeWindow};
