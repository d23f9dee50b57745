//! Executable versions of the four user scenarios, the deterministic test
//! embedder they use, and the capability-matrix evaluator.

pub mod capability;
pub mod embed;
pub mod scenarios;

pub use capability::{eval_capabilities, CapabilityReport, Dimension, DimensionResult, Support, FOOTNOTES};
pub use embed::{test_embed, DEFAULT_DIM};
pub use scenarios::{run_scenario, run_scenario_on, Scenario, ScenarioTranscript, Step, SCENARIO_EPOCH};
