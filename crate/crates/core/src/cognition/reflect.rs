//! Strategy weights, adjusted by outcome. Each reflection moves the weight of
//! the strategy used toward 1 on success and toward 0 on failure with an
//! exponential moving average. Weights live in the namespace's facts.

use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::error::{CoreError, Result};
use crate::knowledge::Knowledge;

pub const HEURISTIC_KEY: &str = "strategy.heuristic";
pub const DEDUCTIVE_KEY: &str = "strategy.deductive";
pub const INITIAL_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectOutcome {
    pub task_id: String,
    pub strategy: String,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeights {
    pub heuristic: f64,
    pub deductive: f64,
}

impl Default for StrategyWeights {
    fn default() -> Self {
        Self {
            heuristic: INITIAL_WEIGHT,
            deductive: INITIAL_WEIGHT,
        }
    }
}

/// One EMA step.
pub fn ema(weight: f64, alpha: f64, success: bool) -> f64 {
    let target = if success { 1.0 } else { 0.0 };
    (1.0 - alpha) * weight + alpha * target
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    match s {
        "heuristic" => Ok(Strategy::Heuristic),
        "deductive" => Ok(Strategy::Deductive),
        other => Err(CoreError::UnknownStrategy(other.to_owned())),
    }
}

impl Knowledge {
    pub fn strategy_weights(&self) -> Result<StrategyWeights> {
        let read = |key: &str| -> Result<f64> {
            Ok(self
                .get_fact(key)?
                .and_then(|v| String::from_utf8(v).ok())
                .and_then(|s| s.parse().ok())
                .unwrap_or(INITIAL_WEIGHT))
        };
        Ok(StrategyWeights {
            heuristic: read(HEURISTIC_KEY)?,
            deductive: read(DEDUCTIVE_KEY)?,
        })
    }

    pub fn reflect(&self, outcome: &ReflectOutcome) -> Result<StrategyWeights> {
        let strategy = parse_strategy(&outcome.strategy)?;
        let alpha = self.settings().cognition.ema_alpha;
        let mut w = self.strategy_weights()?;
        let (slot, key) = match strategy {
            Strategy::Heuristic => (&mut w.heuristic, HEURISTIC_KEY),
            _ => (&mut w.deductive, DEDUCTIVE_KEY),
        };
        *slot = ema(*slot, alpha, outcome.success);
        self.put_fact(key, slot.to_string().as_bytes())?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_moves_toward_target() {
        assert!((ema(0.5, 0.2, true) - 0.6).abs() < 1e-12);
        assert!((ema(0.5, 0.2, false) - 0.4).abs() < 1e-12);
        let mut w = 0.5;
        for _ in 0..100 {
            w = ema(w, 0.2, true);
        }
        assert!(w > 0.999 && w <= 1.0);
    }

    #[test]
    fn unknown_strategy_rejected() {
        assert!(matches!(parse_strategy("intuition"), Err(CoreError::UnknownStrategy(_))));
        assert!(matches!(parse_strategy("none"), Err(CoreError::UnknownStrategy(_))));
    }
}
