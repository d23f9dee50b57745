//! The acceptance criteria, each a function that either returns a short
//! summary of what it checked or the first discrepancy it found. Every
//! check compares the engine against an oracle written separately from the
//! code under test.
//!
//! `tests/acceptance.rs` runs them all and prints one PASS/FAIL line each.

pub mod capability;
pub mod cognition;
pub mod consolidation;
pub mod isolation;
pub mod scenarios;
pub mod storage;
pub mod vectors;

pub type Outcome = Result<String, String>;

/// Returns `Err` with a formatted message when the condition is false.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

pub const CRITERIA: [Criterion; 11] = [
    Criterion { id: 1, name: "storage oracle equivalence", run: storage::oracle_equivalence },
    Criterion { id: 2, name: "crash recovery", run: storage::crash_recovery },
    Criterion { id: 3, name: "exact and approximate kNN", run: vectors::knn },
    Criterion { id: 4, name: "reasoning fixpoint", run: cognition::reasoning_fixpoint },
    Criterion { id: 5, name: "association path sums", run: cognition::association },
    Criterion { id: 6, name: "stability-plasticity", run: cognition::stability_plasticity },
    Criterion { id: 7, name: "consolidation oracle", run: consolidation::oracle },
    Criterion { id: 8, name: "replica convergence", run: storage::replica_convergence },
    Criterion { id: 9, name: "capability matrix", run: capability::matrix },
    Criterion { id: 10, name: "scenario determinism", run: scenarios::determinism },
    Criterion { id: 11, name: "permission isolation", run: isolation::adversarial },
];

/// Errors from the code under test become criterion failures.
pub(crate) fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}
