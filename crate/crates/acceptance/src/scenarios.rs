//! Reproducibility of the four scenarios.

use std::sync::Arc;

use colma_core::knowledge::TriplePattern;
use colma_core::scenario::{run_scenario, run_scenario_on, Scenario, SCENARIO_EPOCH};
use colma_core::storage::ManualClock;
use colma_core::{Engine, EngineConfig};

use crate::{ensure, ok, Outcome};

const SEEDS: [u64; 5] = [0, 1, 7, 42, 12345];

/// Each scenario under five seeds, run twice in fresh stores and once inside
/// a shared engine, must give byte-identical transcripts. S4 must replace
/// its belief with the old one still visible before the switch, and S2 must
/// reconstruct its day completely.
pub fn determinism() -> Outcome {
    let mut runs = 0;
    for which in Scenario::ALL {
        for seed in SEEDS {
            let a = ok(run_scenario(which, seed), &format!("{which} seed {seed}"))?;
            let b = ok(run_scenario(which, seed), &format!("{which} seed {seed}"))?;
            let (ja, jb) = (ok(a.to_jsonl(), "jsonl")?, ok(b.to_jsonl(), "jsonl")?);
            ensure!(ja == jb, "{which} seed {seed}: transcripts differ");
            ensure!(a.assertions_passed > 0, "{which} seed {seed}: no assertions ran");

            let dir = ok(tempfile::tempdir(), "tempdir")?;
            let mut cfg = EngineConfig::with_dir(dir.path());
            cfg.store.sync_writes = false;
            let clock = Arc::new(ManualClock::new(SCENARIO_EPOCH));
            let engine = ok(Engine::open_with_clock(cfg, clock.clone()), "open")?;
            let c = ok(run_scenario_on(&engine, &clock, "scenario", which, seed), "run_scenario_on")?;
            ensure!(ok(c.to_jsonl(), "jsonl")? == ja, "{which} seed {seed}: shared-engine transcript differs");
            runs += 3;

            match which {
                Scenario::S2 => {
                    let got = a.observation("completeness").and_then(|v| v.as_f64());
                    ensure!(got == Some(1.0), "S2 seed {seed}: completeness {got:?}");
                }
                Scenario::S4 => {
                    let got = a.observation("decision").and_then(|v| v.as_str());
                    ensure!(got == Some("replaced"), "S4 seed {seed}: decision {got:?}");
                    both_versions_visible(&engine, seed)?;
                }
                _ => {}
            }
        }
    }
    Ok(format!("{runs} runs of S1-S4 over {} seeds byte-identical; S4 replaced, S2 complete", SEEDS.len()))
}

/// Reads the belief history S4 left behind and checks each version at its time.
fn both_versions_visible(engine: &Engine, seed: u64) -> Result<(), String> {
    let kb = ok(engine.namespace("scenario"), "namespace")?;
    let pattern = TriplePattern::new(Some("Napoleon"), Some("defeatCause"), None);
    let history: Vec<_> = kb.all_triples().into_iter().filter(|t| pattern.matches(t)).collect();
    ensure!(history.len() == 2, "S4 seed {seed}: {} stored versions", history.len());
    let old = history.iter().find(|t| t.object == "lit:stubbornness").ok_or("S4: old belief missing")?;
    let end = old.retracted_at.ok_or("S4: old belief never retracted")?;
    let then = ok(kb.query_triples(&pattern, Some(end - 1)), "query")?;
    let now = ok(kb.query_triples(&pattern, Some(end)), "query")?;
    ensure!(
        then.len() == 1 && then[0].object == "lit:stubbornness",
        "S4 seed {seed}: before the switch saw {then:?}"
    );
    ensure!(
        now.len() == 1 && now[0].object == "lit:intelligenceFailure",
        "S4 seed {seed}: after the switch saw {now:?}"
    );
    Ok(())
}
