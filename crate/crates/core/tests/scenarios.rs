use colma_core::scenario::{eval_capabilities, run_scenario, Dimension, Scenario, Support};
use colma_core::EngineConfig;

#[test]
fn every_scenario_passes_and_is_reproducible() {
    for which in Scenario::ALL {
        for seed in [0, 7, 12345] {
            let a = run_scenario(which, seed).unwrap_or_else(|e| panic!("{which} seed {seed}: {e}"));
            let b = run_scenario(which, seed).unwrap();
            assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap(), "{which} seed {seed}");
            assert!(a.assertions_passed > 0);
        }
    }
}

#[test]
fn s4_replaces_and_s2_is_complete() {
    let s4 = run_scenario(Scenario::S4, 7).unwrap();
    assert_eq!(s4.observation("decision").unwrap(), "replaced");
    let s2 = run_scenario(Scenario::S2, 7).unwrap();
    assert_eq!(s2.observation("completeness").unwrap(), 1.0);
}

#[test]
fn full_build_supports_all_dimensions() {
    let report = eval_capabilities(&EngineConfig::default());
    assert_eq!(report.dimensions.len(), 12);
    for d in &report.dimensions {
        assert_eq!(d.status, Support::Supported, "{}: {:?}", d.dimension, d.detail);
    }
    let names: Vec<&str> = report.dimensions.iter().map(|d| d.dimension.as_str()).collect();
    let want: Vec<&str> = Dimension::ALL.iter().map(|d| d.name()).collect();
    assert_eq!(names, want);
}

#[test]
fn graph_off_flips_graph_dimensions() {
    let config = EngineConfig {
        graph_enabled: false,
        ..EngineConfig::default()
    };
    let report = eval_capabilities(&config);
    for name in ["Reasoning", "Linking", "Entity Model"] {
        assert_eq!(report.status(name), Some(Support::Unsupported), "{name}");
    }
    assert_eq!(report.status("Similarity"), Some(Support::Supported));
}
