//! The 12-dimension capability report.

use colma_core::scenario::{eval_capabilities, Dimension, Support, FOOTNOTES};
use colma_core::EngineConfig;

use crate::{ensure, Outcome};

/// The full build supports all twelve dimensions, in matrix order, with the
/// deviation footnotes attached; with the graph layer off, Reasoning and
/// Linking become unsupported while graph-free dimensions stay supported.
pub fn matrix() -> Outcome {
    let full = eval_capabilities(&EngineConfig::default());
    let names: Vec<&str> = full.dimensions.iter().map(|d| d.dimension.as_str()).collect();
    let want: Vec<&str> = Dimension::ALL.iter().map(|d| d.name()).collect();
    ensure!(names == want, "dimensions {names:?}");
    for d in &full.dimensions {
        ensure!(d.status == Support::Supported, "{} is {:?}: {}", d.dimension, d.status, d.detail.as_deref().unwrap_or(""));
        ensure!(!d.probe.is_empty(), "{} has no probe description", d.dimension);
    }
    ensure!(full.footnotes == FOOTNOTES, "footnotes missing from the report");
    for dim in ["Versioning", "Indexing"] {
        ensure!(full.footnotes.iter().any(|f| f.starts_with(dim)), "no deviation note for {dim}");
    }

    let no_graph = eval_capabilities(&EngineConfig {
        graph_enabled: false,
        ..EngineConfig::default()
    });
    for dim in ["Reasoning", "Linking"] {
        ensure!(no_graph.status(dim) == Some(Support::Unsupported), "{dim} with graph off: {:?}", no_graph.status(dim));
    }
    for dim in ["Similarity", "Compression", "Sync"] {
        ensure!(no_graph.status(dim) == Some(Support::Supported), "{dim} with graph off: {:?}", no_graph.status(dim));
    }
    Ok(format!(
        "{}/12 supported; graph off leaves {}/12 with Reasoning and Linking unsupported",
        full.supported_count(),
        no_graph.supported_count()
    ))
}
