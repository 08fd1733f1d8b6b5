//! Inputs shared by the benchmarks.

use alter_core::graph::TimeSeriesTable;
use alter_core::graph::{build_graph, BrainGraph};
use alter_core::synth::{generate_subject, SynthConfig};

/// One default synthetic subject (40 ROIs) as a thresholded graph.
pub fn synthetic_graph(seed: u64) -> BrainGraph {
    let cfg = SynthConfig::default();
    let values = generate_subject(&cfg, 1, seed).expect("default synth config is valid");
    let table = TimeSeriesTable::new("bench", values).expect("generated series are well formed");
    build_graph(&table, 0.3).expect("graph construction")
}
