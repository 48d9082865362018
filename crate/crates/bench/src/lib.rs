//! Shared fixtures for the criterion benchmarks.

use specmap_core::hrgat::GraphInput;
use specmap_core::ingest::Standardizer;
use specmap_core::synth;
use specmap_core::{hiergraph, pipeline, FeatureTable, HierGraph, Sigma, SyntheticSpec};

pub struct Fixture {
    pub table: FeatureTable,
    pub graph: HierGraph,
    /// Standardized model input over all labeled tiles.
    pub input: GraphInput,
}

/// One synthetic city of `side × side` zoom-15 tiles.
pub fn fixture(side: u32) -> Fixture {
    let spec = SyntheticSpec { cities: vec!["ottawa".into()], tiles_per_side: side, ..Default::default() };
    let data = synth::generate(&spec).expect("valid synthetic spec");
    let table = pipeline::synthetic_table(&data).expect("synthetic table");
    let graph = hiergraph::build_graph(&table, Sigma::Meters(400.0)).expect("graph");
    let st = Standardizer::fit(&table, &table.labeled).expect("standardizer").apply(&table);
    let input = GraphInput::new(&graph, &st).expect("model input");
    Fixture { table, graph, input }
}

/// Zoom-15 grid edges among the fixture's tiles.
pub fn fine_edges(graph: &HierGraph) -> Vec<(usize, usize)> {
    graph.level_edges(graph.levels.len() - 1).into_iter().map(|(i, j, _)| (i, j)).collect()
}
