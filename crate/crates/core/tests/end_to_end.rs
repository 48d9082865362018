use specmap_core::evalx::{self, FittedModel, ModelKind};
use specmap_core::explain::explain_hrgat;
use specmap_core::hrgat::{forward, level_embeddings, GraphInput, LocalEvaluator};
use specmap_core::{hiergraph, pipeline, synth, FeatureTable, HrGatParams, Hyper, Sigma, SyntheticSpec};

fn trained() -> (FeatureTable, HrGatParams, GraphInput) {
    let spec = SyntheticSpec { cities: vec!["ottawa".into(), "gta".into()], tiles_per_side: 12, ..Default::default() };
    let d = synth::generate(&spec).unwrap();
    let table = pipeline::synthetic_table(&d).unwrap();
    let graph = hiergraph::build_graph(&table, Sigma::Meters(400.0)).unwrap();
    let hyper = Hyper { hidden: 8, layers: 2, epochs: 40, lr: 0.2, ..Hyper::default() };
    let fit = evalx::fit_predict(ModelKind::HrGat, &hyper, &table, &graph, &table.labeled).unwrap();
    let FittedModel::Gat { params, trace } = fit.model else { panic!("expected a graph model") };
    assert!(trace.rows.last().unwrap().total < trace.rows[0].total);
    let input = GraphInput::new(&graph, &fit.standardizer.apply(&table)).unwrap();
    (table, params, input)
}

#[test]
fn local_evaluator_matches_full_forward() {
    let (_, p, input) = trained();
    let emb = level_embeddings(&p, &input).unwrap();
    let n = input.n_fine();
    for node in [0, 7, n / 2, n - 1] {
        let local = LocalEvaluator::new(&p, &input, &emb, node).unwrap();
        let row: Vec<f64> = local.row().iter().enumerate().map(|(j, v)| v + 0.3 * ((j % 5) as f64 - 2.0)).collect();
        let mut changed = input.clone();
        changed.levels.last_mut().unwrap().x.row_mut(node).copy_from_slice(&row);
        let full = forward(&p, &changed).unwrap().yhat[node];
        let got = local.eval(&row).unwrap();
        assert!((got - full).abs() < 1e-9 * full.abs().max(1.0), "node {node}: {got} vs {full}");
    }
}

#[test]
fn attributions_add_up_to_prediction_change() {
    let (table, p, input) = trained();
    let nodes = pipeline::sample_tiles(&table.labeled, 12, 5);
    let baseline = pipeline::training_baseline(&input, &table.labeled);
    let attr = explain_hrgat(&p, &input, &table.names, &nodes, &baseline, 6, 5).unwrap();
    let emb = level_embeddings(&p, &input).unwrap();
    let yhat = forward(&p, &input).unwrap().yhat;
    for (k, &node) in nodes.iter().enumerate() {
        let local = LocalEvaluator::new(&p, &input, &emb, node).unwrap();
        let gap = yhat[node] - local.eval(&baseline).unwrap();
        let sum: f64 = attr.per_tile[k].iter().sum();
        assert!((sum - gap).abs() < 1e-9 * gap.abs().max(1.0), "tile {node}: {sum} vs {gap}");
    }
}
