//! File-level pipeline stages and the run configuration that drives them.
//!
//! Inputs live in one directory, outputs in per-stage subdirectories of the
//! output directory:
//!
//! | stage   | reads                                   | writes                      |
//! |---------|-----------------------------------------|-----------------------------|
//! | proxy   | cells, sites, tiles                     | `proxy/`                    |
//! | ingest  | points, zones, shapes, tile_features,   | `features/`                 |
//! |         | landcover, tiles, `proxy/`              |                             |
//! | graph   | `features/`                             | `graph/`                    |
//! | train   | `features/`                             | `model/`                    |
//! | eval    | `features/`                             | `eval/`                     |
//! | explain | `features/`, `model/`                   | `explain/`                  |

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::evalx::{self, check_folds, make_folds, EvalReport, FittedModel, ModelKind};
use crate::explain::{explain_hrgat, rank_features, Attribution};
use crate::geotile::{TileId, TileUniverse, ZOOMS};
use crate::hiergraph::{build_graph, HierGraph, Sigma};
use crate::hrgat::{GraphInput, HrGatParams, Hyper};
use crate::ingest::{assemble, harmonize, FeatureTable, IngestLog, RawInputs, Standardizer};
use crate::io;
use crate::proxy::{allocate_traffic, build_proxy, ols_validate, reliable_pairs, OlsResult};
use crate::synth::{SyntheticData, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    Cbcv,
    Loco,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: CvMode,
    pub test_city: Option<String>,
    pub models: Vec<ModelKind>,
    pub neighbors: usize,
    pub folds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: CvMode::Cbcv,
            test_city: None,
            models: vec![ModelKind::HrGat, ModelKind::PlainGat, ModelKind::Linear],
            neighbors: evalx::CLUSTER_K,
            folds: evalx::N_FOLDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub permutations: usize,
    /// Number of labeled zoom-15 tiles to explain.
    pub tiles: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { permutations: 32, tiles: 200, top_k: 10, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub zooms: Vec<u8>,
    /// Gaussian edge bandwidth in meters; mean tile width per zoom if unset.
    pub sigma_m: Option<f64>,
    pub model: Hyper,
    pub eval: EvalConfig,
    pub explain: ExplainConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_dir: "data".into(),
            output_dir: "out".into(),
            zooms: ZOOMS.to_vec(),
            sigma_m: None,
            model: Hyper::default(),
            eval: EvalConfig::default(),
            explain: ExplainConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut z = self.zooms.clone();
        z.sort_unstable();
        if z != ZOOMS {
            return Err(Error::InvalidArgument(format!("zooms must be {ZOOMS:?}, got {:?}", self.zooms)));
        }
        if let Some(s) = self.sigma_m {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}")));
            }
        }
        self.model.validate()?;
        if self.eval.models.is_empty() {
            return Err(Error::InvalidArgument("eval.models is empty".into()));
        }
        if self.eval.mode == CvMode::Loco && self.eval.test_city.is_none() {
            return Err(Error::InvalidArgument("loco mode needs eval.test_city".into()));
        }
        if self.eval.neighbors == 0 || self.eval.folds < 2 {
            return Err(Error::InvalidArgument("eval needs neighbors ≥ 1 and folds ≥ 2".into()));
        }
        if self.explain.permutations == 0 || self.explain.tiles == 0 {
            return Err(Error::InvalidArgument("explain needs positive permutations and tiles".into()));
        }
        self.synth.validate()
    }

    pub fn sigma(&self) -> Sigma {
        self.sigma_m.map_or(Sigma::TileWidth, Sigma::Meters)
    }

    pub fn input(&self, name: &str) -> PathBuf {
        self.input_dir.join(name)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }
}

fn universe_and_labels(cfg: &RunConfig) -> Result<(TileUniverse, HashMap<TileId, String>)> {
    let tiles = io::read_labels(&cfg.input("tiles.csv"))?;
    if tiles.is_empty() {
        return Err(Error::data(cfg.input("tiles.csv"), "no tiles"));
    }
    let list: Vec<TileId> = tiles.iter().map(|t| t.0).collect();
    let universe = TileUniverse::new(&list).map_err(|e| Error::data(cfg.input("tiles.csv"), e.to_string()))?;
    Ok((universe, tiles.into_iter().collect()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProxySummary {
    pub tiles: usize,
    pub reliable: usize,
    pub ols: OlsResult,
}

/// Busy-hour targets, deployed-bandwidth proxy and their OLS validation.
pub fn stage_proxy(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (universe, _) = universe_and_labels(cfg)?;
    let cells = io::read_cells(&cfg.input("cells.csv"))?;
    let sites = io::read_sites(&cfg.input("sites.csv"))?;
    let targets = allocate_traffic(&cells, universe.tiles())?;
    let proxy = build_proxy(&sites, universe.tiles())?;
    if proxy.iter().any(|p| !(p.deployed_bw >= 0.0 && p.deployed_bw.is_finite())) {
        return Err(Error::Invariant("deployed bandwidth must be finite and non-negative".into()));
    }
    let ols = ols_validate(&reliable_pairs(&targets, &proxy))?;
    let dir = cfg.stage_dir("proxy");
    let out = vec![dir.join("targets.csv"), dir.join("proxy.csv"), dir.join("validation.json")];
    io::write_targets(&out[0], &targets)?;
    io::write_proxy(&out[1], &proxy)?;
    let summary = ProxySummary { tiles: universe.len(), reliable: targets.iter().filter(|t| t.reliable).count(), ols };
    io::write_json(&out[2], &summary)?;
    log::info!("proxy: {} tiles, {} reliable, R² = {:.4}", summary.tiles, summary.reliable, ols.r_squared);
    Ok(out)
}

fn optional<T>(path: &Path, read: impl Fn(&Path) -> Result<Vec<T>>) -> Result<Vec<T>> {
    if path.exists() {
        read(path)
    } else {
        log::info!("{} not found; skipped", path.display());
        Ok(Vec::new())
    }
}

/// Harmonizes raw inputs onto zoom-15 tiles and writes the three-zoom table.
pub fn stage_ingest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (universe, city) = universe_and_labels(cfg)?;
    let tile_features = cfg.input("tile_features.csv");
    let raw = RawInputs {
        points: optional(&cfg.input("points.csv"), io::read_points)?,
        zones: optional(&cfg.input("zones.csv"), io::read_zones)?,
        shapes: optional(&cfg.input("shapes.csv"), io::read_shapes)?,
        tile_columns: optional(&tile_features, |p| io::read_tile_columns(p, universe.tiles()))?,
    };
    let landcover: HashMap<TileId, String> = io::read_labels(&cfg.input("landcover.csv"))?.into_iter().collect();
    let pdir = cfg.stage_dir("proxy");
    let proxy = io::read_proxy(&pdir.join("proxy.csv"))?;
    let targets = io::read_targets(&pdir.join("targets.csv"))?;
    let (columns, log) = harmonize(&raw, &universe)?;
    if columns.is_empty() {
        return Err(Error::data(&cfg.input_dir, "no feature inputs found"));
    }
    let table = assemble(&universe, &columns, &proxy, Some(&targets), &landcover, &city)?;
    write_table(&cfg.stage_dir("features"), &table, &log)
}

pub fn write_table(dir: &Path, table: &FeatureTable, log: &[IngestLog]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for layer in &table.layers {
        let p = dir.join(format!("features_z{}.csv", layer.zoom));
        io::write_feature_layer(&p, table, layer)?;
        out.push(p);
    }
    out.push(dir.join("feature_schema.csv"));
    io::write_feature_schema(&out[out.len() - 1], table)?;
    out.push(dir.join("ingest_log.csv"));
    io::write_rows(&out[out.len() - 1], log)?;
    Ok(out)
}

pub fn load_table(cfg: &RunConfig) -> Result<FeatureTable> {
    io::read_feature_table(&cfg.stage_dir("features"))
}

/// Writes the hierarchical edge list and per-zoom node counts.
pub fn stage_graph(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = load_table(cfg)?;
    let graph = build_graph(&table, cfg.sigma())?;
    let dir = cfg.stage_dir("graph");
    let out = vec![dir.join("edges.csv"), dir.join("graph.json")];
    io::write_with(&out[0], |w| graph.write_edge_csv(w).map_err(std::io::Error::other))?;
    let levels: Vec<_> = graph
        .levels
        .iter()
        .map(|l| json!({ "zoom": l.zoom, "nodes": l.tiles.len(), "sigma_m": l.sigma_m }))
        .collect();
    io::write_json(&out[1], &json!({ "levels": levels, "intra_edges": graph.intra.len(), "inter_edges": graph.inter.len() }))?;
    Ok(out)
}

/// Everything a trained HR-GAT needs besides its weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCard {
    pub hyper: Hyper,
    pub zooms: Vec<u8>,
    pub n_features: usize,
    pub y_shift: f64,
    pub y_scale: f64,
    pub feature_mean: Vec<Vec<f64>>,
    pub feature_std: Vec<Vec<f64>>,
    pub final_loss: f64,
}

/// Trains HR-GAT on every labeled tile and writes weights, loss trace,
/// predictions and a GeoJSON heatmap.
pub fn stage_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = load_table(cfg)?;
    let graph = build_graph(&table, cfg.sigma())?;
    let fit = evalx::fit_predict(ModelKind::HrGat, &cfg.model, &table, &graph, &table.labeled)?;
    let FittedModel::Gat { params, trace } = &fit.model else {
        unreachable!("HR-GAT fit returns graph parameters")
    };
    let (first, last) = (trace.first().map_or(f64::NAN, |l| l.total), trace.last().map_or(f64::NAN, |l| l.total));
    if !(last <= first) {
        return Err(Error::Invariant(format!("training loss rose from {first} to {last}")));
    }
    let dir = cfg.stage_dir("model");
    let out: Vec<PathBuf> = ["params.bin", "manifest.csv", "model.json", "loss_trace.csv", "predictions.csv", "heatmap.geojson"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let bin = io::create(&out[0])?;
    let man = io::create(&out[1])?;
    params.write_checkpoint(bin, man).map_err(|e| Error::io(&out[0], e))?;
    let card = ModelCard {
        hyper: params.hyper,
        zooms: params.zooms.clone(),
        n_features: params.n_features,
        y_shift: params.y_shift,
        y_scale: params.y_scale,
        feature_mean: fit.standardizer.mean.clone(),
        feature_std: fit.standardizer.std.clone(),
        final_loss: last,
    };
    io::write_json(&out[2], &card)?;
    io::write_with(&out[3], |w| trace.write_csv(w).map_err(std::io::Error::other))?;
    let fine = table.fine();
    let fusion = fit.fusion.as_ref().expect("HR-GAT reports fusion weights");
    io::write_with(&out[4], |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["quadkey".to_string(), "city".into(), "y".into(), "yhat".into(), "labeled".into()];
        header.extend(params.zooms.iter().map(|z| format!("alpha_{z}")));
        c.write_record(&header)?;
        for i in 0..fine.len() {
            let mut rec = vec![
                fine.tiles[i].quadkey(),
                fine.city[i].clone(),
                table.target[i].to_string(),
                fit.yhat[i].to_string(),
                table.labeled[i].to_string(),
            ];
            rec.extend(fusion.row(i).iter().map(|a| a.to_string()));
            c.write_record(&rec)?;
        }
        c.flush()
    })?;
    io::write_json(&out[5], &heatmap(&fine.tiles, &fit.yhat))?;
    log::info!("train: loss {first:.4} -> {last:.4}");
    Ok(out)
}

/// GeoJSON polygons of tiles with their predicted demand.
pub fn heatmap(tiles: &[TileId], values: &[f64]) -> serde_json::Value {
    let features: Vec<_> = tiles
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let b = t.bounds();
            json!({
                "type": "Feature",
                "properties": { "quadkey": t.quadkey(), "demand_mhz": v },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[b.west, b.south], [b.east, b.south], [b.east, b.north], [b.west, b.north], [b.west, b.south]]]
                }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// Rebuilds the trained model and its standardized inputs.
pub fn load_model(cfg: &RunConfig, table: &FeatureTable) -> Result<(HrGatParams, GraphInput)> {
    let dir = cfg.stage_dir("model");
    let card_path = dir.join("model.json");
    let card: ModelCard = serde_json::from_reader(io::open(&card_path)?).map_err(|e| Error::data(&card_path, e.to_string()))?;
    let mut params = HrGatParams::init(&card.zooms, card.n_features, card.hyper)?;
    params.read_values(io::open(&dir.join("params.bin"))?)?;
    params.y_shift = card.y_shift;
    params.y_scale = card.y_scale;
    let st = Standardizer { mean: card.feature_mean, std: card.feature_std };
    if st.mean.len() != table.layers.len() || st.mean.iter().any(|m| m.len() != table.n_features()) {
        return Err(Error::data(&card_path, "standardizer does not match the feature table"));
    }
    let graph = build_graph(&table, cfg.sigma())?;
    Ok((params, GraphInput::new(&graph, &st.apply(table))?))
}

#[derive(Debug, Clone, Serialize)]
struct PairedTest {
    a: ModelKind,
    b: ModelKind,
    metric: &'static str,
    t: f64,
    p: f64,
}

/// Cross-validates every configured model. In CB-CV mode the folds are
/// checked against the separation invariants before any training.
pub fn stage_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = load_table(cfg)?;
    let graph = build_graph(&table, cfg.sigma())?;
    let dir = cfg.stage_dir("eval");
    let mut out = Vec::new();
    let reports: Vec<EvalReport> = match cfg.eval.mode {
        CvMode::Cbcv => {
            let (clusters, folds) = make_folds(&table, cfg.eval.neighbors, cfg.eval.folds)?;
            check_folds(&clusters, &folds, &table)?;
            let p = dir.join("clusters.csv");
            io::write_with(&p, |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["quadkey", "cluster", "fold", "landcover"])?;
                for cl in &clusters {
                    for t in &cl.members {
                        c.write_record([t.quadkey(), cl.id.to_string(), folds.cluster_fold[cl.id].to_string(), cl.landcover.clone()])?;
                    }
                }
                c.flush()
            })?;
            out.push(p);
            cfg.eval.models.iter().map(|&k| evalx::run_cbcv(k, &cfg.model, &table, &graph, &folds)).collect::<Result<_>>()?
        }
        CvMode::Loco => {
            let city = cfg.eval.test_city.as_deref().expect("validated");
            cfg.eval.models.iter().map(|&k| evalx::run_loco(k, &cfg.model, &table, &graph, city)).collect::<Result<_>>()?
        }
    };
    for r in &reports {
        let name = r.model.name();
        let p = dir.join(format!("{name}_folds.csv"));
        io::write_rows(&p, &r.folds)?;
        out.push(p);
        let p = dir.join(format!("{name}_residuals.csv"));
        io::write_with(&p, |w| {
            let mut c = csv::Writer::from_writer(w);
            let mut header = vec!["quadkey", "city", "fold", "y", "yhat", "residual"];
            let alphas: Vec<String> = graph.levels.iter().map(|l| format!("alpha_{}", l.zoom)).collect();
            if r.residuals.first().is_some_and(|x| !x.alpha.is_empty()) {
                header.extend(alphas.iter().map(String::as_str));
            }
            c.write_record(&header)?;
            for row in &r.residuals {
                let mut rec = vec![
                    row.quadkey.clone(),
                    row.city.clone(),
                    row.fold.to_string(),
                    row.y.to_string(),
                    row.yhat.to_string(),
                    (row.y - row.yhat).to_string(),
                ];
                rec.extend(row.alpha.iter().map(|a| a.to_string()));
                c.write_record(&rec)?;
            }
            c.flush()
        })?;
        out.push(p);
        let p = dir.join(format!("{name}_ecdf.csv"));
        io::write_with(&p, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["abs_error", "fraction"])?;
            for (v, f) in &r.ecdf {
                c.write_record([v.to_string(), f.to_string()])?;
            }
            c.flush()
        })?;
        out.push(p);
    }
    let mut tests = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            if a.folds.len() < 2 {
                continue;
            }
            for (metric, va, vb) in [("rmse", a.fold_rmse(), b.fold_rmse()), ("mae", a.fold_mae(), b.fold_mae())] {
                match evalx::paired_t_test(&va, &vb) {
                    Ok((t, p)) => tests.push(PairedTest { a: a.model, b: b.model, metric, t, p }),
                    Err(e) => log::warn!("paired t-test {} vs {}: {e}", a.model.name(), b.model.name()),
                }
            }
        }
    }
    let p = dir.join("report.json");
    io::write_json(&p, &json!({ "mode": cfg.eval.mode, "models": reports, "paired_t_tests": tests }))?;
    out.push(p);
    for r in &reports {
        log::info!("{}: median RMSE {:.4}, median MAE {:.4}, R² {:.4}", r.model.name(), r.median_rmse, r.median_mae, r.r2);
    }
    Ok(out)
}

/// Seeded sample of labeled zoom-15 rows, returned in ascending order.
pub fn sample_tiles(labeled: &[bool], n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labeled.len()).filter(|&i| labeled[i]).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Feature-wise mean of the standardized zoom-15 rows of training tiles.
pub fn training_baseline(input: &GraphInput, train: &[bool]) -> Vec<f64> {
    let x = &input.levels.last().expect("model has levels").x;
    let rows: Vec<usize> = (0..x.rows()).filter(|&i| train[i]).collect();
    (0..x.cols()).map(|j| rows.iter().map(|&i| x.get(i, j)).sum::<f64>() / rows.len().max(1) as f64).collect()
}

/// Shapley attribution of the trained model on a tile sample.
pub fn attribute(cfg: &RunConfig, table: &FeatureTable, params: &HrGatParams, input: &GraphInput) -> Result<Attribution> {
    let nodes = sample_tiles(&table.labeled, cfg.explain.tiles, cfg.explain.seed);
    let baseline = training_baseline(input, &table.labeled);
    explain_hrgat(params, input, &table.names, &nodes, &baseline, cfg.explain.permutations, cfg.explain.seed)
}

pub fn stage_explain(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = load_table(cfg)?;
    let (params, input) = load_model(cfg, &table)?;
    let attr = attribute(cfg, &table, &params, &input)?;
    let dir = cfg.stage_dir("explain");
    let out = vec![dir.join("attribution.csv"), dir.join("attribution_tiles.csv")];
    let ranked = rank_features(&attr, attr.names.len());
    io::write_with(&out[0], |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["feature", "mean_abs_shap", "rank"])?;
        for r in &ranked {
            c.write_record([r.name.clone(), r.mean_abs_shap.to_string(), r.rank.to_string()])?;
        }
        c.flush()
    })?;
    let fine = table.fine();
    io::write_with(&out[1], |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["quadkey".to_string()];
        header.extend(attr.names.iter().cloned());
        c.write_record(&header)?;
        for (&i, phi) in attr.tiles.iter().zip(&attr.per_tile) {
            let mut rec = vec![fine.tiles[i].quadkey()];
            rec.extend(phi.iter().map(|v| v.to_string()));
            c.write_record(&rec)?;
        }
        c.flush()
    })?;
    let top: Vec<&str> = ranked.iter().take(cfg.explain.top_k).map(|r| r.name.as_str()).collect();
    log::info!("top features: {}", top.join(", "));
    Ok(out)
}

/// Writes the synthetic benchmark as pipeline inputs plus its ground truth.
pub fn write_synthetic(dir: &Path, d: &SyntheticData) -> Result<Vec<PathBuf>> {
    let p = |f: &str| dir.join(f);
    let out: Vec<PathBuf> = [
        "tiles.csv",
        "landcover.csv",
        "cells.csv",
        "sites.csv",
        "points.csv",
        "zones.csv",
        "shapes.csv",
        "tile_features.csv",
        "ground_truth.csv",
    ]
    .iter()
    .map(|f| p(f))
    .collect();
    let labels = |v: &[String]| -> Vec<(TileId, String)> { d.tiles.iter().copied().zip(v.iter().cloned()).collect() };
    io::write_labels(&out[0], "city", &labels(&d.city))?;
    io::write_labels(&out[1], "class", &labels(&d.landcover))?;
    io::write_cells(&out[2], &d.cells)?;
    io::write_sites(&out[3], &d.sites)?;
    io::write_points(&out[4], &d.raw.points)?;
    io::write_zones(&out[5], &d.raw.zones)?;
    io::write_shapes(&out[6], &d.raw.shapes)?;
    io::write_tile_columns(&out[7], &d.tiles, &d.raw.tile_columns)?;
    #[derive(Serialize)]
    struct Truth<'a> {
        quadkey: String,
        city: &'a str,
        y_true: f64,
        region: &'a str,
    }
    io::write_rows(
        &out[8],
        (0..d.tiles.len()).map(|i| Truth { quadkey: d.tiles[i].quadkey(), city: &d.city[i], y_true: d.truth[i], region: d.region[i] }),
    )?;
    Ok(out)
}

pub fn stage_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let d = crate::synth::generate(&cfg.synth)?;
    write_synthetic(&cfg.input_dir, &d)
}

/// The feature table the file pipeline would build from `d`, in memory.
pub fn synthetic_table(d: &SyntheticData) -> Result<FeatureTable> {
    let universe = TileUniverse::new(&d.tiles)?;
    let targets = allocate_traffic(&d.cells, &d.tiles)?;
    let proxy = build_proxy(&d.sites, &d.tiles)?;
    let labels = |v: &[String]| -> HashMap<TileId, String> { d.tiles.iter().copied().zip(v.iter().cloned()).collect() };
    assemble(&universe, &d.features, &proxy, Some(&targets), &labels(&d.landcover), &labels(&d.city))
}

/// Graph for a table under the configured bandwidth.
pub fn graph_for(cfg: &RunConfig, table: &FeatureTable) -> Result<HierGraph> {
    build_graph(table, cfg.sigma())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        RunConfig {
            input_dir: dir.join("in"),
            output_dir: dir.join("out"),
            model: Hyper { hidden: 8, layers: 1, epochs: 20, ..Hyper::default() },
            eval: EvalConfig { models: vec![ModelKind::HrGat, ModelKind::Linear], ..EvalConfig::default() },
            explain: ExplainConfig { permutations: 4, tiles: 10, ..ExplainConfig::default() },
            synth: SyntheticSpec { cities: vec!["ottawa".into(), "gta".into()], tiles_per_side: 12, ..SyntheticSpec::default() },
            ..RunConfig::default()
        }
    }

    #[test]
    fn file_pipeline_matches_in_memory_table() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        stage_synth(&cfg).unwrap();
        stage_proxy(&cfg).unwrap();
        stage_ingest(&cfg).unwrap();
        let from_files = load_table(&cfg).unwrap();
        let d = crate::synth::generate(&cfg.synth).unwrap();
        assert_eq!(from_files, synthetic_table(&d).unwrap());
    }

    #[test]
    fn stages_chain_end_to_end() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        for stage in [stage_synth, stage_proxy, stage_ingest, stage_graph, stage_train, stage_eval, stage_explain] {
            for p in stage(&cfg).unwrap() {
                assert!(p.exists(), "{}", p.display());
            }
        }
        let attr = std::fs::read_to_string(cfg.stage_dir("explain").join("attribution.csv")).unwrap();
        assert_eq!(attr.lines().count(), 31);
        let (params, input) = load_model(&cfg, &load_table(&cfg).unwrap()).unwrap();
        let pred = crate::hrgat::forward(&params, &input).unwrap();
        let written = std::fs::read_to_string(cfg.stage_dir("model").join("predictions.csv")).unwrap();
        let first: f64 = written.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(first, pred.yhat[0]);
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::default();
        ok.validate().unwrap();
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.model.lambda = -0.1));
        assert!(bad(|c| c.sigma_m = Some(0.0)));
        assert!(bad(|c| c.zooms = vec![13, 14]));
        assert!(bad(|c| c.zooms = vec![12, 13, 14, 15]));
        assert!(bad(|c| c.eval.mode = CvMode::Loco));
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_str(r#"{"bogus": 1}"#);
        assert!(parsed.is_err());
    }
}
