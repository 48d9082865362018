//! Spatially blocked and leave-one-city-out evaluation.
//!
//! Folds are built in two stages. Stage 1 greedily groups zoom-14 tiles of
//! each city into compact clusters (a seed plus its nearest unassigned
//! neighbors). Stage 2 packs clusters into folds, class by class of their
//! dominant land cover. Zoom-15 tiles inherit the fold of their zoom-14
//! parent, so a cluster never straddles the train/validation split.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{geodesic_distance, GeoPoint, TileId};
use crate::hiergraph::HierGraph;
use crate::hrgat::{self, fit_linear, fit_mlp, DenseMatrix, GraphInput, HrGatParams, Hyper, LinearModel, LossTrace, MlpModel};
use crate::ingest::{modal, FeatureTable, Standardizer};
use crate::stats;

pub const CLUSTER_K: usize = 6;
pub const N_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialCluster {
    pub id: usize,
    /// Zoom-14 tiles.
    pub members: Vec<TileId>,
    pub centroid: GeoPoint,
    /// Modal land cover of the members; empty until labeled.
    pub landcover: String,
}

/// Greedy kNN grouping: the unassigned tile with the smallest quadkey seeds a
/// cluster together with its `k` nearest unassigned tiles.
pub fn stage1_clusters(tiles: &[TileId], k: usize) -> Vec<SpatialCluster> {
    let mut order: Vec<(String, TileId)> = tiles.iter().map(|t| (t.quadkey(), *t)).collect();
    order.sort();
    order.dedup();
    let centers: Vec<GeoPoint> = order.iter().map(|(_, t)| t.centroid()).collect();
    let mut taken = vec![false; order.len()];
    let mut out = Vec::new();
    for seed in 0..order.len() {
        if taken[seed] {
            continue;
        }
        taken[seed] = true;
        let mut cand: Vec<(f64, usize)> = (0..order.len())
            .filter(|&j| !taken[j])
            .map(|j| (geodesic_distance(centers[seed], centers[j]), j))
            .collect();
        // ties resolve toward the smaller quadkey
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut idx = vec![seed];
        for &(_, j) in cand.iter().take(k) {
            taken[j] = true;
            idx.push(j);
        }
        let lat = idx.iter().map(|&i| centers[i].lat).sum::<f64>() / idx.len() as f64;
        let lon = idx.iter().map(|&i| centers[i].lon).sum::<f64>() / idx.len() as f64;
        out.push(SpatialCluster {
            id: out.len(),
            members: idx.iter().map(|&i| order[i].1).collect(),
            centroid: GeoPoint { lat, lon },
            landcover: String::new(),
        });
    }
    out
}

/// Cluster-to-fold map plus the derived zoom-14 tile lookup. Folds are
/// numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub cluster_fold: Vec<usize>,
    tile_fold: HashMap<TileId, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, tile: TileId) -> Option<usize> {
        let t14 = if tile.zoom > 14 { tile.ancestor(14)? } else { tile };
        self.tile_fold.get(&t14).copied()
    }

    pub fn fine_folds(&self, tiles: &[TileId]) -> Vec<Option<usize>> {
        tiles.iter().map(|t| self.fold_of(*t)).collect()
    }
}

/// Within each land-cover class (in name order), clusters go largest first
/// to the fold holding the fewest clusters of that class, then the fewest
/// tiles overall, then the lowest index.
pub fn stage2_folds(clusters: &[SpatialCluster], n_folds: usize) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {n_folds}")));
    }
    if clusters.len() < n_folds {
        return Err(Error::Degenerate(format!("{} clusters for {n_folds} folds", clusters.len())));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        by_class.entry(&c.landcover).or_default().push(i);
    }
    let mut cluster_fold = vec![0; clusters.len()];
    let mut size = vec![0usize; n_folds];
    for idx in by_class.values_mut() {
        idx.sort_by(|&a, &b| clusters[b].members.len().cmp(&clusters[a].members.len()).then(a.cmp(&b)));
        let mut count = vec![0usize; n_folds];
        for &c in idx.iter() {
            let f = (0..n_folds).min_by_key(|&f| (count[f], size[f], f)).expect("n_folds > 0");
            count[f] += 1;
            size[f] += clusters[c].members.len();
            cluster_fold[c] = f + 1;
        }
    }
    let mut tile_fold = HashMap::new();
    for (c, &f) in clusters.iter().zip(&cluster_fold) {
        for t in &c.members {
            if tile_fold.insert(*t, f).is_some() {
                return Err(Error::Invariant(format!("tile {} is in two clusters", t.quadkey())));
            }
        }
    }
    Ok(FoldAssignment { n_folds, cluster_fold, tile_fold })
}

/// Clusters every city's zoom-14 tiles separately, labels each cluster with
/// its modal land cover and packs the clusters into folds.
pub fn make_folds(table: &FeatureTable, k: usize, n_folds: usize) -> Result<(Vec<SpatialCluster>, FoldAssignment)> {
    let layer = table.layer(14).ok_or_else(|| Error::Shape("feature table has no zoom-14 layer".into()))?;
    if layer.is_empty() {
        return Err(Error::Empty("zoom-14 tiles"));
    }
    let index = layer.index();
    let mut per_city: BTreeMap<&str, Vec<TileId>> = BTreeMap::new();
    for (t, c) in layer.tiles.iter().zip(&layer.city) {
        per_city.entry(c).or_default().push(*t);
    }
    let mut clusters = Vec::new();
    for tiles in per_city.values() {
        for mut c in stage1_clusters(tiles, k) {
            let labels: Vec<&str> = c.members.iter().map(|t| layer.landcover[index[t]].as_str()).collect();
            c.landcover = modal(&labels);
            c.id = clusters.len();
            clusters.push(c);
        }
    }
    let folds = stage2_folds(&clusters, n_folds)?;
    Ok((clusters, folds))
}

/// Checks the fold-separation invariants exhaustively: every cluster lies in
/// one fold, every labeled zoom-15 tile has exactly one fold through its
/// parent cluster, no fold is empty, and per-class fold counts differ by at
/// most one.
pub fn check_folds(clusters: &[SpatialCluster], folds: &FoldAssignment, table: &FeatureTable) -> Result<()> {
    let mut owner: HashMap<TileId, usize> = HashMap::new();
    for c in clusters {
        let f = folds.cluster_fold[c.id];
        if !(1..=folds.n_folds).contains(&f) {
            return Err(Error::Invariant(format!("cluster {} has fold {f}", c.id)));
        }
        for t in &c.members {
            if owner.insert(*t, c.id).is_some() {
                return Err(Error::Invariant(format!("tile {} belongs to two clusters", t.quadkey())));
            }
            if folds.fold_of(*t) != Some(f) {
                return Err(Error::Invariant(format!("cluster {} is split across folds", c.id)));
            }
        }
    }
    let fine = table.fine();
    let mut used = vec![0usize; folds.n_folds];
    for (t, &lab) in fine.tiles.iter().zip(&table.labeled) {
        let parent = t.ancestor(14).and_then(|p| owner.get(&p).map(|&c| (p, c)));
        match (parent, folds.fold_of(*t)) {
            (Some((_, c)), Some(f)) if folds.cluster_fold[c] == f => used[f - 1] += usize::from(lab),
            _ if !lab => {}
            _ => return Err(Error::Invariant(format!("zoom-15 tile {} has no fold", t.quadkey()))),
        }
    }
    if let Some(f) = used.iter().position(|&u| u == 0) {
        return Err(Error::Invariant(format!("fold {} has no labeled tiles", f + 1)));
    }
    let mut per_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for c in clusters {
        per_class.entry(&c.landcover).or_insert_with(|| vec![0; folds.n_folds])[folds.cluster_fold[c.id] - 1] += 1;
    }
    for (class, counts) in per_class {
        let (lo, hi) = (counts.iter().min().unwrap_or(&0), counts.iter().max().unwrap_or(&0));
        if hi - lo > 1 {
            return Err(Error::Invariant(format!("land cover {class:?} fold counts {counts:?} differ by more than one")));
        }
    }
    Ok(())
}

/// Zoom-15 row indices outside and inside the test city.
pub fn loco_split(table: &FeatureTable, test_city: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let city = &table.fine().city;
    if !city.iter().any(|c| c == test_city) {
        return Err(Error::Unknown { kind: "city", name: test_city.to_string() });
    }
    Ok((0..city.len()).partition(|&i| city[i] != test_city))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} targets for {} predictions", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::Degenerate("metrics need at least two tiles".into()));
    }
    let n = y.len() as f64;
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let m = stats::mean(y);
    let sst: f64 = y.iter().map(|a| (a - m) * (a - m)).sum();
    if sst == 0.0 {
        return Err(Error::Degenerate("R² is undefined for a constant target".into()));
    }
    Ok(Metrics { mae, rmse: (sse / n).sqrt(), r2: 1.0 - sse / sst })
}

/// Global Moran's I with row-standardized binary weights over undirected
/// `edges`. A constant field gives 0.
pub fn morans_i(values: &[f64], edges: &[(usize, usize)]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate("Moran's I needs at least two values".into()));
    }
    if edges.is_empty() {
        return Err(Error::Degenerate("Moran's I needs at least one edge".into()));
    }
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::Shape(format!("edge ({i}, {j}) outside {n} values")));
        }
        if i != j {
            nbrs[i].push(j);
            nbrs[j].push(i);
        }
    }
    let m = stats::mean(values);
    let z: Vec<f64> = values.iter().map(|v| v - m).collect();
    let den: f64 = z.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Ok(0.0);
    }
    let mut s0 = 0.0;
    let mut num = 0.0;
    for (i, nb) in nbrs.iter_mut().enumerate() {
        nb.sort_unstable();
        nb.dedup();
        if nb.is_empty() {
            continue;
        }
        s0 += 1.0;
        num += z[i] * nb.iter().map(|&j| z[j]).sum::<f64>() / nb.len() as f64;
    }
    Ok(n as f64 / s0 * num / den)
}

/// Two-sided paired t-test; returns (t, p).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired series of lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let var = stats::variance(&d) * n / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let t = stats::mean(&d) / (var / n).sqrt();
    Ok((t, stats::t_two_sided(t, n - 1.0)?))
}

/// Sorted values with the fraction of values at or below each.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        for v in &s[i..=j] {
            out.push((*v, (j + 1) as f64 / n));
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    HrGat,
    PlainGat,
    Linear,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::HrGat, ModelKind::PlainGat, ModelKind::Linear, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::HrGat => "hr_gat",
            ModelKind::PlainGat => "plain_gat",
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "model", name: s.to_string() })
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Gat { params: HrGatParams, trace: LossTrace },
    Linear(LinearModel),
    Mlp(MlpModel),
}

/// A model fitted on a training mask, with predictions for every zoom-15 tile.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub kind: ModelKind,
    pub standardizer: Standardizer,
    pub model: FittedModel,
    pub yhat: Vec<f64>,
    /// Per-tile fusion weights (HR-GAT only), columns ordered coarse to fine.
    pub fusion: Option<DenseMatrix>,
}

/// Graph the given model kind trains on.
pub fn model_graph(kind: ModelKind, graph: &HierGraph) -> HierGraph {
    match kind {
        ModelKind::PlainGat => graph.fine_only(),
        _ => graph.clone(),
    }
}

/// Standardizes features on the training tiles, then fits and predicts.
/// Graph models see every tile's features but only training targets.
pub fn fit_predict(kind: ModelKind, hyper: &Hyper, table: &FeatureTable, graph: &HierGraph, train: &[bool]) -> Result<Fitted> {
    let standardizer = Standardizer::fit(table, train)?;
    let st = standardizer.apply(table);
    let y = &table.target;
    let (model, yhat, fusion) = match kind {
        ModelKind::HrGat | ModelKind::PlainGat => {
            let input = GraphInput::new(&model_graph(kind, graph), &st)?;
            let p = HrGatParams::init(&input.zooms(), input.n_features(), *hyper)?;
            let (params, trace) = hrgat::train(p, &input, y, train)?;
            let pred = hrgat::forward(&params, &input)?;
            let fusion = (kind == ModelKind::HrGat).then_some(pred.fusion);
            (FittedModel::Gat { params, trace }, pred.yhat, fusion)
        }
        ModelKind::Linear => {
            let m = fit_linear(&st.fine().x, y, train)?;
            let yhat = m.predict(&st.fine().x);
            (FittedModel::Linear(m), yhat, None)
        }
        ModelKind::Mlp => {
            let m = fit_mlp(&st.fine().x, y, train, hyper)?;
            let yhat = m.predict(&st.fine().x);
            (FittedModel::Mlp(m), yhat, None)
        }
    };
    if yhat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} predictions", kind.name())));
    }
    Ok(Fitted { kind, standardizer, model, yhat, fusion })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    /// Residual Moran's I over validation tiles and the edges among them.
    pub morans_i: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub quadkey: String,
    pub city: String,
    pub fold: usize,
    pub y: f64,
    pub yhat: f64,
    /// Fusion weights coarse to fine; empty for non-fusion models.
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub mode: String,
    pub folds: Vec<FoldMetrics>,
    pub median_mae: f64,
    pub median_rmse: f64,
    /// R² pooled over all validation tiles.
    pub r2: f64,
    pub median_morans_i: Option<f64>,
    /// Per-tile absolute error eCDF over all validation tiles.
    pub ecdf: Vec<(f64, f64)>,
    #[serde(skip)]
    pub residuals: Vec<ResidualRow>,
}

impl EvalReport {
    pub fn fold_rmse(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.rmse).collect()
    }

    pub fn fold_mae(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.mae).collect()
    }

    fn assemble(model: ModelKind, mode: &str, mut parts: Vec<(FoldMetrics, Vec<ResidualRow>)>) -> Result<Self> {
        parts.sort_by_key(|p| p.0.fold);
        let folds: Vec<FoldMetrics> = parts.iter().map(|p| p.0.clone()).collect();
        let residuals: Vec<ResidualRow> = parts.into_iter().flat_map(|p| p.1).collect();
        let y: Vec<f64> = residuals.iter().map(|r| r.y).collect();
        let yhat: Vec<f64> = residuals.iter().map(|r| r.yhat).collect();
        let pooled = metrics(&y, &yhat)?;
        let med = |v: Vec<f64>| stats::median(&v).ok_or(Error::Empty("folds"));
        let moran: Vec<f64> = folds.iter().filter_map(|f| f.morans_i).collect();
        let abs_err: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| (a - b).abs()).collect();
        Ok(EvalReport {
            model,
            mode: mode.to_string(),
            median_mae: med(folds.iter().map(|f| f.mae).collect())?,
            median_rmse: med(folds.iter().map(|f| f.rmse).collect())?,
            r2: pooled.r2,
            median_morans_i: stats::median(&moran),
            ecdf: ecdf(&abs_err),
            folds,
            residuals,
        })
    }
}

fn evaluate_split(
    kind: ModelKind,
    hyper: &Hyper,
    table: &FeatureTable,
    graph: &HierGraph,
    fold: usize,
    train: &[bool],
    val: &[bool],
    fine_edges: &[(usize, usize)],
) -> Result<(FoldMetrics, Vec<ResidualRow>)> {
    let fit = fit_predict(kind, hyper, table, graph, train)?;
    let fine = table.fine();
    let idx: Vec<usize> = (0..val.len()).filter(|&i| val[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| table.target[i]).collect();
    let yhat: Vec<f64> = idx.iter().map(|&i| fit.yhat[i]).collect();
    let m = metrics(&y, &yhat)?;
    let mut local = vec![usize::MAX; val.len()];
    for (k, &i) in idx.iter().enumerate() {
        local[i] = k;
    }
    let edges: Vec<(usize, usize)> = fine_edges
        .iter()
        .filter(|&&(i, j)| val[i] && val[j])
        .map(|&(i, j)| (local[i], local[j]))
        .collect();
    let resid: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
    let moran = if edges.is_empty() { None } else { Some(morans_i(&resid, &edges)?) };
    let rows = idx
        .iter()
        .map(|&i| ResidualRow {
            quadkey: fine.tiles[i].quadkey(),
            city: fine.city[i].clone(),
            fold,
            y: table.target[i],
            yhat: fit.yhat[i],
            alpha: fit.fusion.as_ref().map(|f| f.row(i).to_vec()).unwrap_or_default(),
        })
        .collect();
    let fm = FoldMetrics {
        fold,
        n_train: train.iter().filter(|&&t| t).count(),
        n_val: idx.len(),
        mae: m.mae,
        rmse: m.rmse,
        r2: m.r2,
        morans_i: moran,
    };
    log::info!("{} fold {fold}: rmse {:.4} mae {:.4}", kind.name(), m.rmse, m.mae);
    Ok((fm, rows))
}

fn fine_edges(graph: &HierGraph) -> Vec<(usize, usize)> {
    graph.level_edges(graph.levels.len() - 1).into_iter().map(|(i, j, _)| (i, j)).collect()
}

/// Clustering-based cross-validation: each fold is held out in turn. Folds
/// train concurrently; the report is merged in fold order.
pub fn run_cbcv(kind: ModelKind, hyper: &Hyper, table: &FeatureTable, graph: &HierGraph, folds: &FoldAssignment) -> Result<EvalReport> {
    table.validate()?;
    let fold_of = folds.fine_folds(&table.fine().tiles);
    let edges = fine_edges(graph);
    let parts = (1..=folds.n_folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<bool> = fold_of.iter().zip(&table.labeled).map(|(k, &l)| l && k.is_some_and(|k| k != f)).collect();
            let val: Vec<bool> = fold_of.iter().zip(&table.labeled).map(|(k, &l)| l && *k == Some(f)).collect();
            evaluate_split(kind, hyper, table, graph, f, &train, &val, &edges)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::assemble(kind, "cbcv", parts)
}

/// Leave-one-city-out: trains on the other cities, scores the held-out one.
pub fn run_loco(kind: ModelKind, hyper: &Hyper, table: &FeatureTable, graph: &HierGraph, test_city: &str) -> Result<EvalReport> {
    table.validate()?;
    let (train_idx, test_idx) = loco_split(table, test_city)?;
    let n = table.fine().len();
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    for i in train_idx {
        train[i] = table.labeled[i];
    }
    for i in test_idx {
        val[i] = table.labeled[i];
    }
    let part = evaluate_split(kind, hyper, table, graph, 1, &train, &val, &fine_edges(graph))?;
    EvalReport::assemble(kind, "loco", vec![part])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(n: u32) -> Vec<TileId> {
        (0..n).map(|i| TileId::new(14, 4000 + i, 5000).unwrap()).collect()
    }

    fn cluster(id: usize, size: usize, class: &str) -> SpatialCluster {
        SpatialCluster {
            id,
            members: (0..size).map(|k| TileId::new(14, 100 * id as u32 + k as u32, 7).unwrap()).collect(),
            centroid: GeoPoint { lat: 0.0, lon: 0.0 },
            landcover: class.into(),
        }
    }

    #[test]
    fn seven_in_a_row_is_one_cluster() {
        let c = stage1_clusters(&row(7), 6);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members.len(), 7);
        let c = stage1_clusters(&row(1), 6);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn clusters_partition_tiles() {
        let tiles: Vec<TileId> = (0..9).flat_map(|x| (0..7).map(move |y| TileId::new(14, 300 + x, 900 + y).unwrap())).collect();
        let c = stage1_clusters(&tiles, 6);
        let mut all: Vec<TileId> = c.iter().flat_map(|c| c.members.clone()).collect();
        all.sort();
        let mut want = tiles.clone();
        want.sort();
        assert_eq!(all, want);
        assert!(c.iter().all(|c| (1..=7).contains(&c.members.len())));
    }

    #[test]
    fn balanced_packing() {
        let cl: Vec<SpatialCluster> = (0..10).map(|i| cluster(i, 3, if i % 2 == 0 { "a" } else { "b" })).collect();
        let f = stage2_folds(&cl, 5).unwrap();
        for fold in 1..=5 {
            let classes: Vec<&str> = cl.iter().filter(|c| f.cluster_fold[c.id] == fold).map(|c| c.landcover.as_str()).collect();
            assert_eq!(classes.len(), 2);
            assert!(classes.contains(&"a") && classes.contains(&"b"));
        }
        let f = stage2_folds(&cl[..5], 5).unwrap();
        let mut seen = f.cluster_fold.clone();
        seen.sort();
        assert_eq!(seen, vec![1, 2, 3, 4, 5]);
        assert!(stage2_folds(&cl[..4], 5).is_err());
    }

    proptest! {
        #[test]
        fn per_class_counts_within_one(spec in prop::collection::vec((1usize..8, 0usize..3), 5..40)) {
            let cl: Vec<SpatialCluster> = spec.iter().enumerate().map(|(i, &(s, c))| cluster(i, s, ["x", "y", "z"][c])).collect();
            let f = stage2_folds(&cl, 5).unwrap();
            for class in ["x", "y", "z"] {
                let mut counts = [0usize; 5];
                for c in cl.iter().filter(|c| c.landcover == class) {
                    counts[f.cluster_fold[c.id] - 1] += 1;
                }
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn rmse_dominates_mae(v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..40)) {
            let y: Vec<f64> = v.iter().map(|p| p.0).collect();
            let yhat: Vec<f64> = v.iter().map(|p| p.1).collect();
            if let Ok(m) = metrics(&y, &yhat) {
                prop_assert!(m.rmse >= m.mae - 1e-12);
            }
        }

        #[test]
        fn moran_matches_double_sum(v in prop::collection::vec(-5.0f64..5.0, 4..25), seed in 0u64..1000) {
            let n = v.len();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if (i * 31 + j * 17 + seed as usize) % 4 == 0 {
                        edges.push((i, j));
                    }
                }
            }
            prop_assume!(!edges.is_empty());
            let got = morans_i(&v, &edges).unwrap();
            prop_assert!((got - brute_moran(&v, &edges)).abs() < 1e-10);
        }

        #[test]
        fn ecdf_is_monotone(v in prop::collection::vec(0.0f64..10.0, 1..50)) {
            let e = ecdf(&v);
            prop_assert_eq!(e.len(), v.len());
            prop_assert!(e.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
            prop_assert_eq!(e.last().unwrap().1, 1.0);
        }
    }

    /// Dense weight matrix, then the textbook double sum.
    fn brute_moran(v: &[f64], edges: &[(usize, usize)]) -> f64 {
        let n = v.len();
        let mut w = vec![vec![0.0; n]; n];
        for &(i, j) in edges {
            w[i][j] = 1.0;
            w[j][i] = 1.0;
        }
        for r in w.iter_mut() {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter_mut().for_each(|x| *x /= s);
            }
        }
        let m = v.iter().sum::<f64>() / n as f64;
        let s0: f64 = w.iter().flatten().sum();
        let mut num = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += w[i][j] * (v[i] - m) * (v[j] - m);
            }
        }
        let den: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
        n as f64 / s0 * num / den
    }

    fn grid_edges(side: usize, diagonal: bool) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for y in 0..side {
            for x in 0..side {
                let i = y * side + x;
                if x + 1 < side {
                    e.push((i, i + 1));
                }
                if y + 1 < side {
                    e.push((i, i + side));
                }
                if diagonal && x + 1 < side && y + 1 < side {
                    e.push((i, i + side + 1));
                }
                if diagonal && x > 0 && y + 1 < side {
                    e.push((i, i + side - 1));
                }
            }
        }
        e
    }

    #[test]
    fn moran_reference_fields() {
        let e = grid_edges(10, false);
        let board: Vec<f64> = (0..100).map(|i| if (i / 10 + i % 10) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((morans_i(&board, &e).unwrap() + 1.0).abs() < 1e-12);
        let ramp: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let e8 = grid_edges(10, true);
        let got = morans_i(&ramp, &e8).unwrap();
        assert!(got > 0.5);
        assert!((got - brute_moran(&ramp, &e8)).abs() < 1e-10);
        assert_eq!(morans_i(&[3.0; 4], &[(0, 1)]).unwrap(), 0.0);
        assert!(morans_i(&[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert!((m.mae - 1.0).abs() < 1e-15);
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-15);
        let m = metrics(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, 1.0));
        assert!(metrics(&[2.0, 2.0], &[1.0, 2.0]).is_err());
    }

    /// Two-sided p from Simpson integration of the t density.
    fn t_oracle(t: f64, df: f64) -> f64 {
        let dens = |x: f64| (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = dens(a) + dens(b);
            for k in 1..n {
                s += dens(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        // normalize numerically over a wide range, tails via substitution-free cutoff
        let total = simpson(-2000.0, 2000.0, 4_000_000);
        2.0 * simpson(t.abs(), 2000.0, 2_000_000) / total
    }

    #[test]
    fn paired_t_matches_oracle() {
        let a = [3.0, 4.0, 5.0, 6.0, 8.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        // diffs [1,1,1,1,2]: mean 1.2, sd sqrt(0.2)
        assert!((t - 1.2 / (0.2f64.sqrt() / 5f64.sqrt())).abs() < 1e-12);
        assert!((p - t_oracle(t, 4.0)).abs() < 1e-6, "{p} vs {}", t_oracle(t, 4.0));
        assert!(paired_t_test(&a, &a).is_err());
    }

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf(&[5.0]), vec![(5.0, 1.0)]);
        let f: Vec<f64> = ecdf(&[4.0, 2.0, 1.0, 2.0]).iter().map(|p| p.1).collect();
        assert_eq!(f, vec![0.25, 0.75, 0.75, 1.0]);
    }

    #[test]
    fn loco_partitions_by_city() {
        let d = crate::synth::generate(&crate::synth::SyntheticSpec {
            cities: vec!["ottawa".into(), "gta".into(), "calgary".into()],
            tiles_per_side: 8,
            ..Default::default()
        })
        .unwrap();
        let table = crate::pipeline::synthetic_table(&d).unwrap();
        let (tr, te) = loco_split(&table, "ottawa").unwrap();
        assert_eq!(tr.len() + te.len(), table.fine().len());
        assert!(te.iter().all(|&i| table.fine().city[i] == "ottawa"));
        assert!(tr.iter().all(|&i| table.fine().city[i] != "ottawa"));
        assert!(loco_split(&table, "paris").is_err());
    }

    #[test]
    fn linear_recovers_noiseless_linear_target() {
        let spec = crate::synth::SyntheticSpec {
            cities: vec!["ottawa".into(), "gta".into(), "calgary".into()],
            tiles_per_side: 16,
            cross_scale: 0.0,
            noise_sd: 0.0,
            ..Default::default()
        };
        let d = crate::synth::generate(&spec).unwrap();
        let table = crate::pipeline::synthetic_table(&d).unwrap();
        let graph = crate::hiergraph::build_graph(&table, crate::hiergraph::Sigma::TileWidth).unwrap();
        let (_, folds) = make_folds(&table, CLUSTER_K, N_FOLDS).unwrap();
        let r = run_cbcv(ModelKind::Linear, &Hyper::default(), &table, &graph, &folds).unwrap();
        assert!(r.median_rmse < 1e-6, "median RMSE {}", r.median_rmse);
        assert!((r.r2 - 1.0).abs() < 1e-9);
    }
}
