use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{TileId, TileUniverse, MAX_ZOOM, ZOOMS};
use crate::hrgat::DenseMatrix;
use crate::proxy::{TileProxy, TileTarget};

/// How a zoom-15 feature rolls up to coarser tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggKind {
    /// Additive quantities: counts, lengths, areas.
    Sum,
    /// Intensive quantities: densities, mean intensities.
    Mean,
}

/// One zoom-15 feature column aligned with the tile universe.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub agg: AggKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomLayer {
    pub zoom: u8,
    pub tiles: Vec<TileId>,
    /// `tiles.len() × d` feature matrix; row order follows `tiles`.
    pub x: DenseMatrix,
    pub landcover: Vec<String>,
    pub city: Vec<String>,
}

impl ZoomLayer {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn index(&self) -> HashMap<TileId, usize> {
        self.tiles.iter().enumerate().map(|(i, t)| (*t, i)).collect()
    }
}

/// Per-zoom feature matrices over a shared feature list, with the target
/// attached at zoom 15.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub aggs: Vec<AggKind>,
    /// Coarse to fine: zooms 13, 14, 15.
    pub layers: Vec<ZoomLayer>,
    /// Deployed-bandwidth target per zoom-15 tile.
    pub target: Vec<f64>,
    /// Zoom-15 tiles whose target may enter training and scoring.
    pub labeled: Vec<bool>,
}

impl FeatureTable {
    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn layer(&self, zoom: u8) -> Option<&ZoomLayer> {
        self.layers.iter().find(|l| l.zoom == zoom)
    }

    pub fn fine(&self) -> &ZoomLayer {
        self.layer(MAX_ZOOM).expect("feature table always has a zoom-15 layer")
    }

    /// Sorted distinct city labels of zoom-15 tiles.
    pub fn cities(&self) -> Vec<String> {
        let mut c: Vec<String> = self.fine().city.clone();
        c.sort();
        c.dedup();
        c
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.names.len();
        if self.aggs.len() != d {
            return Err(Error::Shape(format!("{} aggregation kinds for {d} features", self.aggs.len())));
        }
        for l in &self.layers {
            if l.x.rows() != l.tiles.len() || l.x.cols() != d {
                return Err(Error::Shape(format!(
                    "zoom {}: {}x{} matrix for {} tiles and {d} features",
                    l.zoom,
                    l.x.rows(),
                    l.x.cols(),
                    l.tiles.len()
                )));
            }
            if l.landcover.len() != l.len() || l.city.len() != l.len() {
                return Err(Error::Shape(format!("zoom {}: label columns misaligned", l.zoom)));
            }
            if !l.x.is_finite() {
                return Err(Error::NonFinite(format!("zoom-{} features", l.zoom)));
            }
        }
        let n = self.fine().len();
        if self.target.len() != n || self.labeled.len() != n {
            return Err(Error::Shape(format!("target length {} for {n} zoom-15 tiles", self.target.len())));
        }
        Ok(())
    }
}

pub(crate) fn modal(labels: &[&str]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iteration is lexicographic, so ties go to the smallest label.
    let mut best: Option<(&str, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l.to_string()).unwrap_or_default()
}

/// Joins zoom-15 feature columns, the proxy target and tile labels into a
/// three-zoom table. Coarse tiles are the ancestors of the zoom-15 universe;
/// their features roll up by sum or mean over present zoom-15 descendants and
/// their labels take the modal descendant label.
pub fn assemble(
    universe: &TileUniverse,
    columns: &[FeatureColumn],
    proxy: &[TileProxy],
    targets: Option<&[TileTarget]>,
    landcover: &HashMap<TileId, String>,
    city: &HashMap<TileId, String>,
) -> Result<FeatureTable> {
    if universe.zoom() != MAX_ZOOM {
        return Err(Error::InvalidArgument(format!("feature universe must be zoom {MAX_ZOOM}")));
    }
    if universe.is_empty() {
        return Err(Error::Empty("tile universe"));
    }
    super::check_universe("proxy", universe, proxy.iter().map(|p| &p.tile))?;
    super::check_universe("landcover", universe, landcover.keys())?;
    super::check_universe("city", universe, city.keys())?;
    if let Some(t) = targets {
        super::check_universe("targets", universe, t.iter().map(|t| &t.tile))?;
    }
    for c in columns {
        if c.values.len() != universe.len() {
            return Err(Error::Shape(format!("feature {}: {} values for {} tiles", c.name, c.values.len(), universe.len())));
        }
    }
    let d = columns.len();
    let fine_tiles = universe.tiles().to_vec();
    let mut fine_x = DenseMatrix::zeros(fine_tiles.len(), d);
    for (j, c) in columns.iter().enumerate() {
        for (i, &v) in c.values.iter().enumerate() {
            fine_x.set(i, j, v);
        }
    }
    let fine = ZoomLayer {
        zoom: MAX_ZOOM,
        landcover: fine_tiles.iter().map(|t| landcover[t].clone()).collect(),
        city: fine_tiles.iter().map(|t| city[t].clone()).collect(),
        tiles: fine_tiles,
        x: fine_x,
    };

    let aggs: Vec<AggKind> = columns.iter().map(|c| c.agg).collect();
    let mut layers = vec![fine];
    for &zoom in ZOOMS.iter().rev().skip(1) {
        let coarse = roll_up(&layers[0], zoom, &aggs);
        layers.push(coarse);
    }
    layers.reverse();

    let bw: HashMap<TileId, f64> = proxy.iter().map(|p| (p.tile, p.deployed_bw)).collect();
    let reliable: Option<HashMap<TileId, bool>> = targets.map(|ts| ts.iter().map(|t| (t.tile, t.reliable)).collect());
    let fine = layers.last().unwrap();
    let target = fine.tiles.iter().map(|t| bw[t]).collect();
    let labeled = fine.tiles.iter().map(|t| reliable.as_ref().is_none_or(|r| r[t])).collect();
    let table = FeatureTable {
        names: columns.iter().map(|c| c.name.clone()).collect(),
        aggs,
        layers,
        target,
        labeled,
    };
    table.validate()?;
    Ok(table)
}

fn roll_up(fine: &ZoomLayer, zoom: u8, aggs: &[AggKind]) -> ZoomLayer {
    let mut groups: BTreeMap<TileId, Vec<usize>> = BTreeMap::new();
    for (i, t) in fine.tiles.iter().enumerate() {
        groups.entry(t.ancestor(zoom).expect("coarser zoom")).or_default().push(i);
    }
    let d = aggs.len();
    let tiles: Vec<TileId> = groups.keys().copied().collect();
    let mut x = DenseMatrix::zeros(tiles.len(), d);
    let mut landcover = Vec::with_capacity(tiles.len());
    let mut city = Vec::with_capacity(tiles.len());
    for (r, kids) in groups.values().enumerate() {
        for (j, agg) in aggs.iter().enumerate() {
            let s: f64 = kids.iter().map(|&k| fine.x.get(k, j)).sum();
            x.set(r, j, if *agg == AggKind::Mean { s / kids.len() as f64 } else { s });
        }
        landcover.push(modal(&kids.iter().map(|&k| fine.landcover[k].as_str()).collect::<Vec<_>>()));
        city.push(modal(&kids.iter().map(|&k| fine.city[k].as_str()).collect::<Vec<_>>()));
    }
    ZoomLayer { zoom, tiles, x, landcover, city }
}

/// Per-zoom z-score parameters estimated on training tiles only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Per layer (coarse to fine): feature means and standard deviations.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl Standardizer {
    /// `train` flags zoom-15 tiles; a coarse tile counts as training when any
    /// of its zoom-15 descendants does.
    pub fn fit(table: &FeatureTable, train: &[bool]) -> Result<Self> {
        let fine = table.fine();
        if train.len() != fine.len() {
            return Err(Error::Shape(format!("train mask of {} for {} tiles", train.len(), fine.len())));
        }
        if !train.iter().any(|&t| t) {
            return Err(Error::Empty("training tiles"));
        }
        let d = table.n_features();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for layer in &table.layers {
            let idx = layer.index();
            let mut in_train = vec![false; layer.len()];
            for (t, _) in fine.tiles.iter().zip(train).filter(|(_, &m)| m) {
                if let Some(&i) = t.ancestor(layer.zoom).and_then(|a| idx.get(&a)) {
                    in_train[i] = true;
                }
            }
            let rows: Vec<usize> = (0..layer.len()).filter(|&i| in_train[i]).collect();
            let n = rows.len() as f64;
            let mut m = vec![0.0; d];
            let mut s = vec![0.0; d];
            for j in 0..d {
                m[j] = rows.iter().map(|&i| layer.x.get(i, j)).sum::<f64>() / n;
                s[j] = (rows.iter().map(|&i| (layer.x.get(i, j) - m[j]).powi(2)).sum::<f64>() / n).sqrt();
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Standardizer { mean, std })
    }

    /// Zero-variance features map to zero everywhere.
    pub fn apply(&self, table: &FeatureTable) -> FeatureTable {
        let mut out = table.clone();
        for (l, layer) in out.layers.iter_mut().enumerate() {
            let (m, s) = (&self.mean[l], &self.std[l]);
            for i in 0..layer.len() {
                for (j, v) in layer.x.row_mut(i).iter_mut().enumerate() {
                    *v = if s[j] > 1e-12 * m[j].abs().max(1.0) { (*v - m[j]) / s[j] } else { 0.0 };
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn universe() -> TileUniverse {
        // two zoom-14 parents side by side, each with all four children
        let mut tiles = Vec::new();
        for px in 0..2u32 {
            for c in TileId::new(14, 100 + px, 200).unwrap().children().unwrap() {
                tiles.push(c);
            }
        }
        TileUniverse::new(&tiles).unwrap()
    }

    fn labels(u: &TileUniverse, f: impl Fn(usize) -> &'static str) -> HashMap<TileId, String> {
        u.tiles().iter().enumerate().map(|(i, t)| (*t, f(i).to_string())).collect()
    }

    fn build(u: &TileUniverse, columns: &[FeatureColumn]) -> Result<FeatureTable> {
        let proxy: Vec<TileProxy> = u.tiles().iter().map(|&tile| TileProxy { tile, deployed_bw: 1.0 }).collect();
        assemble(u, columns, &proxy, None, &labels(u, |i| if i < 6 { "urban" } else { "tree" }), &labels(u, |_| "x"))
    }

    #[test]
    fn rollup_sum_and_mean() {
        let u = universe();
        let counts: Vec<f64> = (0..8).map(f64::from).collect();
        let table = build(
            &u,
            &[
                FeatureColumn { name: "count".into(), agg: AggKind::Sum, values: counts.clone() },
                FeatureColumn { name: "density".into(), agg: AggKind::Mean, values: counts.clone() },
            ],
        )
        .unwrap();
        let z14 = table.layer(14).unwrap();
        assert_eq!(z14.len(), 2);
        assert_eq!(z14.x.row(0), &[0.0 + 1.0 + 2.0 + 3.0, 1.5]);
        assert_eq!(z14.x.row(1), &[4.0 + 5.0 + 6.0 + 7.0, 5.5]);
        let z13 = table.layer(13).unwrap();
        assert_eq!(z13.len(), 1);
        assert_eq!(z13.x.row(0), &[28.0, 3.5]);
        assert_eq!(z14.landcover, vec!["urban", "tree"]);
        assert_eq!(z13.landcover, vec!["urban"]);
        assert_eq!(table.names.len(), table.layers[0].x.cols());
    }

    #[test]
    fn mismatched_universe_is_reported() {
        let u = universe();
        let proxy: Vec<TileProxy> =
            u.tiles()[1..].iter().map(|&tile| TileProxy { tile, deployed_bw: 1.0 }).collect();
        let err = assemble(&u, &[], &proxy, None, &labels(&u, |_| "a"), &labels(&u, |_| "x")).unwrap_err();
        match err {
            Error::TileMismatch(msg) => assert!(msg.contains(&u.tiles()[0].quadkey()), "{msg}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn standardize_uses_train_stats() {
        let u = universe();
        let values: Vec<f64> = (0..8).map(f64::from).collect();
        let table = build(
            &u,
            &[
                FeatureColumn { name: "v".into(), agg: AggKind::Sum, values },
                FeatureColumn { name: "const".into(), agg: AggKind::Sum, values: vec![3.0; 8] },
            ],
        )
        .unwrap();
        let train: Vec<bool> = (0..8).map(|i| i < 4).collect();
        let st = Standardizer::fit(&table, &train).unwrap();
        assert_eq!(st.mean[2][0], 1.5);
        let z = st.apply(&table);
        let fine = z.fine();
        assert!(fine.x.column(1).iter().all(|&v| v == 0.0));
        let train_vals: Vec<f64> = (0..4).map(|i| fine.x.get(i, 0)).collect();
        assert!(crate::stats::mean(&train_vals).abs() < 1e-12);
        assert!((crate::stats::variance(&train_vals) - 1.0).abs() < 1e-12);
        // validation tiles use the same affine map
        let sd = (1.25f64).sqrt();
        assert!((fine.x.get(7, 0) - (7.0 - 1.5) / sd).abs() < 1e-12);
        // coarse: only the first zoom-14 tile is in training
        assert_eq!(st.mean[1][0], 6.0);
    }
}
