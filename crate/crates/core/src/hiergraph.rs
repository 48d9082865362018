//! Hierarchical tile graph: Gaussian-weighted 8-neighbor edges inside each
//! zoom and unit-weight child→parent edges between adjacent zooms.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{geodesic_distance, neighbors8, TileId};
use crate::ingest::FeatureTable;

/// Bandwidth of the Gaussian edge kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    /// Mean tile width (meters) of each zoom's tiles.
    TileWidth,
    /// One bandwidth in meters for every zoom.
    Meters(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntraEdge {
    /// Global node indices with `i < j`.
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InterEdge {
    pub child: usize,
    pub parent: usize,
}

impl InterEdge {
    pub const WEIGHT: f64 = 1.0;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphLevel {
    pub zoom: u8,
    pub tiles: Vec<TileId>,
    /// Global index of `tiles[0]`.
    pub offset: usize,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierGraph {
    /// Coarse to fine.
    pub levels: Vec<GraphLevel>,
    pub intra: Vec<IntraEdge>,
    pub inter: Vec<InterEdge>,
    #[serde(skip)]
    adj: Vec<Vec<(usize, f64)>>,
}

/// `exp(−d²/σ²)`
pub fn gaussian_weight(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (sigma * sigma)).exp()
}

fn mean_width(tiles: &[TileId]) -> f64 {
    tiles.iter().map(|t| t.width_m()).sum::<f64>() / tiles.len() as f64
}

/// Builds the graph over every zoom present in `table`, in the table's tile
/// order. Coarse tiles whose parent is absent get no inter edge.
pub fn build_graph(table: &FeatureTable, sigma: Sigma) -> Result<HierGraph> {
    if let Sigma::Meters(s) = sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}")));
        }
    }
    let mut levels = Vec::new();
    let mut offset = 0;
    for layer in &table.layers {
        if layer.is_empty() {
            return Err(Error::Empty("graph zoom level"));
        }
        let sigma_m = match sigma {
            Sigma::TileWidth => mean_width(&layer.tiles),
            Sigma::Meters(s) => s,
        };
        levels.push(GraphLevel { zoom: layer.zoom, tiles: layer.tiles.clone(), offset, sigma_m });
        offset += layer.len();
    }
    for w in levels.windows(2) {
        if w[1].zoom != w[0].zoom + 1 {
            return Err(Error::InvalidArgument(format!("zoom levels {} and {} are not adjacent", w[0].zoom, w[1].zoom)));
        }
    }
    let index: Vec<HashMap<TileId, usize>> = levels
        .iter()
        .map(|l| l.tiles.iter().enumerate().map(|(k, t)| (*t, l.offset + k)).collect())
        .collect();

    let mut intra = Vec::new();
    for (li, level) in levels.iter().enumerate() {
        for (k, t) in level.tiles.iter().enumerate() {
            let i = level.offset + k;
            let c = t.centroid();
            let mut nb: Vec<(usize, TileId)> =
                neighbors8(*t).into_iter().filter_map(|n| index[li].get(&n).map(|&j| (j, n))).filter(|&(j, _)| j > i).collect();
            nb.sort_unstable_by_key(|&(j, _)| j);
            for (j, n) in nb {
                let weight = gaussian_weight(geodesic_distance(c, n.centroid()), level.sigma_m);
                intra.push(IntraEdge { i, j, weight });
            }
        }
    }
    let mut inter = Vec::new();
    for li in 1..levels.len() {
        let level = &levels[li];
        for (k, t) in level.tiles.iter().enumerate() {
            if let Some(&p) = t.parent().ok().and_then(|p| index[li - 1].get(&p)) {
                inter.push(InterEdge { child: level.offset + k, parent: p });
            }
        }
    }
    Ok(HierGraph::from_parts(levels, intra, inter))
}

impl HierGraph {
    fn from_parts(levels: Vec<GraphLevel>, intra: Vec<IntraEdge>, inter: Vec<InterEdge>) -> Self {
        let n = levels.iter().map(|l| l.tiles.len()).sum();
        let mut adj = vec![Vec::new(); n];
        for e in &intra {
            adj[e.i].push((e.j, e.weight));
            adj[e.j].push((e.i, e.weight));
        }
        for a in &mut adj {
            a.sort_by_key(|&(j, _)| j);
        }
        HierGraph { levels, intra, inter, adj }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn level(&self, zoom: u8) -> Option<&GraphLevel> {
        self.levels.iter().find(|l| l.zoom == zoom)
    }

    pub fn fine(&self) -> &GraphLevel {
        self.levels.last().expect("graph has at least one level")
    }

    /// `(zoom level index, local index)` of a global node.
    pub fn locate(&self, node: usize) -> Option<(usize, usize)> {
        self.levels
            .iter()
            .enumerate()
            .find(|(_, l)| node >= l.offset && node < l.offset + l.tiles.len())
            .map(|(li, l)| (li, node - l.offset))
    }

    pub fn tile(&self, node: usize) -> Option<TileId> {
        self.locate(node).map(|(li, k)| self.levels[li].tiles[k])
    }

    /// Same-zoom weighted neighbors sorted by node index; no self entry.
    pub fn neighborhood(&self, node: usize) -> Result<&[(usize, f64)]> {
        self.adj
            .get(node)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Unknown { kind: "graph node", name: node.to_string() })
    }

    /// Intra edges of one level in local indices.
    pub fn level_edges(&self, li: usize) -> Vec<(usize, usize, f64)> {
        let l = &self.levels[li];
        let range = l.offset..l.offset + l.tiles.len();
        self.intra
            .iter()
            .filter(|e| range.contains(&e.i))
            .map(|e| (e.i - l.offset, e.j - l.offset, e.weight))
            .collect()
    }

    /// For each finest-zoom node, the local index of its ancestor at each
    /// level (coarse to fine), following inter edges.
    pub fn ancestor_table(&self) -> Vec<Vec<Option<usize>>> {
        let mut parent: HashMap<usize, usize> = HashMap::with_capacity(self.inter.len());
        for e in &self.inter {
            parent.insert(e.child, e.parent);
        }
        let nl = self.levels.len();
        let fine = self.fine();
        let mut out = vec![vec![None; fine.tiles.len()]; nl];
        for k in 0..fine.tiles.len() {
            let mut node = Some(fine.offset + k);
            for li in (0..nl).rev() {
                let Some(g) = node else { break };
                out[li][k] = Some(g - self.levels[li].offset);
                node = parent.get(&g).copied();
            }
        }
        out
    }

    /// The finest level alone, with no inter edges.
    pub fn fine_only(&self) -> HierGraph {
        let li = self.levels.len() - 1;
        let mut level = self.levels[li].clone();
        let edges = self.level_edges(li);
        level.offset = 0;
        let intra = edges.into_iter().map(|(i, j, weight)| IntraEdge { i, j, weight }).collect();
        HierGraph::from_parts(vec![level], intra, Vec::new())
    }

    /// Edge list CSV: `src_quadkey,dst_quadkey,kind,weight`.
    pub fn write_edge_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["src_quadkey", "dst_quadkey", "kind", "weight"])?;
        let qk = |n: usize| self.tile(n).map(|t| t.quadkey()).unwrap_or_default();
        for e in &self.intra {
            out.write_record([qk(e.i), qk(e.j), "intra".into(), format!("{:.17e}", e.weight)])?;
        }
        for e in &self.inter {
            out.write_record([qk(e.child), qk(e.parent), "inter".into(), format!("{:.17e}", InterEdge::WEIGHT)])?;
        }
        out.flush()?;
        Ok(())
    }
}
