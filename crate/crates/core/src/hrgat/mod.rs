//! Hierarchical graph attention regressor.
//!
//! Every zoom level runs its own stack of single-head GAT layers over its
//! intra-zoom neighborhoods, starting from a shared linear embedding of that
//! zoom's features. Zoom-15 nodes then gate their own embedding and those of
//! their ancestors with a per-node softmax, and a linear head maps the fused
//! vector to demand. Gradients are computed by hand in reverse mode.

mod baselines;
mod matrix;
mod model;
mod train;

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hiergraph::HierGraph;
use crate::ingest::FeatureTable;

pub use baselines::{fit_linear, fit_mlp, LinearModel, MlpModel};
pub use matrix::{dot, DenseMatrix};
pub use model::{forward, level_embeddings, LocalEvaluator};
pub use train::{gradient, loss, train, LossParts, LossTrace};

/// Model and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub hidden: usize,
    pub layers: usize,
    pub slope: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { hidden: 32, layers: 2, slope: 0.2, lambda: 0.1, lr: 1e-2, epochs: 500, seed: 7 }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.slope >= 0.0 && self.slope < 1.0) {
            return Err(Error::InvalidArgument(format!("LeakyReLU slope must lie in [0, 1), got {}", self.slope)));
        }
        Ok(())
    }
}

/// One named parameter block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable weights in one flat vector, addressed through named blocks.
///
/// Predictions are `y_shift + y_scale · (h_finalᵀ w_out + bias)`; the shift
/// and scale are fixed from the training targets and are not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrGatParams {
    pub hyper: Hyper,
    pub zooms: Vec<u8>,
    pub n_features: usize,
    pub blocks: Vec<Block>,
    pub values: Vec<f64>,
    pub y_shift: f64,
    pub y_scale: f64,
}

/// Per-node predictions and the fusion weights that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub yhat: Vec<f64>,
    pub zooms: Vec<u8>,
    /// `n × zooms.len()`; zero where a node lacks an ancestor at that zoom.
    pub fusion: DenseMatrix,
}

impl HrGatParams {
    /// Uniform(±1/√fan_in) initialization per block; bias starts at zero.
    pub fn init(zooms: &[u8], n_features: usize, hyper: Hyper) -> Result<Self> {
        hyper.validate()?;
        if zooms.is_empty() {
            return Err(Error::InvalidArgument("at least one zoom level is required".into()));
        }
        let h = hyper.hidden;
        let mut shapes = vec![("w_in".to_string(), n_features, h)];
        for z in zooms {
            for l in 1..=hyper.layers {
                shapes.push((format!("z{z}.gat{l}.w"), h, h));
                shapes.push((format!("z{z}.gat{l}.a"), 2 * h, 1));
            }
        }
        for z in zooms {
            shapes.push((format!("z{z}.fuse.w"), h, h));
        }
        shapes.push(("q".into(), h, 1));
        shapes.push(("w_out".into(), h, 1));
        shapes.push(("bias".into(), 1, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut blocks = Vec::new();
        let mut values = Vec::new();
        for (name, rows, cols) in shapes {
            let offset = values.len();
            let fan_in = rows.max(1) as f64;
            let bound = 1.0 / fan_in.sqrt();
            for _ in 0..rows * cols {
                values.push(if name == "bias" { 0.0 } else { rng.random_range(-bound..=bound) });
            }
            blocks.push(Block { name, rows, cols, offset });
        }
        Ok(HrGatParams { hyper, zooms: zooms.to_vec(), n_features, blocks, values, y_shift: 0.0, y_scale: 1.0 })
    }

    pub fn block(&self, name: &str) -> &Block {
        self.blocks.iter().find(|b| b.name == name).unwrap_or_else(|| panic!("no parameter block {name}"))
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        &self.values[self.block(name).range()]
    }

    pub fn matrix(&self, name: &str) -> DenseMatrix {
        let b = self.block(name);
        DenseMatrix::from_vec(b.rows, b.cols, self.values[b.range()].to_vec()).expect("block shape")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes `params.bin` content (little-endian f64) to `bin` and the block
    /// manifest (`name,rows,cols,offset`) to `manifest`.
    pub fn write_checkpoint<B: Write, M: Write>(&self, mut bin: B, manifest: M) -> std::io::Result<()> {
        for v in &self.values {
            bin.write_all(&v.to_le_bytes())?;
        }
        let mut m = csv::Writer::from_writer(manifest);
        m.write_record(["name", "rows", "cols", "offset"])?;
        for b in &self.blocks {
            m.write_record([b.name.clone(), b.rows.to_string(), b.cols.to_string(), b.offset.to_string()])?;
        }
        m.flush()
    }

    /// Restores values written by [`write_checkpoint`](Self::write_checkpoint)
    /// into parameters of matching layout.
    pub fn read_values<B: Read>(&mut self, mut bin: B) -> Result<()> {
        let mut bytes = Vec::new();
        bin.read_to_end(&mut bytes).map_err(|e| Error::Data { path: "params.bin".into(), message: e.to_string() })?;
        if bytes.len() != 8 * self.values.len() {
            return Err(Error::Shape(format!("checkpoint has {} bytes, expected {}", bytes.len(), 8 * self.values.len())));
        }
        for (v, c) in self.values.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("checkpoint values".into()));
        }
        Ok(())
    }
}

/// Row-sorted neighborhoods with self-loops and log structural weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    ptr: Vec<usize>,
    col: Vec<usize>,
    ln_w: Vec<f64>,
}

impl Neighborhoods {
    /// `edges` are undirected `(i, j, w)` with `w ∈ (0, 1]`; every node also
    /// gets a self-loop of weight 1.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!("bad edge ({i}, {j}) for {n} nodes")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("edge weight {w} must be positive")));
            }
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
        let mut ptr = vec![0];
        let mut col = Vec::new();
        let mut ln_w = Vec::new();
        for mut r in rows {
            r.sort_by_key(|&(j, _)| j);
            for (j, w) in r {
                col.push(j);
                ln_w.push(w.ln());
            }
            ptr.push(col.len());
        }
        Ok(Neighborhoods { ptr, col, ln_w })
    }

    pub fn n(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.ptr[i]..self.ptr[i + 1]
    }

    pub fn col(&self, e: usize) -> usize {
        self.col[e]
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    /// Local neighborhoods of `nodes` (sorted), renumbered by position.
    pub fn induced(&self, nodes: &[usize]) -> Neighborhoods {
        let pos = |j: usize| nodes.binary_search(&j).ok();
        let mut ptr = vec![0];
        let mut col = Vec::new();
        let mut ln_w = Vec::new();
        for &i in nodes {
            for e in self.range(i) {
                if let Some(p) = pos(self.col[e]) {
                    col.push(p);
                    ln_w.push(self.ln_w[e]);
                }
            }
            ptr.push(col.len());
        }
        Neighborhoods { ptr, col, ln_w }
    }

    /// Nodes within `hops` steps of `center`, sorted.
    pub fn ball(&self, center: usize, hops: usize) -> Vec<usize> {
        let mut seen = BTreeSet::from([center]);
        let mut frontier = vec![center];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &i in &frontier {
                for e in self.range(i) {
                    if seen.insert(self.col[e]) {
                        next.push(self.col[e]);
                    }
                }
            }
            frontier = next;
        }
        seen.into_iter().collect()
    }
}

/// One zoom level's model input.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelInput {
    pub zoom: u8,
    pub x: DenseMatrix,
    pub nbrs: Neighborhoods,
}

/// Everything the model reads: per-level features and neighborhoods (coarse
/// to fine), the ancestor of each finest-level node at every level, and the
/// finest-level edges used by the smoothness penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub levels: Vec<LevelInput>,
    pub ancestors: Vec<Vec<Option<usize>>>,
    pub smooth_edges: Vec<(usize, usize)>,
}

impl GraphInput {
    /// Pairs each graph level with the table layer of the same zoom.
    pub fn new(graph: &HierGraph, table: &FeatureTable) -> Result<Self> {
        let mut levels = Vec::new();
        for (li, gl) in graph.levels.iter().enumerate() {
            let layer = table
                .layer(gl.zoom)
                .ok_or_else(|| Error::Shape(format!("feature table has no zoom-{} layer", gl.zoom)))?;
            if layer.tiles != gl.tiles {
                return Err(Error::TileMismatch(format!("zoom {} tiles differ between graph and table", gl.zoom)));
            }
            let nbrs = Neighborhoods::new(gl.tiles.len(), &graph.level_edges(li))?;
            levels.push(LevelInput { zoom: gl.zoom, x: layer.x.clone(), nbrs });
        }
        let fine = graph.levels.len() - 1;
        let smooth_edges = graph.level_edges(fine).into_iter().map(|(i, j, _)| (i, j)).collect();
        Ok(GraphInput { levels, ancestors: graph.ancestor_table(), smooth_edges })
    }

    pub fn zooms(&self) -> Vec<u8> {
        self.levels.iter().map(|l| l.zoom).collect()
    }

    pub fn n_fine(&self) -> usize {
        self.levels.last().map_or(0, |l| l.x.rows())
    }

    pub fn n_features(&self) -> usize {
        self.levels.last().map_or(0, |l| l.x.cols())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_fine();
        let d = self.n_features();
        if self.ancestors.len() != self.levels.len() {
            return Err(Error::Shape("ancestor table does not match levels".into()));
        }
        for (l, a) in self.levels.iter().zip(&self.ancestors) {
            if l.x.cols() != d || l.nbrs.n() != l.x.rows() || a.len() != n {
                return Err(Error::Shape(format!("zoom-{} input shapes are inconsistent", l.zoom)));
            }
            if a.iter().flatten().any(|&k| k >= l.x.rows()) {
                return Err(Error::Shape(format!("zoom-{} ancestor index out of range", l.zoom)));
            }
            if !l.x.is_finite() {
                return Err(Error::NonFinite(format!("zoom-{} features", l.zoom)));
            }
        }
        if self.smooth_edges.iter().any(|&(i, j)| i >= n || j >= n) {
            return Err(Error::Shape("smoothness edge out of range".into()));
        }
        Ok(())
    }
}
