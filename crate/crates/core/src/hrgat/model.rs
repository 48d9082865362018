use super::{dot, DenseMatrix, GraphInput, HrGatParams, Neighborhoods, Prediction};
use crate::error::{Error, Result};

#[inline]
fn lrelu(x: f64, s: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        s * x
    }
}

#[inline]
fn lrelu_d(x: f64, s: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        s
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

struct LayerCache {
    h_in: DenseMatrix,
    g: DenseMatrix,
    pre: Vec<f64>,
    alpha: Vec<f64>,
    m: DenseMatrix,
}

struct LevelCache {
    layers: Vec<LayerCache>,
    out: DenseMatrix,
}

pub(crate) struct ForwardCache {
    levels: Vec<LevelCache>,
    u: Vec<DenseMatrix>,
    fusion: DenseMatrix,
    hf: DenseMatrix,
    /// Output head before the target shift and scale.
    pub(crate) raw: Vec<f64>,
}

fn check(params: &HrGatParams, input: &GraphInput) -> Result<()> {
    input.validate()?;
    if params.zooms != input.zooms() {
        return Err(Error::Shape(format!("model zooms {:?} but input zooms {:?}", params.zooms, input.zooms())));
    }
    if params.n_features != input.n_features() {
        return Err(Error::Shape(format!("model expects {} features, input has {}", params.n_features, input.n_features())));
    }
    Ok(())
}

fn level_forward(p: &HrGatParams, li: usize, x: &DenseMatrix, nbrs: &Neighborhoods) -> Result<LevelCache> {
    let zoom = p.zooms[li];
    let s = p.hyper.slope;
    let hd = p.hyper.hidden;
    let mut h = x.matmul(&p.matrix("w_in"));
    if !h.is_finite() {
        return Err(Error::NonFinite(format!("zoom-{zoom} input embedding")));
    }
    let mut layers = Vec::with_capacity(p.hyper.layers);
    for l in 1..=p.hyper.layers {
        let w = p.matrix(&format!("z{zoom}.gat{l}.w"));
        let a = p.slice(&format!("z{zoom}.gat{l}.a"));
        let g = h.matmul(&w);
        let n = g.rows();
        let src: Vec<f64> = (0..n).map(|i| dot(g.row(i), &a[..hd])).collect();
        let dst: Vec<f64> = (0..n).map(|i| dot(g.row(i), &a[hd..])).collect();
        let mut pre = vec![0.0; nbrs.nnz()];
        let mut alpha = vec![0.0; nbrs.nnz()];
        let mut m = DenseMatrix::zeros(n, hd);
        for i in 0..n {
            let r = nbrs.range(i);
            let mut top = f64::NEG_INFINITY;
            for e in r.clone() {
                pre[e] = src[i] + dst[nbrs.col(e)];
                alpha[e] = lrelu(pre[e], s) + nbrs.ln_w[e];
                top = top.max(alpha[e]);
            }
            let mut z = 0.0;
            for e in r.clone() {
                alpha[e] = (alpha[e] - top).exp();
                z += alpha[e];
            }
            let mi = m.row_mut(i);
            for e in r {
                alpha[e] /= z;
                axpy(mi, alpha[e], g.row(nbrs.col(e)));
            }
        }
        let mut out = m.clone();
        out.data_mut().iter_mut().for_each(|v| *v = lrelu(*v, s));
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("zoom-{zoom} GAT layer {l}")));
        }
        layers.push(LayerCache { h_in: h, g, pre, alpha, m });
        h = out;
    }
    Ok(LevelCache { layers, out: h })
}

struct Fused {
    raw: f64,
    alpha: Vec<f64>,
    u: Vec<Option<Vec<f64>>>,
    hf: Vec<f64>,
}

/// Gates the available per-level embeddings of one finest-level node.
fn fuse_one(p: &HrGatParams, wz: &[DenseMatrix], hs: &[Option<&[f64]>]) -> Fused {
    let hd = p.hyper.hidden;
    let q = p.slice("q");
    let mut u = vec![None; hs.len()];
    let mut score = vec![f64::NEG_INFINITY; hs.len()];
    for (li, h) in hs.iter().enumerate() {
        if let Some(h) = h {
            let mut v = vec![0.0; hd];
            for (a, &ha) in h.iter().enumerate() {
                axpy(&mut v, ha, wz[li].row(a));
            }
            v.iter_mut().for_each(|x| *x = x.tanh());
            score[li] = dot(q, &v);
            u[li] = Some(v);
        }
    }
    let top = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha: Vec<f64> = score.iter().map(|&s| if s.is_finite() { (s - top).exp() } else { 0.0 }).collect();
    let z: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= z);
    let mut hf = vec![0.0; hd];
    for (li, h) in hs.iter().enumerate() {
        if let Some(h) = h {
            axpy(&mut hf, alpha[li], h);
        }
    }
    let raw = dot(&hf, p.slice("w_out")) + p.slice("bias")[0];
    Fused { raw, alpha, u, hf }
}

fn fusion_weights(p: &HrGatParams) -> Vec<DenseMatrix> {
    p.zooms.iter().map(|z| p.matrix(&format!("z{z}.fuse.w"))).collect()
}

pub(crate) fn forward_cached(p: &HrGatParams, input: &GraphInput) -> Result<ForwardCache> {
    check(p, input)?;
    let levels = input
        .levels
        .iter()
        .enumerate()
        .map(|(li, l)| level_forward(p, li, &l.x, &l.nbrs))
        .collect::<Result<Vec<_>>>()?;
    let nl = levels.len();
    let n = input.n_fine();
    let hd = p.hyper.hidden;
    let wz = fusion_weights(p);
    let mut u = vec![DenseMatrix::zeros(n, hd); nl];
    let mut fusion = DenseMatrix::zeros(n, nl);
    let mut hf = DenseMatrix::zeros(n, hd);
    let mut raw = vec![0.0; n];
    for k in 0..n {
        let hs: Vec<Option<&[f64]>> =
            (0..nl).map(|li| input.ancestors[li][k].map(|a| levels[li].out.row(a))).collect();
        let f = fuse_one(p, &wz, &hs);
        for li in 0..nl {
            if let Some(v) = &f.u[li] {
                u[li].row_mut(k).copy_from_slice(v);
            }
            fusion.set(k, li, f.alpha[li]);
        }
        hf.row_mut(k).copy_from_slice(&f.hf);
        raw[k] = f.raw;
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("output head".into()));
    }
    Ok(ForwardCache { levels, u, fusion, hf, raw })
}

/// Predictions for every finest-level node.
pub fn forward(p: &HrGatParams, input: &GraphInput) -> Result<Prediction> {
    let c = forward_cached(p, input)?;
    Ok(Prediction {
        yhat: c.raw.iter().map(|r| p.y_shift + p.y_scale * r).collect(),
        zooms: p.zooms.clone(),
        fusion: c.fusion,
    })
}

/// Final embeddings of every level.
pub fn level_embeddings(p: &HrGatParams, input: &GraphInput) -> Result<Vec<DenseMatrix>> {
    check(p, input)?;
    input
        .levels
        .iter()
        .enumerate()
        .map(|(li, l)| level_forward(p, li, &l.x, &l.nbrs).map(|c| c.out))
        .collect()
}

/// Reverse pass: gradient of a scalar objective with respect to every
/// parameter, given its derivative with respect to the raw outputs.
pub(crate) fn backward(p: &HrGatParams, input: &GraphInput, c: &ForwardCache, d_raw: &[f64]) -> Vec<f64> {
    let hd = p.hyper.hidden;
    let s = p.hyper.slope;
    let nl = c.levels.len();
    let mut grad = vec![0.0; p.values.len()];
    let wz = fusion_weights(p);
    let w_out = p.slice("w_out").to_vec();
    let q = p.slice("q").to_vec();
    let r_wout = p.block("w_out").range();
    let r_bias = p.block("bias").offset;
    let r_q = p.block("q").range();
    let r_wz: Vec<_> = p.zooms.iter().map(|z| p.block(&format!("z{z}.fuse.w")).range()).collect();

    let mut d_out: Vec<DenseMatrix> = c.levels.iter().map(|l| DenseMatrix::zeros(l.out.rows(), hd)).collect();
    let mut dhf = vec![0.0; hd];
    let mut dpre = vec![0.0; hd];
    for (k, &dz) in d_raw.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        let hf = c.hf.row(k);
        axpy(&mut grad[r_wout.clone()], dz, hf);
        grad[r_bias] += dz;
        dhf.iter_mut().zip(&w_out).for_each(|(d, w)| *d = dz * w);
        let alpha = c.fusion.row(k);
        let mut dalpha = vec![0.0; nl];
        for li in 0..nl {
            if let Some(a) = input.ancestors[li][k] {
                dalpha[li] = dot(&dhf, c.levels[li].out.row(a));
                axpy(d_out[li].row_mut(a), alpha[li], &dhf);
            }
        }
        let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
        for li in 0..nl {
            let Some(a) = input.ancestors[li][k] else { continue };
            let dscore = alpha[li] * (dalpha[li] - mean);
            if dscore == 0.0 {
                continue;
            }
            let u = c.u[li].row(k);
            axpy(&mut grad[r_q.clone()], dscore, u);
            for j in 0..hd {
                dpre[j] = dscore * q[j] * (1.0 - u[j] * u[j]);
            }
            let h = c.levels[li].out.row(a);
            let gw = &mut grad[r_wz[li].clone()];
            for (ai, &ha) in h.iter().enumerate() {
                axpy(&mut gw[ai * hd..(ai + 1) * hd], ha, &dpre);
            }
            let dh = d_out[li].row_mut(a);
            for (ai, d) in dh.iter_mut().enumerate() {
                *d += dot(wz[li].row(ai), &dpre);
            }
        }
    }

    let r_win = p.block("w_in").range();
    for (li, level) in c.levels.iter().enumerate() {
        let zoom = p.zooms[li];
        let nbrs = &input.levels[li].nbrs;
        let mut dh = std::mem::replace(&mut d_out[li], DenseMatrix::zeros(0, 0));
        for (l, lc) in level.layers.iter().enumerate().rev() {
            let name = format!("z{zoom}.gat{}", l + 1);
            let w = p.matrix(&format!("{name}.w"));
            let a = p.slice(&format!("{name}.a"));
            let n = lc.g.rows();
            let mut dm = dh;
            for (d, &m) in dm.data_mut().iter_mut().zip(lc.m.data()) {
                *d *= lrelu_d(m, s);
            }
            let mut dg = DenseMatrix::zeros(n, hd);
            let mut dsrc = vec![0.0; n];
            let mut ddst = vec![0.0; n];
            let mut da = Vec::new();
            for i in 0..n {
                let r = nbrs.range(i);
                da.clear();
                let dmi = dm.row(i);
                for e in r.clone() {
                    let j = nbrs.col(e);
                    da.push(dot(dmi, lc.g.row(j)));
                    axpy(dg.row_mut(j), lc.alpha[e], dmi);
                }
                let mean: f64 = r.clone().zip(&da).map(|(e, d)| lc.alpha[e] * d).sum();
                for (e, d) in r.zip(&da) {
                    let de = lc.alpha[e] * (d - mean) * lrelu_d(lc.pre[e], s);
                    dsrc[i] += de;
                    ddst[nbrs.col(e)] += de;
                }
            }
            let r_a = p.block(&format!("{name}.a")).range();
            let ga = &mut grad[r_a];
            for i in 0..n {
                let gi = lc.g.row(i);
                axpy(&mut ga[..hd], dsrc[i], gi);
                axpy(&mut ga[hd..], ddst[i], gi);
                let dgi = dg.row_mut(i);
                axpy(dgi, dsrc[i], &a[..hd]);
                axpy(dgi, ddst[i], &a[hd..]);
            }
            let gw = lc.h_in.t_matmul(&dg);
            let r_w = p.block(&format!("{name}.w")).range();
            axpy(&mut grad[r_w], 1.0, gw.data());
            dh = dg.matmul_t(&w);
        }
        let gin = input.levels[li].x.t_matmul(&dh);
        axpy(&mut grad[r_win.clone()], 1.0, gin.data());
    }
    grad
}

/// Re-evaluates one finest-level node after replacing its own feature row,
/// holding every other input fixed. Only the node's L-hop neighborhood at the
/// finest level is recomputed; coarser embeddings come from a cache.
pub struct LocalEvaluator<'a> {
    params: &'a HrGatParams,
    nbrs: Neighborhoods,
    x: DenseMatrix,
    center: usize,
    coarse: Vec<Option<Vec<f64>>>,
    wz: Vec<DenseMatrix>,
}

impl<'a> LocalEvaluator<'a> {
    /// `embeddings` are the per-level outputs of [`level_embeddings`].
    pub fn new(params: &'a HrGatParams, input: &GraphInput, embeddings: &[DenseMatrix], node: usize) -> Result<Self> {
        let fine = input.levels.last().ok_or(Error::Empty("model levels"))?;
        if node >= fine.x.rows() {
            return Err(Error::Unknown { kind: "node", name: node.to_string() });
        }
        let nl = input.levels.len();
        let ball = fine.nbrs.ball(node, params.hyper.layers);
        let center = ball.binary_search(&node).expect("ball contains its center");
        let coarse = (0..nl - 1).map(|li| input.ancestors[li][node].map(|a| embeddings[li].row(a).to_vec())).collect();
        Ok(LocalEvaluator {
            params,
            nbrs: fine.nbrs.induced(&ball),
            x: fine.x.select_rows(&ball),
            center,
            coarse,
            wz: fusion_weights(params),
        })
    }

    pub fn row(&self) -> &[f64] {
        self.x.row(self.center)
    }

    /// Prediction for the node with its feature row replaced by `row`.
    pub fn eval(&self, row: &[f64]) -> Result<f64> {
        let p = self.params;
        let mut x = self.x.clone();
        x.row_mut(self.center).copy_from_slice(row);
        let nl = p.zooms.len();
        let out = level_forward(p, nl - 1, &x, &self.nbrs)?.out;
        let mut hs: Vec<Option<&[f64]>> = self.coarse.iter().map(|c| c.as_deref()).collect();
        hs.push(Some(out.row(self.center)));
        Ok(p.y_shift + p.y_scale * fuse_one(p, &self.wz, &hs).raw)
    }
}

#[cfg(test)]
impl ForwardCache {
    pub(crate) fn levels_alpha(&self, li: usize) -> Vec<Vec<f64>> {
        self.levels[li].layers.iter().map(|l| l.alpha.clone()).collect()
    }
}
