use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, DenseMatrix, Hyper};
use crate::error::{Error, Result};
use crate::stats;

const RIDGE: f64 = 1e-8;

/// Ordinary least squares on per-tile features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &DenseMatrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.intercept + dot(x.row(i), &self.coef)).collect()
    }
}

fn masked_rows(x: &DenseMatrix, y: &[f64], mask: &[bool]) -> Result<Vec<usize>> {
    if y.len() != x.rows() || mask.len() != x.rows() {
        return Err(Error::Shape(format!("{} rows, {} targets, {} mask flags", x.rows(), y.len(), mask.len())));
    }
    let rows: Vec<usize> = (0..x.rows()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::Empty("training mask"));
    }
    Ok(rows)
}

/// Cholesky solve of a symmetric positive definite system, in place.
fn cholesky_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if !(s > 0.0) {
            return None;
        }
        let l = s.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i * n + k] * b[k];
        }
        b[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= a[k * n + i] * b[k];
        }
        b[i] /= a[i * n + i];
    }
    Some(b)
}

/// Least squares via the normal equations of the centered data with a
/// `1e-8` ridge on the slopes; the intercept is not penalized.
pub fn fit_linear(x: &DenseMatrix, y: &[f64], mask: &[bool]) -> Result<LinearModel> {
    let rows = masked_rows(x, y, mask)?;
    let d = x.cols();
    let n = rows.len() as f64;
    let mut xm = vec![0.0; d];
    for &i in &rows {
        for (m, v) in xm.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let ym = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut c = vec![0.0; d];
    for &i in &rows {
        for (k, v) in c.iter_mut().enumerate() {
            *v = x.get(i, k) - xm[k];
        }
        let r = y[i] - ym;
        for p in 0..d {
            b[p] += c[p] * r;
            for q in 0..=p {
                a[p * d + q] += c[p] * c[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            a[q * d + p] = a[p * d + q];
        }
        a[p * d + p] += RIDGE;
    }
    let coef = cholesky_solve(a, b).ok_or_else(|| Error::Degenerate("normal equations are singular".into()))?;
    let intercept = ym - dot(&xm, &coef);
    Ok(LinearModel { coef, intercept })
}

/// Per-tile two-hidden-layer perceptron; no spatial context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
    pub slope: f64,
    pub y_shift: f64,
    pub y_scale: f64,
}

struct MlpPass {
    z1: DenseMatrix,
    a1: DenseMatrix,
    z2: DenseMatrix,
    a2: DenseMatrix,
    out: Vec<f64>,
}

fn dense(x: &DenseMatrix, w: &DenseMatrix, b: &[f64], slope: f64) -> (DenseMatrix, DenseMatrix) {
    let mut z = x.matmul(w);
    for i in 0..z.rows() {
        z.row_mut(i).iter_mut().zip(b).for_each(|(v, b)| *v += b);
    }
    let mut a = z.clone();
    a.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    (z, a)
}

impl MlpModel {
    fn pass(&self, x: &DenseMatrix) -> MlpPass {
        let (z1, a1) = dense(x, &self.w1, &self.b1, self.slope);
        let (z2, a2) = dense(&a1, &self.w2, &self.b2, self.slope);
        let out = (0..a2.rows()).map(|i| dot(a2.row(i), &self.w3) + self.b3).collect();
        MlpPass { z1, a1, z2, a2, out }
    }

    pub fn predict(&self, x: &DenseMatrix) -> Vec<f64> {
        self.pass(x).out.into_iter().map(|r| self.y_shift + self.y_scale * r).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("shape")
}

/// Full-batch gradient descent on the masked squared error, with the same
/// width, slope, learning rate, epochs and seed conventions as the graph
/// model.
pub fn fit_mlp(x: &DenseMatrix, y: &[f64], mask: &[bool], hyper: &Hyper) -> Result<MlpModel> {
    hyper.validate()?;
    let rows = masked_rows(x, y, mask)?;
    let h = hyper.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let xt = x.select_rows(&rows);
    let yt: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let sd = stats::variance(&yt).sqrt();
    let mut m = MlpModel {
        w1: uniform(&mut rng, x.cols(), h),
        b1: vec![0.0; h],
        w2: uniform(&mut rng, h, h),
        b2: vec![0.0; h],
        w3: uniform(&mut rng, h, 1).into_data(),
        b3: 0.0,
        slope: hyper.slope,
        y_shift: stats::mean(&yt),
        y_scale: if sd > 0.0 { sd } else { 1.0 },
    };
    let ys: Vec<f64> = yt.iter().map(|v| (v - m.y_shift) / m.y_scale).collect();
    let n = rows.len() as f64;
    let lr = hyper.lr;
    for epoch in 0..hyper.epochs {
        let f = m.pass(&xt);
        let d_out: Vec<f64> = f.out.iter().zip(&ys).map(|(o, y)| 2.0 * (o - y) / n).collect();
        let mut dz2 = DenseMatrix::zeros(f.a2.rows(), h);
        for (i, &d) in d_out.iter().enumerate() {
            for (k, v) in dz2.row_mut(i).iter_mut().enumerate() {
                *v = d * m.w3[k] * if f.z2.get(i, k) > 0.0 { 1.0 } else { m.slope };
            }
        }
        let gw3: Vec<f64> = (0..h).map(|k| (0..f.a2.rows()).map(|i| d_out[i] * f.a2.get(i, k)).sum()).collect();
        let gb3: f64 = d_out.iter().sum();
        let gw2 = f.a1.t_matmul(&dz2);
        let gb2: Vec<f64> = (0..h).map(|k| dz2.column(k).iter().sum()).collect();
        let mut dz1 = dz2.matmul_t(&m.w2);
        for (v, &z) in dz1.data_mut().iter_mut().zip(f.z1.data()) {
            if z <= 0.0 {
                *v *= m.slope;
            }
        }
        let gw1 = xt.t_matmul(&dz1);
        let gb1: Vec<f64> = (0..h).map(|k| dz1.column(k).iter().sum()).collect();
        m.w1.add_scaled(&gw1, -lr);
        m.w2.add_scaled(&gw2, -lr);
        m.b1.iter_mut().zip(&gb1).for_each(|(b, g)| *b -= lr * g);
        m.b2.iter_mut().zip(&gb2).for_each(|(b, g)| *b -= lr * g);
        m.w3.iter_mut().zip(&gw3).for_each(|(w, g)| *w -= lr * g);
        m.b3 -= lr * gb3;
        if !(m.w1.is_finite() && m.w2.is_finite() && m.b3.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
    }
    Ok(m)
}
