use std::io::Write;

use serde::Serialize;

use super::model::{backward, forward_cached};
use super::{GraphInput, HrGatParams};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub spatial: f64,
}

/// Loss per epoch; entry `e` is evaluated before the `e`-th update, and the
/// last entry after the final update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub rows: Vec<LossParts>,
}

impl LossTrace {
    pub fn first(&self) -> Option<&LossParts> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&LossParts> {
        self.rows.last()
    }

    /// `epoch,total,mse,spatial`
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "total", "mse", "spatial"])?;
        for (e, r) in self.rows.iter().enumerate() {
            out.write_record([e.to_string(), format!("{:e}", r.total), format!("{:e}", r.mse), format!("{:e}", r.spatial)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Masked mean squared error plus `lambda` times the mean squared difference
/// of predictions across `edges`. Returns the loss and its derivative with
/// respect to each prediction.
pub fn loss(
    yhat: &[f64],
    y: &[f64],
    mask: &[bool],
    edges: &[(usize, usize)],
    lambda: f64,
) -> Result<(LossParts, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    if y.len() != yhat.len() || mask.len() != yhat.len() {
        return Err(Error::Shape(format!("{} predictions, {} targets, {} mask flags", yhat.len(), y.len(), mask.len())));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Empty("training mask"));
    }
    let mut d = vec![0.0; yhat.len()];
    let mut mse = 0.0;
    for i in 0..yhat.len() {
        if mask[i] {
            let r = yhat[i] - y[i];
            mse += r * r;
            d[i] = 2.0 * r / n as f64;
        }
    }
    mse /= n as f64;
    let mut spatial = 0.0;
    if !edges.is_empty() {
        let m = edges.len() as f64;
        for &(i, j) in edges {
            let r = yhat[i] - yhat[j];
            spatial += r * r;
            d[i] += lambda * 2.0 * r / m;
            d[j] -= lambda * 2.0 * r / m;
        }
        spatial /= m;
    }
    Ok((LossParts { total: mse + lambda * spatial, mse, spatial }, d))
}

/// Training loss and its gradient in the flat parameter layout. Targets are
/// compared in the model's standardized units.
pub fn gradient(p: &HrGatParams, input: &GraphInput, y: &[f64], mask: &[bool]) -> Result<(LossParts, Vec<f64>)> {
    let cache = forward_cached(p, input)?;
    let ys: Vec<f64> = y.iter().map(|v| (v - p.y_shift) / p.y_scale).collect();
    let (parts, d) = loss(&cache.raw, &ys, mask, &input.smooth_edges, p.hyper.lambda)?;
    Ok((parts, backward(p, input, &cache, &d)))
}

/// Full-batch gradient descent for `hyper.epochs` epochs.
///
/// The target shift and scale are set from the masked targets first, so the
/// loss trace is in standardized units.
pub fn train(mut p: HrGatParams, input: &GraphInput, y: &[f64], mask: &[bool]) -> Result<(HrGatParams, LossTrace)> {
    p.hyper.validate()?;
    let ym: Vec<f64> = y.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    if ym.is_empty() {
        return Err(Error::Empty("training mask"));
    }
    if ym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training targets".into()));
    }
    p.y_shift = stats::mean(&ym);
    let sd = stats::variance(&ym).sqrt();
    p.y_scale = if sd > 0.0 { sd } else { 1.0 };
    let lr = p.hyper.lr;
    let mut trace = LossTrace::default();
    for epoch in 0..=p.hyper.epochs {
        let (parts, g) = gradient(&p, input, y, mask).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
            e => e,
        })?;
        if !parts.total.is_finite() {
            return Err(Error::Diverged { epoch, loss: parts.total });
        }
        trace.rows.push(parts);
        if epoch == p.hyper.epochs {
            break;
        }
        for (v, g) in p.values.iter_mut().zip(&g) {
            *v -= lr * g;
        }
        if !p.is_finite() {
            return Err(Error::Diverged { epoch, loss: parts.total });
        }
    }
    log::debug!("trained {} epochs, loss {:?} -> {:?}", p.hyper.epochs, trace.first(), trace.last());
    Ok((p, trace))
}
