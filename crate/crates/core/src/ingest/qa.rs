//! Post-aggregation quality rules applied per input family.

use serde::{Deserialize, Serialize};

use crate::geotile::{neighbors8, TileUniverse};
use crate::stats;

/// A zero tile with at least this many nonzero 8-neighbors is a gap.
pub const GAP_MIN_NONZERO_NEIGHBORS: usize = 6;
/// Shape-derived values above this percentile are clipped to it.
pub const OUTLIER_PERCENTILE: f64 = 99.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaKind {
    Points,
    PolygonMetric,
    PolygonShape,
    /// Pre-extracted tile columns: only non-finite values are zeroed.
    TileColumn,
}

/// Applies the family-specific rules. Non-finite inputs become zero first.
///
/// Gap filling reads the original field, so the result does not depend on
/// tile order.
pub fn qa_pipeline(values: &[f64], universe: &TileUniverse, kind: QaKind) -> Vec<f64> {
    let clean: Vec<f64> = values.iter().map(|&v| if v.is_finite() { v } else { 0.0 }).collect();
    match kind {
        QaKind::Points | QaKind::PolygonMetric => fill_isolated_gaps(&clean, universe),
        QaKind::PolygonShape => clip_upper(&clean, OUTLIER_PERCENTILE),
        QaKind::TileColumn => clean,
    }
}

fn fill_isolated_gaps(values: &[f64], universe: &TileUniverse) -> Vec<f64> {
    let mut out = values.to_vec();
    for (i, t) in universe.tiles().iter().enumerate() {
        if values[i] != 0.0 {
            continue;
        }
        let nb: Vec<f64> = neighbors8(*t).iter().filter_map(|n| universe.index_of(n)).map(|j| values[j]).collect();
        if nb.iter().filter(|&&v| v != 0.0).count() >= GAP_MIN_NONZERO_NEIGHBORS {
            out[i] = stats::mean(&nb);
        }
    }
    out
}

fn clip_upper(values: &[f64], q: f64) -> Vec<f64> {
    match stats::percentile(values, q) {
        Some(cap) => values.iter().map(|&v| v.min(cap)).collect(),
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geotile::TileId;

    fn grid(w: u32, h: u32) -> TileUniverse {
        let tiles: Vec<TileId> =
            (0..h).flat_map(|y| (0..w).map(move |x| TileId::new(15, 5000 + x, 7000 + y).unwrap())).collect();
        TileUniverse::new(&tiles).unwrap()
    }

    #[test]
    fn nonzero_field_unchanged() {
        let u = grid(4, 4);
        let v: Vec<f64> = (1..=16).map(f64::from).collect();
        assert_eq!(qa_pipeline(&v, &u, QaKind::Points), v);
        assert_eq!(qa_pipeline(&v, &u, QaKind::PolygonMetric), v);
    }

    #[test]
    fn isolated_gap_filled_with_neighbor_mean() {
        let u = grid(3, 3);
        let mut v = vec![4.0; 9];
        v[4] = 0.0;
        let out = qa_pipeline(&v, &u, QaKind::Points);
        assert_eq!(out[4], 4.0);
    }

    #[test]
    fn sparse_zeros_not_filled() {
        let u = grid(3, 3);
        let mut v = vec![0.0; 9];
        v[0] = 5.0;
        v[1] = 5.0;
        assert_eq!(qa_pipeline(&v, &u, QaKind::Points), v);
        // corner tile has only 3 neighbors and never qualifies
        let mut v = vec![2.0; 9];
        v[0] = 0.0;
        assert_eq!(qa_pipeline(&v, &u, QaKind::Points)[0], 0.0);
    }

    #[test]
    fn outlier_clipped_to_bulk() {
        let n = 2001;
        let tiles: Vec<TileId> = (0..n).map(|i| TileId::new(15, i, 0).unwrap()).collect();
        let u = TileUniverse::new(&tiles).unwrap();
        let mut v: Vec<f64> = (0..n).map(|i| f64::from(i % 11)).collect();
        v[17] = 1e6;
        let bulk_max = 10.0;
        // oracle: sort, take the linearly interpolated 99.9th order statistic
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.999 * (n - 1) as f64;
        let cap = sorted[pos.floor() as usize] + pos.fract() * (sorted[pos.ceil() as usize] - sorted[pos.floor() as usize]);
        let out = qa_pipeline(&v, &u, QaKind::PolygonShape);
        assert_eq!(out[17], cap);
        assert!(out[17] <= bulk_max);
    }

    #[test]
    fn non_finite_zeroed() {
        let u = grid(2, 1);
        let out = qa_pipeline(&[f64::NAN, f64::INFINITY], &u, QaKind::TileColumn);
        assert_eq!(out, vec![0.0, 0.0]);
    }
}
