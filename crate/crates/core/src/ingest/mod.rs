//! Harmonization of heterogeneous geospatial inputs onto the zoom-15 grid
//! and assembly of the multi-zoom [`FeatureTable`].
//!
//! Three input families are supported, each with its own quality rules
//! (see [`qa`]):
//!
//! * point datasets, summed per tile after per-tile deduplication;
//! * polygons carrying a metric, spread over tiles by intersection area;
//! * polygons or polylines without a metric, from which counts, clipped
//!   lengths, clipped areas and densities are derived.
//!
//! Pre-extracted per-tile columns (e.g. night-time light intensity) enter
//! directly.

pub mod geometry;
pub mod qa;
mod table;

use std::collections::{HashMap, HashSet};

use geo_types::{Geometry, Polygon};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{GeoPoint, TileId, TileUniverse};
use geometry::{clip_segment, polygons, repair_polygon, segment_length_m, to_unit, Rect, UnitPolygon};

pub use qa::{qa_pipeline, QaKind};
pub(crate) use table::modal;
pub use table::{assemble, AggKind, FeatureColumn, FeatureTable, Standardizer, ZoomLayer};

#[derive(Debug, Clone, PartialEq)]
pub struct PointDataset {
    pub name: String,
    pub points: Vec<(GeoPoint, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdminLevel {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub zone_id: String,
    pub geometry: Geometry<f64>,
    /// `None` marks a missing value to be imputed from the parent zone.
    pub metric: Option<f64>,
    pub level: AdminLevel,
    pub parent_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonMetricDataset {
    pub name: String,
    pub zones: Vec<Zone>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMetric {
    Count,
    TotalLengthM,
    TotalAreaM2,
    Density,
}

impl ShapeMetric {
    pub fn suffix(&self) -> &'static str {
        match self {
            ShapeMetric::Count => "count",
            ShapeMetric::TotalLengthM => "length_m",
            ShapeMetric::TotalAreaM2 => "area_m2",
            ShapeMetric::Density => "density",
        }
    }

    pub fn agg(&self) -> AggKind {
        match self {
            ShapeMetric::Density => AggKind::Mean,
            _ => AggKind::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonShapeDataset {
    pub name: String,
    pub shapes: Vec<Geometry<f64>>,
}

impl PolygonShapeDataset {
    /// Metrics that make sense for the geometry types present.
    pub fn default_metrics(&self) -> Vec<ShapeMetric> {
        let has_area = self.shapes.iter().any(|g| !polygons(g).is_empty());
        if has_area {
            vec![ShapeMetric::Count, ShapeMetric::TotalAreaM2, ShapeMetric::Density]
        } else {
            vec![ShapeMetric::Count, ShapeMetric::TotalLengthM]
        }
    }
}

/// Per-tile values aligned with a tile universe, plus what was discarded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestOutcome {
    pub values: Vec<f64>,
    pub dropped: usize,
    pub duplicates: usize,
    pub imputed: usize,
}

/// Sums point weights per containing tile. Invalid coordinates or weights
/// are dropped; exact coordinate repeats inside a tile count once.
pub fn aggregate_points(ds: &PointDataset, universe: &TileUniverse) -> IngestOutcome {
    let mut out = IngestOutcome { values: vec![0.0; universe.len()], ..Default::default() };
    let mut seen: HashSet<(usize, u64, u64)> = HashSet::new();
    for &(p, w) in &ds.points {
        if !p.is_valid() || !(w.is_finite() && w >= 0.0) {
            out.dropped += 1;
            continue;
        }
        let Ok(tile) = TileId::containing(p, universe.zoom()) else {
            out.dropped += 1;
            continue;
        };
        let Some(i) = universe.index_of(&tile) else { continue };
        if !seen.insert((i, p.lat.to_bits(), p.lon.to_bits())) {
            out.duplicates += 1;
            continue;
        }
        out.values[i] += w;
    }
    if out.dropped > 0 {
        warn!("{}: dropped {} points with invalid coordinates or weights", ds.name, out.dropped);
    }
    out
}

fn zone_polygons(g: &Geometry<f64>) -> Option<Vec<UnitPolygon>> {
    let polys: Vec<&Polygon<f64>> = polygons(g);
    if polys.is_empty() {
        return None;
    }
    polys.into_iter().map(repair_polygon).collect()
}

/// Spreads each zone's metric over tiles in proportion to intersection area.
///
/// Lower-level zones with a missing metric inherit their parent's metric
/// scaled by the area ratio. When lower-level zones exist only they are
/// interpolated (upper zones only serve imputation); otherwise the upper
/// zones are. Zones that fail repair or have zero area are dropped.
pub fn interpolate_polygon_metric(ds: &PolygonMetricDataset, universe: &TileUniverse) -> IngestOutcome {
    let mut out = IngestOutcome { values: vec![0.0; universe.len()], ..Default::default() };
    let repaired: Vec<Option<(Vec<UnitPolygon>, f64)>> = ds
        .zones
        .iter()
        .map(|z| {
            zone_polygons(&z.geometry)
                .map(|p| {
                    let a = p.iter().map(UnitPolygon::area).sum::<f64>();
                    (p, a)
                })
                .filter(|(_, a)| *a > 0.0)
        })
        .collect();
    let by_id: HashMap<&str, usize> = ds.zones.iter().enumerate().map(|(i, z)| (z.zone_id.as_str(), i)).collect();
    let target_level =
        if ds.zones.iter().any(|z| z.level == AdminLevel::Lower) { AdminLevel::Lower } else { AdminLevel::Upper };

    for (zone, geom) in ds.zones.iter().zip(&repaired) {
        if zone.level != target_level {
            continue;
        }
        let Some((polys, area)) = geom else {
            warn!("{}: zone {} has no valid area, metric dropped", ds.name, zone.zone_id);
            out.dropped += 1;
            continue;
        };
        let metric = match zone.metric.filter(|m| m.is_finite()) {
            Some(m) => m,
            None => {
                let parent = zone
                    .parent_id
                    .as_deref()
                    .and_then(|id| by_id.get(id))
                    .and_then(|&j| Some((ds.zones[j].metric.filter(|m| m.is_finite())?, repaired[j].as_ref()?.1)));
                match parent {
                    Some((pm, pa)) => {
                        out.imputed += 1;
                        pm * area / pa
                    }
                    None => {
                        out.dropped += 1;
                        continue;
                    }
                }
            }
        };
        for poly in polys {
            for tile in poly.bbox().tiles(universe.zoom()) {
                let Some(i) = universe.index_of(&tile) else { continue };
                let a = poly.clipped_area(&Rect::of_tile(tile));
                if a > 0.0 {
                    out.values[i] += metric * a / area;
                }
            }
        }
    }
    out
}

/// Derives a per-tile metric from unattributed shapes.
///
/// Polygons are counted in the tile holding their centroid; lines are
/// counted in every tile they pass through. Lengths are geodesic lengths of
/// the clipped pieces; densities are covered fractions of the tile.
pub fn derive_shape_metrics(ds: &PolygonShapeDataset, universe: &TileUniverse, metric: ShapeMetric) -> IngestOutcome {
    let mut out = IngestOutcome { values: vec![0.0; universe.len()], ..Default::default() };
    let zoom = universe.zoom();
    for g in &ds.shapes {
        let polys = polygons(g);
        if !polys.is_empty() {
            for p in polys {
                let Some(up) = repair_polygon(p) else {
                    out.dropped += 1;
                    continue;
                };
                match metric {
                    ShapeMetric::Count => {
                        let c = geometry::unit_to_point(up.centroid());
                        if let Some(i) = TileId::containing(c, zoom).ok().and_then(|t| universe.index_of(&t)) {
                            out.values[i] += 1.0;
                        }
                    }
                    ShapeMetric::TotalAreaM2 | ShapeMetric::Density => {
                        for tile in up.bbox().tiles(zoom) {
                            let Some(i) = universe.index_of(&tile) else { continue };
                            let r = Rect::of_tile(tile);
                            let a = up.clipped_area(&r);
                            if a > 0.0 {
                                out.values[i] += if metric == ShapeMetric::Density {
                                    a / r.area()
                                } else {
                                    a * geometry::unit_area_scale(up.centroid())
                                };
                            }
                        }
                    }
                    ShapeMetric::TotalLengthM => {}
                }
            }
            continue;
        }
        let ls = geometry::lines(g);
        if ls.is_empty() {
            out.dropped += 1;
            continue;
        }
        for l in ls {
            if l.0.len() < 2 || l.0.iter().any(|c| !(c.x.is_finite() && c.y.is_finite())) {
                out.dropped += 1;
                continue;
            }
            let pts: Vec<_> = l.0.iter().map(|&c| to_unit(c)).collect();
            let mut touched: HashSet<usize> = HashSet::new();
            for w in pts.windows(2) {
                let seg = Rect { x0: w[0].0.min(w[1].0), y0: w[0].1.min(w[1].1), x1: w[0].0.max(w[1].0), y1: w[0].1.max(w[1].1) };
                for tile in seg.tiles(zoom) {
                    let Some(i) = universe.index_of(&tile) else { continue };
                    if let Some((a, b)) = clip_segment(w[0], w[1], &Rect::of_tile(tile)) {
                        let len = segment_length_m(a, b);
                        if len > 0.0 {
                            touched.insert(i);
                            if metric == ShapeMetric::TotalLengthM {
                                out.values[i] += len;
                            }
                        }
                    }
                }
            }
            if metric == ShapeMetric::Count {
                for i in touched {
                    out.values[i] += 1.0;
                }
            }
        }
    }
    if out.dropped > 0 {
        warn!("{}: skipped {} unrepairable geometries", ds.name, out.dropped);
    }
    out
}

/// Validates that a per-tile mapping covers the universe exactly.
/// A pre-extracted per-tile column aligned with the tile universe.
#[derive(Debug, Clone, PartialEq)]
pub struct TileColumn {
    pub name: String,
    pub values: Vec<f64>,
}

impl TileColumn {
    /// Intensive columns (`*_mean`, `*_density`) roll up by mean, the rest
    /// by sum.
    pub fn agg(&self) -> AggKind {
        if self.name.ends_with("_mean") || self.name.ends_with("_density") {
            AggKind::Mean
        } else {
            AggKind::Sum
        }
    }
}

/// Every raw input family for one study area.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawInputs {
    pub points: Vec<PointDataset>,
    pub zones: Vec<PolygonMetricDataset>,
    pub shapes: Vec<PolygonShapeDataset>,
    pub tile_columns: Vec<TileColumn>,
}

/// Counts of discarded or repaired records per feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestLog {
    pub feature: String,
    pub dropped: usize,
    pub duplicates: usize,
    pub imputed: usize,
}

/// Harmonizes all datasets onto the zoom-15 universe and applies the
/// family-specific quality rules. Columns come out in input order: points,
/// polygon metrics, shape metrics, tile columns. Datasets are processed in
/// parallel; the output order does not depend on scheduling.
pub fn harmonize(raw: &RawInputs, universe: &TileUniverse) -> Result<(Vec<FeatureColumn>, Vec<IngestLog>)> {
    use rayon::prelude::*;

    let mut names = HashSet::new();
    let mut jobs: Vec<(String, AggKind, Box<dyn Fn() -> (IngestOutcome, QaKind) + Send + Sync + '_>)> = Vec::new();
    for ds in &raw.points {
        jobs.push((ds.name.clone(), AggKind::Sum, Box::new(move || (aggregate_points(ds, universe), QaKind::Points))));
    }
    for ds in &raw.zones {
        jobs.push((
            ds.name.clone(),
            AggKind::Sum,
            Box::new(move || (interpolate_polygon_metric(ds, universe), QaKind::PolygonMetric)),
        ));
    }
    for ds in &raw.shapes {
        for m in ds.default_metrics() {
            jobs.push((
                format!("{}_{}", ds.name, m.suffix()),
                m.agg(),
                Box::new(move || (derive_shape_metrics(ds, universe, m), QaKind::PolygonShape)),
            ));
        }
    }
    for c in &raw.tile_columns {
        if c.values.len() != universe.len() {
            return Err(Error::Shape(format!("tile column {}: {} values for {} tiles", c.name, c.values.len(), universe.len())));
        }
        jobs.push((
            c.name.clone(),
            c.agg(),
            Box::new(move || (IngestOutcome { values: c.values.clone(), ..Default::default() }, QaKind::TileColumn)),
        ));
    }
    for (name, _, _) in &jobs {
        if !names.insert(name.clone()) {
            return Err(Error::InvalidArgument(format!("duplicate feature name {name}")));
        }
    }
    let results: Vec<(FeatureColumn, IngestLog)> = jobs
        .par_iter()
        .map(|(name, agg, job)| {
            let (outcome, kind) = job();
            let values = qa_pipeline(&outcome.values, universe, kind);
            let log = IngestLog {
                feature: name.clone(),
                dropped: outcome.dropped,
                duplicates: outcome.duplicates,
                imputed: outcome.imputed,
            };
            (FeatureColumn { name: name.clone(), agg: *agg, values }, log)
        })
        .collect();
    Ok(results.into_iter().unzip())
}

pub(crate) fn check_universe<'a>(
    what: &str,
    universe: &TileUniverse,
    tiles: impl Iterator<Item = &'a TileId>,
) -> Result<()> {
    let mut seen = HashSet::new();
    let mut extra = Vec::new();
    for t in tiles {
        if universe.contains(t) {
            seen.insert(*t);
        } else {
            extra.push(t.quadkey());
        }
    }
    let missing: Vec<String> =
        universe.tiles().iter().filter(|t| !seen.contains(t)).map(|t| t.quadkey()).collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let show = |v: &[String]| v.iter().take(10).cloned().collect::<Vec<_>>().join(",");
    Err(Error::TileMismatch(format!(
        "{what}: {} tiles missing [{}], {} unexpected [{}]",
        missing.len(),
        show(&missing),
        extra.len(),
        show(&extra)
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geotile::unit_to_lonlat;
    use geo_types::{coord, LineString, MultiPolygon};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const X0: u32 = 9000;
    const Y0: u32 = 11000;

    fn grid(w: u32, h: u32) -> TileUniverse {
        let tiles: Vec<TileId> = (0..h)
            .flat_map(|dy| (0..w).map(move |dx| TileId::new(15, X0 + dx, Y0 + dy).unwrap()))
            .collect();
        TileUniverse::new(&tiles).unwrap()
    }

    /// Lon/lat polygon for a rectangle given in zoom-15 tile coordinates.
    fn tile_rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon<f64> {
        let n = f64::from(1u32 << 15);
        let c = |x: f64, y: f64| {
            let (lon, lat) = unit_to_lonlat(x / n, y / n);
            coord! { x: lon, y: lat }
        };
        Polygon::new(LineString::from(vec![c(x0, y0), c(x1, y0), c(x1, y1), c(x0, y1), c(x0, y0)]), vec![])
    }

    fn zone(id: &str, poly: Polygon<f64>, metric: Option<f64>, level: AdminLevel, parent: Option<&str>) -> Zone {
        Zone {
            zone_id: id.into(),
            geometry: Geometry::Polygon(poly),
            metric,
            level,
            parent_id: parent.map(String::from),
        }
    }

    #[test]
    fn points_sum_and_dedupe() {
        let u = grid(2, 2);
        let c = u.tiles()[0].centroid();
        let other = GeoPoint { lat: c.lat + 1e-5, lon: c.lon };
        let ds = PointDataset { name: "p".into(), points: vec![(c, 1.0), (other, 1.0), (GeoPoint { lat: c.lat, lon: c.lon - 1e-5 }, 1.0)] };
        assert_eq!(aggregate_points(&ds, &u).values, vec![3.0, 0.0, 0.0, 0.0]);

        let dup = PointDataset { name: "p".into(), points: vec![(c, 1.0), (c, 1.0)] };
        let out = aggregate_points(&dup, &u);
        assert_eq!(out.values[0], 1.0);
        assert_eq!(out.duplicates, 1);

        let empty = PointDataset { name: "p".into(), points: vec![] };
        assert!(aggregate_points(&empty, &u).values.iter().all(|&v| v == 0.0));

        let bad = PointDataset { name: "p".into(), points: vec![(GeoPoint { lat: f64::NAN, lon: 0.0 }, 1.0), (c, -1.0)] };
        assert_eq!(aggregate_points(&bad, &u).dropped, 2);
    }

    #[test]
    fn zone_equal_to_tile() {
        let u = grid(2, 1);
        let x = f64::from(X0);
        let y = f64::from(Y0);
        let ds = PolygonMetricDataset {
            name: "pop".into(),
            zones: vec![zone("a", tile_rect(x, y, x + 1.0, y + 1.0), Some(100.0), AdminLevel::Lower, None)],
        };
        let v = interpolate_polygon_metric(&ds, &u).values;
        assert!((v[0] - 100.0).abs() < 1e-9 && v[1].abs() < 1e-9, "{v:?}");
    }

    #[test]
    fn zone_split_over_two_tiles() {
        let u = grid(2, 1);
        let (x, y) = (f64::from(X0), f64::from(Y0));
        let ds = PolygonMetricDataset {
            name: "pop".into(),
            zones: vec![zone("a", tile_rect(x + 0.5, y, x + 1.5, y + 1.0), Some(100.0), AdminLevel::Lower, None)],
        };
        let v = interpolate_polygon_metric(&ds, &u).values;
        assert!((v[0] - 50.0).abs() < 1e-9 && (v[1] - 50.0).abs() < 1e-9, "{v:?}");
    }

    #[test]
    fn missing_lower_metric_imputed_from_parent() {
        let u = grid(2, 1);
        let (x, y) = (f64::from(X0), f64::from(Y0));
        let ds = PolygonMetricDataset {
            name: "pop".into(),
            zones: vec![
                zone("up", tile_rect(x, y, x + 2.0, y + 1.0), Some(80.0), AdminLevel::Upper, None),
                zone("a", tile_rect(x, y, x + 1.0, y + 1.0), Some(10.0), AdminLevel::Lower, Some("up")),
                zone("b", tile_rect(x + 1.0, y, x + 2.0, y + 1.0), None, AdminLevel::Lower, Some("up")),
            ],
        };
        let out = interpolate_polygon_metric(&ds, &u);
        assert_eq!(out.imputed, 1);
        assert!((out.values[0] - 10.0).abs() < 1e-9);
        assert!((out.values[1] - 40.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_zone_dropped() {
        let u = grid(1, 1);
        let (x, y) = (f64::from(X0), f64::from(Y0));
        let ds = PolygonMetricDataset {
            name: "pop".into(),
            zones: vec![zone("flat", tile_rect(x, y, x, y + 1.0), Some(5.0), AdminLevel::Lower, None)],
        };
        let out = interpolate_polygon_metric(&ds, &u);
        assert_eq!(out.dropped, 1);
        assert_eq!(out.values, vec![0.0]);
    }

    fn road(a: GeoPoint, b: GeoPoint) -> Geometry<f64> {
        Geometry::LineString(LineString::from(vec![coord! { x: a.lon, y: a.lat }, coord! { x: b.lon, y: b.lat }]))
    }

    #[test]
    fn road_length_inside_and_straddling() {
        // Near the equator a zoom-15 tile is ~1.22 km wide, so a 1 km road fits.
        let tiles = [TileId::new(15, 16000, 16390).unwrap(), TileId::new(15, 16001, 16390).unwrap()];
        let u = TileUniverse::new(&tiles).unwrap();
        let c = tiles[0].centroid();
        let half = |m: f64| (m / 2.0 / (crate::geotile::EARTH_RADIUS_M * c.lat.to_radians().cos())).to_degrees();
        let a = GeoPoint { lat: c.lat, lon: c.lon - half(1000.0) };
        let b = GeoPoint { lat: c.lat, lon: c.lon + half(1000.0) };
        let ds = PolygonShapeDataset { name: "roads".into(), shapes: vec![road(a, b)] };
        let v = derive_shape_metrics(&ds, &u, ShapeMetric::TotalLengthM).values;
        assert!((v[0] - 1000.0).abs() < 0.01, "{v:?}");
        assert_eq!(v[1], 0.0);
        assert_eq!(derive_shape_metrics(&ds, &u, ShapeMetric::Count).values, vec![1.0, 0.0]);

        let edge_lon = tiles[0].bounds().east;
        let a = GeoPoint { lat: c.lat, lon: edge_lon - half(1000.0) };
        let b = GeoPoint { lat: c.lat, lon: edge_lon + half(1000.0) };
        let ds = PolygonShapeDataset { name: "roads".into(), shapes: vec![road(a, b)] };
        let v = derive_shape_metrics(&ds, &u, ShapeMetric::TotalLengthM).values;
        assert!((v[0] - 500.0).abs() < 0.01 && (v[1] - 500.0).abs() < 0.01, "{v:?}");
        assert_eq!(derive_shape_metrics(&ds, &u, ShapeMetric::Count).values, vec![1.0, 1.0]);
    }

    #[test]
    fn building_metrics() {
        let u = grid(2, 1);
        let (x, y) = (f64::from(X0), f64::from(Y0));
        let ds = PolygonShapeDataset {
            name: "buildings".into(),
            shapes: vec![
                Geometry::Polygon(tile_rect(x + 0.1, y + 0.1, x + 0.6, y + 0.6)),
                Geometry::MultiPolygon(MultiPolygon(vec![tile_rect(x + 0.8, y + 0.2, x + 1.2, y + 0.4)])),
            ],
        };
        let count = derive_shape_metrics(&ds, &u, ShapeMetric::Count).values;
        assert_eq!(count, vec![1.0, 1.0]);
        let dens = derive_shape_metrics(&ds, &u, ShapeMetric::Density).values;
        assert!((dens[0] - (0.25 + 0.04)).abs() < 1e-9, "{dens:?}");
        assert!((dens[1] - 0.04).abs() < 1e-9, "{dens:?}");
        let area = derive_shape_metrics(&ds, &u, ShapeMetric::TotalAreaM2).values;
        let tile_area = u.tiles()[0].area_m2();
        assert!((area[0] / tile_area - 0.29).abs() < 1e-3, "{}", area[0] / tile_area);
    }

    /// Axis-aligned rectangles on a sub-tile lattice give exact brute-force
    /// overlaps by counting lattice cells.
    fn lattice_rects(seed: u64, n: usize, w: u32, h: u32) -> Vec<(u32, u32, u32, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 8u32;
        (0..n)
            .map(|_| {
                let x0 = rng.random_range(0..w * k - 1);
                let y0 = rng.random_range(0..h * k - 1);
                let x1 = rng.random_range(x0 + 1..=(x0 + 3 * k).min(w * k));
                let y1 = rng.random_range(y0 + 1..=(y0 + 3 * k).min(h * k));
                (x0, y0, x1, y1)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn interpolation_conserves_zone_totals(seed in any::<u64>()) {
            let (w, h) = (6, 5);
            let u = grid(w, h);
            let k = 8.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let rects = lattice_rects(seed, rng.random_range(1..15), w, h);
            let zones: Vec<Zone> = rects.iter().enumerate().map(|(i, &(a, b, c, d))| {
                let p = tile_rect(f64::from(X0) + f64::from(a) / k, f64::from(Y0) + f64::from(b) / k,
                                  f64::from(X0) + f64::from(c) / k, f64::from(Y0) + f64::from(d) / k);
                zone(&i.to_string(), p, Some(rng.random_range(0.0..1000.0)), AdminLevel::Lower, None)
            }).collect();
            let total: f64 = zones.iter().map(|z| z.metric.unwrap()).sum();
            let out = interpolate_polygon_metric(&PolygonMetricDataset { name: "m".into(), zones }, &u);
            let got: f64 = out.values.iter().sum();
            prop_assert!((got - total).abs() <= 1e-9 * total.max(1.0), "{got} vs {total}");
        }

        #[test]
        fn density_matches_cell_counting(seed in any::<u64>()) {
            let (w, h) = (3, 3);
            let u = grid(w, h);
            let k = 8u32;
            // Non-overlapping footprints: keep a rectangle only if its lattice
            // cells are all still free.
            let mut used = vec![false; (w * k * h * k) as usize];
            let mut kept = Vec::new();
            for (a, b, c, d) in lattice_rects(seed, 20, w, h) {
                let cells: Vec<usize> = (b..d).flat_map(|y| (a..c).map(move |x| (y * w * k + x) as usize)).collect();
                if cells.iter().all(|&i| !used[i]) {
                    cells.iter().for_each(|&i| used[i] = true);
                    kept.push((a, b, c, d));
                }
            }
            let shapes = kept.iter().map(|&(a, b, c, d)| {
                let f = |v: u32, o: u32| f64::from(o) + f64::from(v) / f64::from(k);
                Geometry::Polygon(tile_rect(f(a, X0), f(b, Y0), f(c, X0), f(d, Y0)))
            }).collect();
            let dens = derive_shape_metrics(&PolygonShapeDataset { name: "b".into(), shapes }, &u, ShapeMetric::Density).values;
            for (ti, t) in u.tiles().iter().enumerate() {
                let (tx, ty) = (t.x - X0, t.y - Y0);
                let covered = (ty * k..(ty + 1) * k)
                    .flat_map(|y| (tx * k..(tx + 1) * k).map(move |x| (y * w * k + x) as usize))
                    .filter(|&i| used[i])
                    .count();
                let oracle = covered as f64 / f64::from(k * k);
                prop_assert!((dens[ti] - oracle).abs() < 1e-9, "{} vs {}", dens[ti], oracle);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&dens[ti]));
            }
        }
    }
}
