//! CSV readers and writers for every pipeline artifact.
//!
//! Floats are written in Rust's shortest round-trip form, so a value read
//! back is bit-identical to the one written.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wkt::ToWkt;

use crate::error::{Error, Result};
use crate::geotile::{CoverageDisk, GeoPoint, TileId};
use crate::hrgat::DenseMatrix;
use crate::ingest::geometry::parse_wkt;
use crate::ingest::{
    AdminLevel, AggKind, FeatureTable, PointDataset, PolygonMetricDataset, PolygonShapeDataset, TileColumn, Zone,
    ZoomLayer,
};
use crate::proxy::{CellTrafficRecord, SiteRecord, TileProxy, TileTarget};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.deserialize().collect::<csv::Result<Vec<T>>>().map_err(|e| Error::csv(path, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes via a closure taking a buffered file writer.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
}

fn tile(path: &Path, quadkey: &str) -> Result<TileId> {
    quadkey.parse().map_err(|e: Error| Error::data(path, e.to_string()))
}

fn disk(path: &Path, id: &str, lat: f64, lon: f64, radius_m: f64) -> Result<CoverageDisk> {
    CoverageDisk::new(GeoPoint { lat, lon }, radius_m).map_err(|e| Error::data(path, format!("{id}: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CellRow {
    pub cell_id: String,
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
    pub day: u32,
    pub hour: u8,
    pub mbps: f64,
}

/// Hourly cell rows grouped per cell; cells come back sorted by id.
pub fn read_cells(path: &Path) -> Result<Vec<CellTrafficRecord>> {
    let mut cells: BTreeMap<String, CellTrafficRecord> = BTreeMap::new();
    for r in read_rows::<CellRow>(path)? {
        if r.hour > 23 {
            return Err(Error::data(path, format!("cell {}: hour {} out of range", r.cell_id, r.hour)));
        }
        let coverage = disk(path, &r.cell_id, r.lat, r.lon, r.radius_m)?;
        let rec = cells.entry(r.cell_id.clone()).or_insert_with(|| CellTrafficRecord {
            cell_id: r.cell_id.clone(),
            coverage,
            throughput: BTreeMap::new(),
        });
        if rec.coverage != coverage {
            return Err(Error::data(path, format!("cell {}: footprint changes between rows", r.cell_id)));
        }
        if rec.throughput.insert((r.day, r.hour), r.mbps).is_some() {
            return Err(Error::data(path, format!("cell {}: duplicate day {} hour {}", r.cell_id, r.day, r.hour)));
        }
    }
    Ok(cells.into_values().collect())
}

pub fn write_cells(path: &Path, cells: &[CellTrafficRecord]) -> Result<()> {
    write_rows(
        path,
        cells.iter().flat_map(|c| {
            c.throughput.iter().map(|(&(day, hour), &mbps)| CellRow {
                cell_id: c.cell_id.clone(),
                lat: c.coverage.center.lat,
                lon: c.coverage.center.lon,
                radius_m: c.coverage.radius_m,
                day,
                hour,
                mbps,
            })
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SiteRow {
    pub site_id: String,
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
    pub bw_mhz: f64,
    /// Average EIRP in dBm; empty when not reported.
    pub eirp_dbm: Option<f64>,
}

pub fn read_sites(path: &Path) -> Result<Vec<SiteRecord>> {
    read_rows::<SiteRow>(path)?
        .into_iter()
        .map(|r| {
            let s = SiteRecord {
                coverage: disk(path, &r.site_id, r.lat, r.lon, r.radius_m)?,
                bandwidth_mhz: r.bw_mhz,
                eirp: r.eirp_dbm.map(|d| 10f64.powf(d / 10.0)),
                site_id: r.site_id,
            };
            s.validate().map_err(|e| Error::data(path, e.to_string()))?;
            Ok(s)
        })
        .collect()
}

pub fn write_sites(path: &Path, sites: &[SiteRecord]) -> Result<()> {
    write_rows(
        path,
        sites.iter().map(|s| SiteRow {
            site_id: s.site_id.clone(),
            lat: s.coverage.center.lat,
            lon: s.coverage.center.lon,
            radius_m: s.coverage.radius_m,
            bw_mhz: s.bandwidth_mhz,
            eirp_dbm: s.eirp.map(|p| 10.0 * p.log10()),
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    name: String,
    lat: f64,
    lon: f64,
    weight: f64,
}

/// Datasets in order of first appearance.
pub fn read_points(path: &Path) -> Result<Vec<PointDataset>> {
    let mut out: Vec<PointDataset> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in read_rows::<PointRow>(path)? {
        let i = *index.entry(r.name.clone()).or_insert_with(|| {
            out.push(PointDataset { name: r.name.clone(), points: Vec::new() });
            out.len() - 1
        });
        out[i].points.push((GeoPoint { lat: r.lat, lon: r.lon }, r.weight));
    }
    Ok(out)
}

pub fn write_points(path: &Path, sets: &[PointDataset]) -> Result<()> {
    write_rows(
        path,
        sets.iter().flat_map(|d| {
            d.points.iter().map(|(p, w)| PointRow { name: d.name.clone(), lat: p.lat, lon: p.lon, weight: *w })
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ZoneRow {
    name: String,
    zone_id: String,
    wkt: String,
    metric: Option<f64>,
    level: AdminLevel,
    parent_id: Option<String>,
}

pub fn read_zones(path: &Path) -> Result<Vec<PolygonMetricDataset>> {
    let mut out: Vec<PolygonMetricDataset> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in read_rows::<ZoneRow>(path)? {
        let geometry = parse_wkt(&r.wkt).map_err(|e| Error::data(path, format!("zone {}: {e}", r.zone_id)))?;
        let i = *index.entry(r.name.clone()).or_insert_with(|| {
            out.push(PolygonMetricDataset { name: r.name.clone(), zones: Vec::new() });
            out.len() - 1
        });
        out[i].zones.push(Zone {
            zone_id: r.zone_id,
            geometry,
            metric: r.metric,
            level: r.level,
            parent_id: r.parent_id.filter(|p| !p.is_empty()),
        });
    }
    Ok(out)
}

pub fn write_zones(path: &Path, sets: &[PolygonMetricDataset]) -> Result<()> {
    write_rows(
        path,
        sets.iter().flat_map(|d| {
            d.zones.iter().map(|z| ZoneRow {
                name: d.name.clone(),
                zone_id: z.zone_id.clone(),
                wkt: z.geometry.wkt_string(),
                metric: z.metric,
                level: z.level,
                parent_id: z.parent_id.clone(),
            })
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeRow {
    name: String,
    wkt: String,
}

pub fn read_shapes(path: &Path) -> Result<Vec<PolygonShapeDataset>> {
    let mut out: Vec<PolygonShapeDataset> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (k, r) in read_rows::<ShapeRow>(path)?.into_iter().enumerate() {
        let g = parse_wkt(&r.wkt).map_err(|e| Error::data(path, format!("row {}: {e}", k + 1)))?;
        let i = *index.entry(r.name.clone()).or_insert_with(|| {
            out.push(PolygonShapeDataset { name: r.name.clone(), shapes: Vec::new() });
            out.len() - 1
        });
        out[i].shapes.push(g);
    }
    Ok(out)
}

pub fn write_shapes(path: &Path, sets: &[PolygonShapeDataset]) -> Result<()> {
    write_rows(
        path,
        sets.iter().flat_map(|d| d.shapes.iter().map(|g| ShapeRow { name: d.name.clone(), wkt: g.wkt_string() })),
    )
}

/// `quadkey,<column>...`, aligned to `tiles`.
pub fn read_tile_columns(path: &Path, tiles: &[TileId]) -> Result<Vec<TileColumn>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.get(0) != Some("quadkey") {
        return Err(Error::data(path, "first column must be quadkey"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let index: HashMap<TileId, usize> = tiles.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut values = vec![vec![f64::NAN; tiles.len()]; names.len()];
    let mut seen = vec![false; tiles.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let t = tile(path, &rec[0])?;
        let i = *index.get(&t).ok_or_else(|| Error::data(path, format!("tile {} is not in the study area", &rec[0])))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::data(path, format!("duplicate tile {}", &rec[0])));
        }
        for (j, v) in rec.iter().skip(1).enumerate() {
            // empty or unparsable cells become NaN and are zeroed by QA
            values[j][i] = v.trim().parse().unwrap_or(f64::NAN);
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::data(path, format!("no row for tile {}", tiles[i].quadkey())));
    }
    Ok(names.into_iter().zip(values).map(|(name, values)| TileColumn { name, values }).collect())
}

pub fn write_tile_columns(path: &Path, tiles: &[TileId], cols: &[TileColumn]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["quadkey".to_string()];
    header.extend(cols.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, t) in tiles.iter().enumerate() {
        let mut rec = vec![t.quadkey()];
        rec.extend(cols.iter().map(|c| c.values[i].to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TileLabel {
    quadkey: String,
    #[serde(alias = "class", alias = "city")]
    label: String,
}

/// `quadkey,<label>` rows in file order, e.g. tiles.csv (city) or
/// landcover.csv (class).
pub fn read_labels(path: &Path) -> Result<Vec<(TileId, String)>> {
    let rows = read_rows::<TileLabel>(path)?;
    let mut seen = std::collections::HashSet::new();
    rows.into_iter()
        .map(|r| {
            let t = tile(path, &r.quadkey)?;
            if !seen.insert(t) {
                return Err(Error::data(path, format!("duplicate tile {}", r.quadkey)));
            }
            Ok((t, r.label))
        })
        .collect()
}

pub fn write_labels(path: &Path, column: &str, rows: &[(TileId, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["quadkey", column]).map_err(|e| Error::csv(path, e))?;
    for (t, l) in rows {
        w.write_record([t.quadkey(), l.clone()]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct ProxyRow {
    quadkey: String,
    deployed_bw: f64,
}

pub fn write_proxy(path: &Path, rows: &[TileProxy]) -> Result<()> {
    write_rows(path, rows.iter().map(|p| ProxyRow { quadkey: p.tile.quadkey(), deployed_bw: p.deployed_bw }))
}

pub fn read_proxy(path: &Path) -> Result<Vec<TileProxy>> {
    read_rows::<ProxyRow>(path)?
        .into_iter()
        .map(|r| Ok(TileProxy { tile: tile(path, &r.quadkey)?, deployed_bw: r.deployed_bw }))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetRow {
    quadkey: String,
    traffic_mbps: f64,
    coverage_sum: f64,
    reliable: bool,
}

pub fn write_targets(path: &Path, rows: &[TileTarget]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|t| TargetRow {
            quadkey: t.tile.quadkey(),
            traffic_mbps: t.traffic_mbps,
            coverage_sum: t.coverage_sum,
            reliable: t.reliable,
        }),
    )
}

pub fn read_targets(path: &Path) -> Result<Vec<TileTarget>> {
    read_rows::<TargetRow>(path)?
        .into_iter()
        .map(|r| {
            Ok(TileTarget {
                tile: tile(path, &r.quadkey)?,
                traffic_mbps: r.traffic_mbps,
                coverage_sum: r.coverage_sum,
                reliable: r.reliable,
            })
        })
        .collect()
}

const TARGET: &str = "target";
const LABELED: &str = "labeled";

/// `features_z{zoom}.csv`: quadkey, city, landcover, features; the finest
/// layer also carries the target and the labeled flag.
pub fn write_feature_layer(path: &Path, table: &FeatureTable, layer: &ZoomLayer) -> Result<()> {
    let fine = layer.zoom == table.fine().zoom;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = ["quadkey", "city", "landcover"].map(String::from).to_vec();
    header.extend(table.names.iter().cloned());
    if fine {
        header.push(TARGET.into());
        header.push(LABELED.into());
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, t) in layer.tiles.iter().enumerate() {
        let mut rec = vec![t.quadkey(), layer.city[i].clone(), layer.landcover[i].clone()];
        rec.extend(layer.x.row(i).iter().map(f64::to_string));
        if fine {
            rec.push(table.target[i].to_string());
            rec.push(table.labeled[i].to_string());
        }
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregation kinds per feature: `feature,agg`.
pub fn write_feature_schema(path: &Path, table: &FeatureTable) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        feature: &'a str,
        agg: AggKind,
    }
    write_rows(path, table.names.iter().zip(&table.aggs).map(|(n, a)| Row { feature: n, agg: *a }))
}

struct ParsedLayer {
    layer: ZoomLayer,
    names: Vec<String>,
    target: Vec<f64>,
    labeled: Vec<bool>,
}

fn read_feature_layer(path: &Path, zoom: u8, fine: bool) -> Result<ParsedLayer> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = r.headers().map_err(|e| Error::csv(path, e))?.iter().map(String::from).collect();
    if header.len() < 3 || header[..3] != ["quadkey", "city", "landcover"] {
        return Err(Error::data(path, "header must start with quadkey,city,landcover"));
    }
    let tail = if fine { 2 } else { 0 };
    if fine && (header.len() < 5 || header[header.len() - 2..] != [TARGET, LABELED]) {
        return Err(Error::data(path, "zoom-15 features must end with target,labeled"));
    }
    let names = header[3..header.len() - tail].to_vec();
    let d = names.len();
    let (mut tiles, mut city, mut landcover, mut data, mut target, mut labeled) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::data(path, format!("line {line}: {s:?} is not a number")))
    };
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let t = tile(path, &rec[0])?;
        if t.zoom != zoom {
            return Err(Error::data(path, format!("tile {} is not at zoom {zoom}", &rec[0])));
        }
        tiles.push(t);
        city.push(rec[1].to_string());
        landcover.push(rec[2].to_string());
        for j in 0..d {
            data.push(num(&rec[3 + j], k + 2)?);
        }
        if fine {
            target.push(num(&rec[3 + d], k + 2)?);
            labeled.push(
                rec[4 + d].parse().map_err(|_| Error::data(path, format!("line {}: bad labeled flag", k + 2)))?,
            );
        }
    }
    let x = DenseMatrix::from_vec(tiles.len(), d, data)?;
    Ok(ParsedLayer { layer: ZoomLayer { zoom, tiles, x, landcover, city }, names, target, labeled })
}

/// Reads `features_z{13,14,15}.csv` and `feature_schema.csv` from `dir`.
pub fn read_feature_table(dir: &Path) -> Result<FeatureTable> {
    #[derive(Deserialize)]
    struct Row {
        feature: String,
        agg: AggKind,
    }
    let schema_path = dir.join("feature_schema.csv");
    let schema: Vec<Row> = read_rows(&schema_path)?;
    let mut layers = Vec::new();
    let mut target = Vec::new();
    let mut labeled = Vec::new();
    for zoom in crate::geotile::ZOOMS {
        let path = dir.join(format!("features_z{zoom}.csv"));
        let p = read_feature_layer(&path, zoom, zoom == crate::geotile::MAX_ZOOM)?;
        if p.names.len() != schema.len() || p.names.iter().zip(&schema).any(|(a, b)| *a != b.feature) {
            return Err(Error::data(&path, "feature columns differ from feature_schema.csv"));
        }
        if zoom == crate::geotile::MAX_ZOOM {
            target = p.target;
            labeled = p.labeled;
        }
        layers.push(p.layer);
    }
    let table = FeatureTable {
        names: schema.iter().map(|r| r.feature.clone()).collect(),
        aggs: schema.iter().map(|r| r.agg).collect(),
        layers,
        target,
        labeled,
    };
    table.validate().map_err(|e| Error::data(dir, e.to_string()))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use geo_types::{coord, Geometry, LineString, Polygon};

    #[test]
    fn cells_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        let disk = CoverageDisk::new(GeoPoint { lat: 45.1, lon: -75.3 }, 321.5).unwrap();
        let mut throughput = BTreeMap::new();
        throughput.insert((0, 3), 1.0 / 3.0);
        throughput.insert((1, 23), 7.25);
        let cells = vec![CellTrafficRecord { cell_id: "c1".into(), coverage: disk, throughput }];
        write_cells(&path, &cells).unwrap();
        assert_eq!(read_cells(&path).unwrap(), cells);
    }

    #[test]
    fn shapes_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shapes.csv");
        let ring = LineString::from(vec![
            coord! { x: -75.123456789012345, y: 45.1 },
            coord! { x: -75.1, y: 45.1 + 1e-9 },
            coord! { x: -75.1, y: 45.2 / 3.0 },
            coord! { x: -75.123456789012345, y: 45.1 },
        ]);
        let sets = vec![PolygonShapeDataset {
            name: "buildings".into(),
            shapes: vec![Geometry::Polygon(Polygon::new(ring, vec![]))],
        }];
        write_shapes(&path, &sets).unwrap();
        assert_eq!(read_shapes(&path).unwrap(), sets);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_cells(Path::new("/nonexistent/cells.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cells.csv"));
        assert!(err.is_data_error());
    }
}
