//! Deterministic synthetic multi-city benchmark.
//!
//! Each city is a square block of zoom-15 tiles aligned to the zoom-13 grid.
//! Latent fields (an urban core plus independent smooth fields) drive raw
//! point, zone, shape and tile-column inputs. Those inputs go through the
//! real harmonization step, and the ground truth is computed from the
//! harmonized zoom-15 features:
//!
//! ```text
//! y = offset + unit · ( Σ_k β_k z(x_k)
//!                       + c · [A · z(mean13 f) + (1 − A) · z(f)]
//!                       + σ · smooth noise )
//! ```
//!
//! where `z` standardizes over all tiles, `f` is the cross-scale feature,
//! `mean13 f` its mean over the zoom-13 parent block, and `A` marks zoom-13
//! blocks of the coarse-signal region (visible through `ntl_mean`). Sites
//! carry exactly `y` as bandwidth, so the proxy reproduces it, and cells
//! carry a noisy multiple of it as busy-hour traffic.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use geo_types::{coord, Geometry, LineString, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{unit_to_lonlat, CoverageDisk, GeoPoint, TileId, TileUniverse, MAX_ZOOM, MIN_ZOOM};
use crate::ingest::{
    harmonize, AdminLevel, FeatureColumn, PointDataset, PolygonMetricDataset, PolygonShapeDataset, RawInputs,
    TileColumn, Zone,
};
use crate::proxy::{CellTrafficRecord, SiteRecord};
use crate::stats;

/// Known city anchors (lat, lon); other names are placed on a fixed line.
const ANCHORS: [(&str, f64, f64); 5] = [
    ("vancouver", 49.28, -123.12),
    ("calgary", 51.05, -114.07),
    ("gta", 43.65, -79.38),
    ("ottawa", 45.42, -75.70),
    ("montreal", 45.50, -73.57),
];

pub const POINT_FEATURES: [&str; 9] = [
    "households",
    "poi_retail",
    "poi_education",
    "poi_health",
    "poi_recreation",
    "businesses_retail",
    "businesses_services",
    "transit_bus_stops",
    "transit_rail_stations",
];

pub const ZONE_FEATURES: [&str; 11] = [
    "population",
    "pop_age_0_14",
    "pop_age_65p",
    "pop_income_low",
    "pop_income_high",
    "daytime_population",
    "employees",
    "trips_0_3km",
    "trips_3_7km",
    "trips_7_10km",
    "trips_10_15km",
];

pub const TILE_FEATURES: [&str; 5] = ["ntl_mean", "workers_office", "workers_retail", "pop_age_15_64", "visitors"];

pub const REGION_COARSE: &str = "coarse";
pub const REGION_FINE: &str = "fine";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedFeature {
    pub name: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub cities: Vec<String>,
    /// Zoom-15 tiles along each side of a city; a multiple of 4.
    pub tiles_per_side: u32,
    pub planted: Vec<PlantedFeature>,
    pub cross_feature: String,
    pub cross_scale: f64,
    pub noise_sd: f64,
    /// Target mean and spread in MHz.
    pub y_offset: f64,
    pub y_unit: f64,
    pub days: u32,
    /// Share of tiles left without a serving cell.
    pub uncovered_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            cities: ANCHORS.iter().map(|a| a.0.to_string()).collect(),
            tiles_per_side: 32,
            planted: vec![
                PlantedFeature { name: "poi_retail".into(), coef: 1.0 },
                PlantedFeature { name: "daytime_population".into(), coef: 0.8 },
                PlantedFeature { name: "roads_length_m".into(), coef: 0.6 },
            ],
            cross_feature: "businesses_services".into(),
            cross_scale: 1.0,
            noise_sd: 0.3,
            y_offset: 200.0,
            y_unit: 25.0,
            days: 2,
            uncovered_fraction: 0.03,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cities.is_empty() {
            return Err(Error::InvalidArgument("at least one city is required".into()));
        }
        let mut names = self.cities.clone();
        names.sort();
        names.dedup();
        if names.len() != self.cities.len() {
            return Err(Error::InvalidArgument("duplicate city names".into()));
        }
        if self.tiles_per_side == 0 || self.tiles_per_side % 4 != 0 {
            return Err(Error::InvalidArgument(format!("tiles_per_side must be a positive multiple of 4, got {}", self.tiles_per_side)));
        }
        if self.days == 0 {
            return Err(Error::InvalidArgument("days must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.uncovered_fraction) {
            return Err(Error::InvalidArgument("uncovered_fraction must lie in [0, 1)".into()));
        }
        for v in [self.cross_scale, self.noise_sd, self.y_unit] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("scales must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything the generator produces, in memory.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Zoom-15 tiles, city by city, row-major within a city.
    pub tiles: Vec<TileId>,
    pub city: Vec<String>,
    pub landcover: Vec<String>,
    pub raw: RawInputs,
    pub cells: Vec<CellTrafficRecord>,
    pub sites: Vec<SiteRecord>,
    pub truth: Vec<f64>,
    /// `REGION_COARSE` or `REGION_FINE` per tile.
    pub region: Vec<&'static str>,
    /// Harmonized zoom-15 features the truth was computed from.
    pub features: Vec<FeatureColumn>,
}

/// A square field over one city's tile grid.
struct Field {
    side: usize,
    v: Vec<f64>,
}

impl Field {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.side + x]
    }

    /// Sum of random Gaussian bumps scaled to a maximum of 1.
    fn bumps(rng: &mut ChaCha8Rng, side: usize, n: usize) -> Field {
        let s = side as f64;
        let bumps: Vec<(f64, f64, f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(s / 10.0..s / 4.0), rng.random_range(0.5..1.0)))
            .collect();
        let mut v = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                v[y * side + x] = bumps
                    .iter()
                    .map(|&(bx, by, w, a)| a * (-((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (2.0 * w * w)).exp())
                    .sum();
            }
        }
        let top = v.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        v.iter_mut().for_each(|x| *x /= top);
        Field { side, v }
    }
}

fn anchor(name: &str, k: usize) -> (f64, f64) {
    ANCHORS
        .iter()
        .find(|a| a.0 == name)
        .map(|a| (a.1, a.2))
        .unwrap_or((47.0, -100.0 + 3.0 * k as f64))
}

fn unit_pt(x: f64, y: f64) -> (f64, f64) {
    let n = f64::from(1u32 << MAX_ZOOM);
    unit_to_lonlat(x / n, y / n)
}

fn geo(x: f64, y: f64) -> GeoPoint {
    let (lon, lat) = unit_pt(x, y);
    GeoPoint { lat, lon }
}

/// Axis-aligned rectangle given in zoom-15 tile coordinates.
fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Geometry<f64> {
    let c = |x: f64, y: f64| {
        let (lon, lat) = unit_pt(x, y);
        coord! { x: lon, y: lat }
    };
    Geometry::Polygon(Polygon::new(LineString::from(vec![c(x0, y0), c(x1, y0), c(x1, y1), c(x0, y1), c(x0, y0)]), vec![]))
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let m = stats::mean(v);
    let sd = stats::variance(v).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - m) / sd } else { 0.0 }).collect()
}

struct CityLatent {
    x0: u32,
    y0: u32,
    urban: Field,
    s: [Field; 4],
    coarse_region: Vec<bool>,
}

/// Generates the benchmark. Identical specs give identical data.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let side = spec.tiles_per_side as usize;
    let blocks = side / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut latent = Vec::new();
    let mut tiles = Vec::new();
    let mut city = Vec::new();
    for (k, name) in spec.cities.iter().enumerate() {
        let (lat, lon) = anchor(name, k);
        let t13 = TileId::containing(GeoPoint { lat, lon }, MIN_ZOOM)?;
        let x0 = 4 * t13.x - 4 * (blocks as u32 / 2);
        let y0 = 4 * t13.y - 4 * (blocks as u32 / 2);
        let s = side as f64;
        let (cx, cy) = (s / 2.0 + rng.random_range(-3.0..3.0), s / 2.0 + rng.random_range(-3.0..3.0));
        let core = Field::bumps(&mut rng, side, 4);
        let mut urban = Field { side, v: vec![0.0; side * side] };
        for y in 0..side {
            for x in 0..side {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                urban.v[y * side + x] = 0.8 * (-r2 / (2.0 * (0.3 * s).powi(2))).exp() + 0.2 * core.at(x, y);
            }
        }
        let s4 = [
            Field::bumps(&mut rng, side, 6),
            Field::bumps(&mut rng, side, 6),
            Field::bumps(&mut rng, side, 6),
            Field::bumps(&mut rng, side, 5),
        ];
        let mut coarse_region: Vec<bool> = (0..blocks * blocks).map(|_| rng.random_bool(0.5)).collect();
        if coarse_region.iter().all(|&a| a) || coarse_region.iter().all(|&a| !a) {
            for (i, a) in coarse_region.iter_mut().enumerate() {
                *a = i % 2 == 0;
            }
        }
        for y in 0..side {
            for x in 0..side {
                tiles.push(TileId::new(MAX_ZOOM, x0 + x as u32, y0 + y as u32)?);
                city.push(name.clone());
            }
        }
        latent.push(CityLatent { x0, y0, urban, s: s4, coarse_region });
    }
    let universe = TileUniverse::new(&tiles)?;
    let n = tiles.len();
    let per_city = side * side;
    let block_of = |k: usize| {
        let local = k % per_city;
        (local / side / 4) * blocks + (local % side) / 4
    };
    let is_coarse = |k: usize| latent[k / per_city].coarse_region[block_of(k)];
    let lat_at = |k: usize| {
        let c = &latent[k / per_city];
        let local = k % per_city;
        (c, local % side, local / side)
    };

    // per-tile latent drivers
    let u: Vec<f64> = (0..n).map(|k| { let (c, x, y) = lat_at(k); c.urban.at(x, y) }).collect();
    let sf = |j: usize| -> Vec<f64> { (0..n).map(|k| { let (c, x, y) = lat_at(k); c.s[j].at(x, y) }).collect() };
    let (s1, s2, s3, s4) = (sf(0), sf(1), sf(2), sf(3));

    // points
    let rates: [Box<dyn Fn(usize) -> f64>; 9] = [
        Box::new(|k| 3.0 + 15.0 * u[k]),
        Box::new(|k| 0.5 + 8.0 * s1[k]),
        Box::new(|k| 0.3 + 2.0 * u[k]),
        Box::new(|k| 0.2 + 1.5 * u[k]),
        Box::new(|k| 0.4 + 2.0 * u[k]),
        Box::new(|k| 1.0 + 4.0 * u[k]),
        Box::new(|_| 6.0),
        Box::new(|k| 0.5 + 3.0 * u[k]),
        Box::new(|k| 0.05 + 0.3 * u[k]),
    ];
    let mut points = Vec::new();
    for (name, rate) in POINT_FEATURES.iter().zip(&rates) {
        let mut pts = Vec::new();
        for (k, t) in tiles.iter().enumerate() {
            for _ in 0..poisson(&mut rng, rate(k)) {
                let fx = f64::from(t.x) + rng.random_range(0.02..0.98);
                let fy = f64::from(t.y) + rng.random_range(0.02..0.98);
                pts.push((geo(fx, fy), 1.0));
            }
        }
        points.push(PointDataset { name: name.to_string(), points: pts });
    }

    // zones: per-tile truths spread over half-tile-shifted 2×2 lower zones
    // and zoom-13 upper zones
    let pop: Vec<f64> = (0..n).map(|k| (100.0 + 900.0 * u[k]) * (1.0_f64 + 0.1 * normal.sample(&mut rng)).max(0.2)).collect();
    let zone_truth: Vec<Vec<f64>> = vec![
        pop.clone(),
        pop.iter().map(|p| 0.15 * p).collect(),
        pop.iter().zip(&u).map(|(p, u)| p * (0.12 + 0.1 * (1.0 - u))).collect(),
        pop.iter().zip(&u).map(|(p, u)| p * (0.15 + 0.15 * u)).collect(),
        pop.iter().zip(&s4).map(|(p, s)| p * (0.1 + 0.2 * s)).collect(),
        (0..n).map(|k| 50.0 + 900.0 * s2[k]).collect(),
        u.iter().map(|u| 20.0 + 500.0 * u * u).collect(),
        pop.iter().map(|p| 0.8 * p).collect(),
        pop.iter().zip(&u).map(|(p, u)| p * (0.3 + 0.2 * u)).collect(),
        pop.iter().zip(&s4).map(|(p, s)| p * (0.1 + 0.1 * s)).collect(),
        pop.iter().zip(&u).map(|(p, u)| p * (0.15 - 0.1 * u)).collect(),
    ];
    let mut zones = Vec::new();
    for (name, truth) in ZONE_FEATURES.iter().zip(&zone_truth) {
        let mut zs = Vec::new();
        for (ci, c) in latent.iter().enumerate() {
            let base = ci * per_city;
            let value_over = |x0: f64, y0: f64, x1: f64, y1: f64| -> f64 {
                let mut s = 0.0;
                for ty in (y0.floor() as usize)..(y1.ceil() as usize).min(side) {
                    for tx in (x0.floor() as usize)..(x1.ceil() as usize).min(side) {
                        let a = overlap_1d(x0, x1, tx as f64, tx as f64 + 1.0) * overlap_1d(y0, y1, ty as f64, ty as f64 + 1.0);
                        s += truth[base + ty * side + tx] * a;
                    }
                }
                s
            };
            let (ox, oy) = (f64::from(c.x0), f64::from(c.y0));
            for by in 0..blocks {
                for bx in 0..blocks {
                    let (x0, y0) = (4.0 * bx as f64, 4.0 * by as f64);
                    zs.push(Zone {
                        zone_id: format!("{}-u{bx}-{by}", spec.cities[ci]),
                        geometry: rect(ox + x0, oy + y0, ox + x0 + 4.0, oy + y0 + 4.0),
                        metric: Some(value_over(x0, y0, x0 + 4.0, y0 + 4.0)),
                        level: AdminLevel::Upper,
                        parent_id: None,
                    });
                }
            }
            let s = side as f64;
            let cuts: Vec<f64> = std::iter::once(0.0).chain((0..).map(|i| 1.5 + 2.0 * i as f64).take_while(|&v| v < s)).chain([s]).collect();
            for (j, w) in cuts.windows(2).enumerate() {
                for (i, v) in cuts.windows(2).enumerate() {
                    let (x0, x1, y0, y1) = (v[0], v[1], w[0], w[1]);
                    let parent = format!("{}-u{}-{}", spec.cities[ci], ((x0 + x1) / 8.0) as usize, ((y0 + y1) / 8.0) as usize);
                    let missing = rng.random_bool(0.02);
                    zs.push(Zone {
                        zone_id: format!("{}-l{i}-{j}", spec.cities[ci]),
                        geometry: rect(ox + x0, oy + y0, ox + x1, oy + y1),
                        metric: if missing { None } else { Some(value_over(x0, y0, x1, y1)) },
                        level: AdminLevel::Lower,
                        parent_id: Some(parent),
                    });
                }
            }
        }
        zones.push(PolygonMetricDataset { name: name.to_string(), zones: zs });
    }

    // shapes
    let mut roads = Vec::new();
    let mut buildings = Vec::new();
    for (k, t) in tiles.iter().enumerate() {
        let c = &latent[k / per_city];
        let (lo_x, lo_y) = (f64::from(c.x0), f64::from(c.y0));
        let (hi_x, hi_y) = (lo_x + side as f64, lo_y + side as f64);
        for _ in 0..poisson(&mut rng, 0.5 + 5.0 * s3[k]) {
            let ax = f64::from(t.x) + rng.random_range(0.05..0.95);
            let ay = f64::from(t.y) + rng.random_range(0.05..0.95);
            let th = rng.random_range(0.0..2.0 * PI);
            let len = rng.random_range(0.2..0.7);
            let bx = (ax + len * th.cos()).clamp(lo_x + 0.01, hi_x - 0.01);
            let by = (ay + len * th.sin()).clamp(lo_y + 0.01, hi_y - 0.01);
            let (a, b) = (unit_pt(ax, ay), unit_pt(bx, by));
            roads.push(Geometry::LineString(LineString::from(vec![coord! { x: a.0, y: a.1 }, coord! { x: b.0, y: b.1 }])));
        }
        for _ in 0..poisson(&mut rng, 1.0 + 8.0 * u[k]) {
            let cx = f64::from(t.x) + rng.random_range(0.1..0.9);
            let cy = f64::from(t.y) + rng.random_range(0.1..0.9);
            let (w, h) = (rng.random_range(0.02..0.08), rng.random_range(0.02..0.08));
            buildings.push(rect(cx - w, cy - h, cx + w, cy + h));
        }
    }
    let shapes = vec![
        PolygonShapeDataset { name: "roads".into(), shapes: roads },
        PolygonShapeDataset { name: "buildings".into(), shapes: buildings },
    ];

    // tile columns
    let mut noise = |sd: f64| -> Vec<f64> { (0..n).map(|_| sd * normal.sample(&mut rng)).collect() };
    let (e0, e1, e2, e3, e4) = (noise(0.1), noise(3.0), noise(2.0), noise(0.05), noise(5.0));
    let tile_columns = vec![
        TileColumn {
            name: TILE_FEATURES[0].into(),
            values: (0..n).map(|k| 2.0 * f64::from(u8::from(is_coarse(k))) + 0.5 * u[k] + e0[k]).collect(),
        },
        TileColumn { name: TILE_FEATURES[1].into(), values: (0..n).map(|k| (40.0 * u[k] * u[k] + e1[k]).max(0.0)).collect() },
        TileColumn { name: TILE_FEATURES[2].into(), values: (0..n).map(|k| (15.0 * u[k] + e2[k]).max(0.0)).collect() },
        TileColumn { name: TILE_FEATURES[3].into(), values: (0..n).map(|k| pop[k] * (0.65 + e3[k])).collect() },
        TileColumn { name: TILE_FEATURES[4].into(), values: (0..n).map(|k| (30.0 * u[k] + 20.0 * s4[k] + e4[k]).max(0.0)).collect() },
    ];

    let raw = RawInputs { points, zones, shapes, tile_columns };
    let (features, _) = harmonize(&raw, &universe)?;
    let column = |name: &str| -> Result<&Vec<f64>> {
        features
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.values)
            .ok_or_else(|| Error::Unknown { kind: "synthetic feature", name: name.to_string() })
    };

    // ground truth
    let mut y_std = vec![0.0; n];
    for p in &spec.planted {
        for (y, z) in y_std.iter_mut().zip(standardize(column(&p.name)?)) {
            *y += p.coef * z;
        }
    }
    let f = column(&spec.cross_feature)?;
    let mut block_sum: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    for k in 0..n {
        let e = block_sum.entry((k / per_city, block_of(k))).or_default();
        e.0 += f[k];
        e.1 += 1;
    }
    let block_mean: Vec<f64> = (0..n)
        .map(|k| {
            let (s, c) = block_sum[&(k / per_city, block_of(k))];
            s / c as f64
        })
        .collect();
    let (zf, zb) = (standardize(f), standardize(&block_mean));
    for k in 0..n {
        y_std[k] += spec.cross_scale * if is_coarse(k) { zb[k] } else { zf[k] };
    }
    if spec.noise_sd > 0.0 {
        let white: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let mut smooth = vec![0.0; n];
        for (k, s) in smooth.iter_mut().enumerate() {
            let (base, local) = (k - k % per_city, k % per_city);
            let (x, y) = ((local % side) as i64, (local / side) as i64);
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (0..side as i64).contains(&nx) && (0..side as i64).contains(&ny) {
                        acc += white[base + ny as usize * side + nx as usize];
                    }
                }
            }
            *s = acc;
        }
        for (y, z) in y_std.iter_mut().zip(standardize(&smooth)) {
            *y += spec.noise_sd * z;
        }
    }
    // keep the bandwidth proxy strictly positive even in extreme draws
    let truth: Vec<f64> = y_std.iter().map(|v| (spec.y_offset + spec.y_unit * v).max(1e-3)).collect();

    // one site and (mostly) one cell per tile, centered, radius inside the tile
    let mut sites = Vec::with_capacity(n);
    let mut cells = Vec::with_capacity(n);
    let peak = |h: u8| 0.35 + 0.65 * (-(f64::from(h) - 20.0).powi(2) / 18.0).exp();
    for (k, t) in tiles.iter().enumerate() {
        let disk = CoverageDisk::new(t.centroid(), 0.45 * t.width_m())?;
        let qk = t.quadkey();
        sites.push(SiteRecord { site_id: format!("s{qk}"), coverage: disk, bandwidth_mhz: truth[k], eirp: None });
        let tile_gain = (0.15 * normal.sample(&mut rng)).exp();
        let covered = !rng.random_bool(spec.uncovered_fraction);
        let mut throughput = BTreeMap::new();
        for day in 0..spec.days {
            for hour in 0..24u8 {
                let jitter = 1.0 + 0.03 * normal.sample(&mut rng);
                throughput.insert((day, hour), (0.8 * truth[k] * tile_gain * peak(hour) * jitter).max(0.0));
            }
        }
        if covered {
            cells.push(CellTrafficRecord { cell_id: format!("c{qk}"), coverage: disk, throughput });
        }
    }

    // land cover: built-up cores, otherwise by a smooth field
    let landcover = (0..n)
        .map(|k| {
            let s = s4[k];
            if u[k] > 0.5 {
                "built_up"
            } else if s > 0.6 {
                "tree_cover"
            } else if s > 0.25 {
                "grassland"
            } else {
                "cropland"
            }
            .to_string()
        })
        .collect();
    let region = (0..n).map(|k| if is_coarse(k) { REGION_COARSE } else { REGION_FINE }).collect();
    Ok(SyntheticData { tiles, city, landcover, raw, cells, sites, truth, region, features })
}
