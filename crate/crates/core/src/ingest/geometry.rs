//! Planar geometry in Web-Mercator unit space, where every tile is an
//! axis-aligned square. Ground measures are recovered with the local
//! Mercator scale factor, which is constant to well under 0.1% across a
//! zoom-13 tile.

use std::f64::consts::PI;

use geo_types::{Coord, Geometry, LineString, Polygon};
use wkt::TryFromWkt;

use crate::error::{Error, Result};
use crate::geotile::{geodesic_distance, lonlat_to_unit, unit_to_lonlat, GeoPoint, TileId, EARTH_RADIUS_M};

/// A point in Mercator unit space: x east, y south, both in [0, 1).
pub type UnitPt = (f64, f64);

/// Axis-aligned rectangle in unit space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn of_tile(t: TileId) -> Rect {
        let n = f64::from(1u32 << t.zoom);
        Rect {
            x0: f64::from(t.x) / n,
            y0: f64::from(t.y) / n,
            x1: f64::from(t.x + 1) / n,
            y1: f64::from(t.y + 1) / n,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Tiles at `zoom` intersecting the rectangle, row-major.
    pub fn tiles(&self, zoom: u8) -> Vec<TileId> {
        let n = f64::from(1u32 << zoom);
        let lim = (1u32 << zoom) - 1;
        let ix = |v: f64| ((v * n).floor().max(0.0) as u32).min(lim);
        let (xa, xb, ya, yb) = (ix(self.x0), ix(self.x1), ix(self.y0), ix(self.y1));
        let mut out = Vec::new();
        for y in ya..=yb {
            for x in xa..=xb {
                out.push(TileId { zoom, x, y });
            }
        }
        out
    }
}

/// A repaired simple polygon in unit space; rings are open (first vertex
/// not repeated).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPolygon {
    pub exterior: Vec<UnitPt>,
    pub holes: Vec<Vec<UnitPt>>,
}

impl UnitPolygon {
    pub fn area(&self) -> f64 {
        ring_area(&self.exterior) - self.holes.iter().map(|h| ring_area(h)).sum::<f64>()
    }

    pub fn bbox(&self) -> Rect {
        bbox(&self.exterior)
    }

    pub fn clipped_area(&self, r: &Rect) -> f64 {
        let outer = ring_area(&clip_ring(&self.exterior, r));
        let holes: f64 = self.holes.iter().map(|h| ring_area(&clip_ring(h, r))).sum();
        (outer - holes).max(0.0)
    }

    /// Area-weighted centroid of the exterior ring.
    pub fn centroid(&self) -> UnitPt {
        let ring = &self.exterior;
        let o = ring[0];
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..ring.len() {
            let (p, q) = (ring[i], ring[(i + 1) % ring.len()]);
            let (p, q) = ((p.0 - o.0, p.1 - o.1), (q.0 - o.0, q.1 - o.1));
            let cross = p.0 * q.1 - q.0 * p.1;
            a2 += cross;
            cx += (p.0 + q.0) * cross;
            cy += (p.1 + q.1) * cross;
        }
        if a2.abs() < f64::MIN_POSITIVE {
            let n = ring.len() as f64;
            return (ring.iter().map(|p| p.0).sum::<f64>() / n, ring.iter().map(|p| p.1).sum::<f64>() / n);
        }
        (o.0 + cx / (3.0 * a2), o.1 + cy / (3.0 * a2))
    }
}

pub fn to_unit(c: Coord<f64>) -> UnitPt {
    lonlat_to_unit(c.x, c.y)
}

pub fn unit_to_point(p: UnitPt) -> GeoPoint {
    let (lon, lat) = unit_to_lonlat(p.0, p.1);
    GeoPoint { lat, lon }
}

/// Square meters per unit-space area at the latitude of `p`.
pub fn unit_area_scale(p: UnitPt) -> f64 {
    let lat = unit_to_point(p).lat.to_radians();
    let s = 2.0 * PI * EARTH_RADIUS_M * lat.cos();
    s * s
}

fn bbox(ring: &[UnitPt]) -> Rect {
    ring.iter().fold(
        Rect { x0: f64::INFINITY, y0: f64::INFINITY, x1: f64::NEG_INFINITY, y1: f64::NEG_INFINITY },
        |r, &(x, y)| Rect { x0: r.x0.min(x), y0: r.y0.min(y), x1: r.x1.max(x), y1: r.y1.max(y) },
    )
}

/// Absolute shoelace area of an open ring.
pub fn ring_area(ring: &[UnitPt]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    // shoelace relative to the first vertex; absolute unit coordinates
    // cancel badly at building scale
    let o = ring[0];
    let mut s = 0.0;
    for i in 1..ring.len() - 1 {
        let (p, q) = (ring[i], ring[i + 1]);
        s += (p.0 - o.0) * (q.1 - o.1) - (q.0 - o.0) * (p.1 - o.1);
    }
    0.5 * s.abs()
}

/// Sutherland–Hodgman clip of a ring against a rectangle. Concave input may
/// yield degenerate zero-width bridges along the rectangle edges, which do
/// not change the shoelace area.
pub fn clip_ring(ring: &[UnitPt], r: &Rect) -> Vec<UnitPt> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Top(f64),
        Bottom(f64),
    }
    let inside = |e: Edge, p: UnitPt| match e {
        Edge::Left(v) => p.0 >= v,
        Edge::Right(v) => p.0 <= v,
        Edge::Top(v) => p.1 >= v,
        Edge::Bottom(v) => p.1 <= v,
    };
    let cross = |e: Edge, a: UnitPt, b: UnitPt| match e {
        Edge::Left(v) | Edge::Right(v) => {
            let t = (v - a.0) / (b.0 - a.0);
            (v, a.1 + t * (b.1 - a.1))
        }
        Edge::Top(v) | Edge::Bottom(v) => {
            let t = (v - a.1) / (b.1 - a.1);
            (a.0 + t * (b.0 - a.0), v)
        }
    };
    let mut out = ring.to_vec();
    for e in [Edge::Left(r.x0), Edge::Right(r.x1), Edge::Top(r.y0), Edge::Bottom(r.y1)] {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(e, cur), inside(e, prev)) {
                (true, true) => out.push(cur),
                (true, false) => {
                    out.push(cross(e, prev, cur));
                    out.push(cur);
                }
                (false, true) => out.push(cross(e, prev, cur)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

/// Liang–Barsky clip of a segment; returns the parameter interval inside.
pub fn clip_segment(a: UnitPt, b: UnitPt, r: &Rect) -> Option<(UnitPt, UnitPt)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0 - r.x0), (dx, r.x1 - a.0), (-dy, a.1 - r.y0), (dy, r.y1 - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t0 >= t1 {
        return None;
    }
    Some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

/// Ground length in meters of a unit-space segment.
pub fn segment_length_m(a: UnitPt, b: UnitPt) -> f64 {
    geodesic_distance(unit_to_point(a), unit_to_point(b))
}

/// Removes the closing vertex and consecutive duplicates. Returns `None` when
/// fewer than three distinct vertices remain, the ring has zero area, or two
/// non-adjacent edges intersect.
pub fn repair_ring(ring: &LineString<f64>) -> Option<Vec<UnitPt>> {
    let mut pts: Vec<UnitPt> = Vec::with_capacity(ring.0.len());
    for &c in &ring.0 {
        if !(c.x.is_finite() && c.y.is_finite()) {
            return None;
        }
        let p = to_unit(c);
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    while pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 || ring_area(&pts) <= 0.0 || !is_simple(&pts) {
        return None;
    }
    Some(pts)
}

pub fn repair_polygon(p: &Polygon<f64>) -> Option<UnitPolygon> {
    let exterior = repair_ring(p.exterior())?;
    // Holes that cannot be repaired are dropped; the exterior still stands.
    let holes = p.interiors().iter().filter_map(repair_ring).collect();
    Some(UnitPolygon { exterior, holes })
}

fn is_simple(ring: &[UnitPt]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn orient(a: UnitPt, b: UnitPt, c: UnitPt) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_intersect(a: UnitPt, b: UnitPt, c: UnitPt, d: UnitPt) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    let on = |p: UnitPt, q: UnitPt, r: UnitPt| {
        r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
    };
    (o1 == 0.0 && on(a, b, c)) || (o2 == 0.0 && on(a, b, d)) || (o3 == 0.0 && on(c, d, a)) || (o4 == 0.0 && on(c, d, b))
}

pub fn parse_wkt(s: &str) -> Result<Geometry<f64>> {
    Geometry::try_from_wkt_str(s).map_err(|e| Error::InvalidArgument(format!("bad WKT {s:?}: {e}")))
}

/// Polygons contained in a geometry (polygon or multipolygon).
pub fn polygons(g: &Geometry<f64>) -> Vec<&Polygon<f64>> {
    match g {
        Geometry::Polygon(p) => vec![p],
        Geometry::MultiPolygon(mp) => mp.0.iter().collect(),
        Geometry::GeometryCollection(gc) => gc.0.iter().flat_map(polygons).collect(),
        _ => Vec::new(),
    }
}

/// Line strings contained in a geometry (line string or multi line string).
pub fn lines(g: &Geometry<f64>) -> Vec<&LineString<f64>> {
    match g {
        Geometry::LineString(l) => vec![l],
        Geometry::MultiLineString(ml) => ml.0.iter().collect(),
        Geometry::Line(_) => Vec::new(),
        Geometry::GeometryCollection(gc) => gc.0.iter().flat_map(lines).collect(),
        _ => Vec::new(),
    }
}
