//! Tile-level traffic targets, the deployed-bandwidth proxy and its
//! regression-based validation.
//!
//! Traffic flows from LTE cells to zoom-15 tiles in proportion to each cell's
//! coverage fraction on the tile. Deployed bandwidth flows from public site
//! records the same way, optionally scaled by a relative transmit-power
//! factor. Tiles whose summed cell coverage is below [`RELIABLE_COVERAGE`]
//! are flagged unreliable and kept out of the validation regression.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{disk_tile_overlap, CoverageDisk, TileId, TileUniverse, MAX_ZOOM};
use crate::stats;

/// Minimum summed coverage for a tile's traffic target to be trusted.
pub const RELIABLE_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CellTrafficRecord {
    pub cell_id: String,
    pub coverage: CoverageDisk,
    /// Downlink throughput in Mbps keyed by (day, hour).
    pub throughput: BTreeMap<(u32, u8), f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteRecord {
    pub site_id: String,
    pub coverage: CoverageDisk,
    pub bandwidth_mhz: f64,
    /// Average EIRP, already converted to a linear scale by the caller.
    pub eirp: Option<f64>,
}

impl SiteRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_mhz.is_finite() && self.bandwidth_mhz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "site {}: bandwidth must be positive, got {}",
                self.site_id, self.bandwidth_mhz
            )));
        }
        if let Some(p) = self.eirp {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidArgument(format!("site {}: eirp must be positive, got {p}", self.site_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileTarget {
    pub tile: TileId,
    pub traffic_mbps: f64,
    pub coverage_sum: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileProxy {
    pub tile: TileId,
    pub deployed_bw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    pub beta0: f64,
    pub beta1: f64,
    pub r_squared: f64,
    pub f_statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Maps a footprint to coverage fractions on tiles of a tile universe.
pub trait CoverageModel {
    /// `(tile index, fraction)` pairs with strictly positive fractions, in
    /// ascending tile-index order.
    fn coverage(&self, footprint: &CoverageDisk, universe: &TileUniverse) -> Vec<(usize, f64)>;
}

/// Fixed-radius omnidirectional disk evaluated by sub-tile point sampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiskCoverage;

impl CoverageModel for DiskCoverage {
    fn coverage(&self, footprint: &CoverageDisk, universe: &TileUniverse) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = footprint
            .candidate_tiles(universe.zoom())
            .into_iter()
            .filter_map(|t| universe.index_of(&t).map(|i| (i, t)))
            .map(|(i, t)| (i, disk_tile_overlap(footprint, t)))
            .filter(|&(_, c)| c > 0.0)
            .collect();
        out.sort_by_key(|&(i, _)| i);
        out
    }
}

fn finest_universe(tiles: &[TileId]) -> Result<TileUniverse> {
    if let Some(t) = tiles.iter().find(|t| t.zoom != MAX_ZOOM) {
        return Err(Error::InvalidArgument(format!("proxy tiles must be at zoom {MAX_ZOOM}, got {t}")));
    }
    TileUniverse::new(tiles)
}

/// Mean over days of the daily maximum hourly throughput.
pub fn busy_hour_mean(rec: &CellTrafficRecord) -> Result<f64> {
    let mut daily_max: BTreeMap<u32, f64> = BTreeMap::new();
    for (&(day, _hour), &mbps) in &rec.throughput {
        if !(mbps.is_finite() && mbps >= 0.0) {
            return Err(Error::InvalidArgument(format!("cell {}: throughput {mbps} on day {day}", rec.cell_id)));
        }
        let m = daily_max.entry(day).or_insert(f64::NEG_INFINITY);
        *m = m.max(mbps);
    }
    if daily_max.is_empty() {
        return Err(Error::Empty("cell traffic record"));
    }
    Ok(daily_max.values().sum::<f64>() / daily_max.len() as f64)
}

/// Coverage-proportional allocation of busy-hour cell traffic to tiles,
/// using the default disk coverage model.
pub fn allocate_traffic(cells: &[CellTrafficRecord], tiles: &[TileId]) -> Result<Vec<TileTarget>> {
    allocate_traffic_with(&DiskCoverage, cells, tiles)
}

pub fn allocate_traffic_with(
    model: &impl CoverageModel,
    cells: &[CellTrafficRecord],
    tiles: &[TileId],
) -> Result<Vec<TileTarget>> {
    let universe = finest_universe(tiles)?;
    let mut traffic = vec![0.0; universe.len()];
    let mut coverage_sum = vec![0.0; universe.len()];
    for cell in cells {
        let load = busy_hour_mean(cell)?;
        let cov = model.coverage(&cell.coverage, &universe);
        let total: f64 = cov.iter().map(|&(_, c)| c).sum();
        for &(i, c) in &cov {
            coverage_sum[i] += c;
            if total > 0.0 {
                traffic[i] += load * c / total;
            }
        }
    }
    Ok(universe
        .tiles()
        .iter()
        .zip(traffic.into_iter().zip(coverage_sum))
        .map(|(&tile, (traffic_mbps, coverage_sum))| TileTarget {
            tile,
            traffic_mbps,
            coverage_sum,
            reliable: coverage_sum >= RELIABLE_COVERAGE,
        })
        .collect())
}

/// Relative transmit-power factor per site. Sites without a reported power
/// get 1; the normalizing mean runs over reporting sites only.
pub fn power_weight(sites: &[SiteRecord]) -> Vec<f64> {
    let reported: Vec<f64> = sites.iter().filter_map(|s| s.eirp).collect();
    if reported.is_empty() {
        return vec![1.0; sites.len()];
    }
    let mean = stats::mean(&reported);
    sites.iter().map(|s| s.eirp.map_or(1.0, |p| p / mean)).collect()
}

pub fn build_proxy(sites: &[SiteRecord], tiles: &[TileId]) -> Result<Vec<TileProxy>> {
    build_proxy_with(&DiskCoverage, sites, tiles)
}

/// Deployed bandwidth per tile: each site's bandwidth spread over its
/// covered tiles with weights `c̃ φ / Σ c̃`.
///
/// With a site-constant `φ` the per-site allocation sums to `BW_s · φ_s`;
/// the factor is applied inside the weight so that a coverage model with
/// per-tile power variation slots in without changing this function.
pub fn build_proxy_with(model: &impl CoverageModel, sites: &[SiteRecord], tiles: &[TileId]) -> Result<Vec<TileProxy>> {
    let universe = finest_universe(tiles)?;
    for s in sites {
        s.validate()?;
    }
    let phi = power_weight(sites);
    let mut bw = vec![0.0; universe.len()];
    for (site, &phi_s) in sites.iter().zip(&phi) {
        let cov = model.coverage(&site.coverage, &universe);
        let total: f64 = cov.iter().map(|&(_, c)| c).sum();
        if total <= 0.0 {
            continue;
        }
        for &(i, c) in &cov {
            bw[i] += site.bandwidth_mhz * c * phi_s / total;
        }
    }
    Ok(universe
        .tiles()
        .iter()
        .zip(bw)
        .map(|(&tile, deployed_bw)| TileProxy { tile, deployed_bw })
        .collect())
}

/// `(BW_g, T_g)` pairs over reliable tiles present in both lists.
pub fn reliable_pairs(targets: &[TileTarget], proxies: &[TileProxy]) -> Vec<(f64, f64)> {
    let bw: HashMap<TileId, f64> = proxies.iter().map(|p| (p.tile, p.deployed_bw)).collect();
    targets
        .iter()
        .filter(|t| t.reliable)
        .filter_map(|t| bw.get(&t.tile).map(|&b| (b, t.traffic_mbps)))
        .collect()
}

/// Simple least squares of traffic on deployed bandwidth with the overall
/// F test of the slope.
pub fn ols_validate(pairs: &[(f64, f64)]) -> Result<OlsResult> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("OLS needs at least 3 observations, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("OLS input".into()));
    }
    let nf = n as f64;
    let xbar = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut sst) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - xbar) * (x - xbar);
        sxy += (x - xbar) * (y - ybar);
        sst += (y - ybar) * (y - ybar);
    }
    if sxx <= f64::EPSILON * nf * xbar.abs().max(1.0).powi(2) {
        return Err(Error::Degenerate("regressor has zero variance".into()));
    }
    let beta1 = sxy / sxx;
    let beta0 = ybar - beta1 * xbar;
    let sse: f64 = pairs.iter().map(|&(x, y)| (y - beta0 - beta1 * x).powi(2)).sum();
    let r_squared = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 0.0 };
    let df = nf - 2.0;
    let f_statistic = if r_squared >= 1.0 { f64::INFINITY } else { r_squared / (1.0 - r_squared) * df };
    let p_value = stats::f_sf(f_statistic, 1.0, df)?;
    Ok(OlsResult { beta0, beta1, r_squared, f_statistic, p_value, n })
}
