//! Splits journey polylines into per-cell chains.
//!
//! Every segment is clipped against each cell it geometrically crosses,
//! not only the cells holding its end vertices. Clipping is parametric
//! (Liang-Barsky) in degree space, where cell boundaries are axis-aligned;
//! the equirectangular cell frame is affine in latitude and longitude, so
//! crossings map exactly onto the cell rectangle in meters.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geocell::{BBox, CellIndex, GeoCell, Precision};
use crate::geodesy::METERS_PER_DEGREE;
use crate::ingest::Journey;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipVertex {
    /// Meters east of the cell's west edge.
    pub x: f64,
    /// Meters north of the cell's south edge.
    pub y: f64,
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub journey_id: String,
    /// Position along the source journey: segment index plus the clip
    /// parameter of the first vertex.
    pub start: f64,
    pub vertices: Vec<ClipVertex>,
}

impl Chain {
    pub fn length(&self) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileClip {
    pub cell: GeoCell,
    pub chains: Vec<Chain>,
    /// Waypoints falling inside the cell.
    pub point_count: usize,
}

impl TileClip {
    pub fn empty(cell: GeoCell) -> Self {
        Self {
            cell,
            chains: Vec::new(),
            point_count: 0,
        }
    }

    pub fn frame(&self) -> CellFrame {
        CellFrame::new(&self.cell.bbox)
    }

    /// Cell rectangle size in meters, `(width, height)`.
    pub fn size_m(&self) -> (f64, f64) {
        self.frame().size_m()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }
}

/// Equirectangular frame anchored at a cell's south-west corner, scaled by
/// the cosine of the cell's center latitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFrame {
    bbox: BBox,
    kx: f64,
}

impl CellFrame {
    pub fn new(bbox: &BBox) -> Self {
        let lat_c = (bbox.lat_min + bbox.lat_max) / 2.0;
        Self {
            bbox: *bbox,
            kx: lat_c.to_radians().cos() * METERS_PER_DEGREE,
        }
    }

    pub fn to_xy(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            (lon - self.bbox.lon_min) * self.kx,
            (lat - self.bbox.lat_min) * METERS_PER_DEGREE,
        )
    }

    pub fn size_m(&self) -> (f64, f64) {
        self.to_xy(self.bbox.lat_max, self.bbox.lon_max)
    }
}

/// Parameter interval of segment `a`-`b` inside the closed box, with
/// points given as (lat, lon).
pub fn clip_segment(a: (f64, f64), b: (f64, f64), bbox: &BBox) -> Option<(f64, f64)> {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [
        (-dx, a.1 - bbox.lon_min),
        (dx, bbox.lon_max - a.1),
        (-dy, a.0 - bbox.lat_min),
        (dy, bbox.lat_max - a.0),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                if r > t1 {
                    return None;
                }
                t0 = t0.max(r);
            } else {
                if r < t0 {
                    return None;
                }
                t1 = t1.min(r);
            }
        }
    }
    Some((t0, t1))
}

type Sample = (f64, f64, Option<f64>);

fn interpolate(a: &Sample, b: &Sample, t: f64, bbox: &BBox) -> Sample {
    if t == 0.0 {
        return *a;
    }
    if t == 1.0 {
        return *b;
    }
    let lat = (a.0 + t * (b.0 - a.0)).clamp(bbox.lat_min, bbox.lat_max);
    let lon = (a.1 + t * (b.1 - a.1)).clamp(bbox.lon_min, bbox.lon_max);
    let speed = match (a.2, b.2) {
        (Some(sa), Some(sb)) => Some(sa + t * (sb - sa)),
        _ => None,
    };
    (lat, lon, speed)
}

/// Collects clipped pieces of consecutive segments into maximal chains.
#[derive(Default)]
struct ChainBuilder {
    chains: Vec<(f64, Vec<Sample>)>,
    /// Ordinal of the last non-degenerate segment whose piece reached its end.
    open: Option<usize>,
}

impl ChainBuilder {
    fn push(&mut self, ordinal: usize, param: f64, t: (f64, f64), from: Sample, to: Sample) {
        match self.chains.last_mut() {
            Some((_, chain)) if t.0 == 0.0 && ordinal > 0 && self.open == Some(ordinal - 1) => {
                chain.push(to);
            }
            _ => self.chains.push((param, vec![from, to])),
        }
        self.open = (t.1 == 1.0).then_some(ordinal);
    }

    fn finish(self, bbox: &BBox, journey_id: &str) -> Vec<Chain> {
        let frame = CellFrame::new(bbox);
        self.chains
            .into_iter()
            .map(|(start, samples)| Chain {
                journey_id: journey_id.to_owned(),
                start,
                vertices: samples
                    .into_iter()
                    .map(|(lat, lon, speed)| {
                        let (x, y) = frame.to_xy(lat, lon);
                        ClipVertex { x, y, speed }
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Clips a `(lat, lon, speed)` polyline to a cell, returning each maximal
/// inside run as a chain in the cell frame.
pub fn clip_polyline(chain: &[Sample], cell: &GeoCell) -> Vec<Vec<ClipVertex>> {
    let mut builder = ChainBuilder::default();
    let mut ordinal = 0;
    for (k, w) in chain.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if (a.0, a.1) == (b.0, b.1) {
            continue;
        }
        if let Some(t) = clip_segment((a.0, a.1), (b.0, b.1), &cell.bbox) {
            if t.1 > t.0 {
                let from = interpolate(a, b, t.0, &cell.bbox);
                let to = interpolate(a, b, t.1, &cell.bbox);
                builder.push(ordinal, k as f64 + t.0, t, from, to);
            }
        }
        ordinal += 1;
    }
    builder.finish(&cell.bbox, "").into_iter().map(|c| c.vertices).collect()
}

struct JourneyTiles {
    chains: Vec<(CellIndex, Vec<Chain>)>,
    points: HashMap<CellIndex, usize>,
}

fn tile_journey(journey: &Journey, precision: Precision) -> JourneyTiles {
    let samples: Vec<Sample> = journey.points.iter().map(|p| (p.lat, p.lon, p.speed)).collect();
    let mut builders: BTreeMap<CellIndex, ChainBuilder> = BTreeMap::new();
    let mut ordinal = 0;
    for (k, w) in samples.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if (a.0, a.1) == (b.0, b.1) {
            continue;
        }
        let ia = precision.index_of(a.0, a.1);
        let ib = precision.index_of(b.0, b.1);
        let mut pieces = Vec::new();
        for row in ia.row.min(ib.row)..=ia.row.max(ib.row) {
            for col in ia.col.min(ib.col)..=ia.col.max(ib.col) {
                let idx = CellIndex { row, col };
                let bbox = precision.bbox_of(idx);
                let Some(t) = clip_segment((a.0, a.1), (b.0, b.1), &bbox) else {
                    continue;
                };
                if t.1 <= t.0 {
                    continue;
                }
                // A piece lying on a shared edge belongs to the upper cell only.
                let tm = (t.0 + t.1) / 2.0;
                let mid = (a.0 + tm * (b.0 - a.0), a.1 + tm * (b.1 - a.1));
                if precision.index_of(mid.0, mid.1) != idx {
                    continue;
                }
                pieces.push((idx, t, bbox));
            }
        }
        pieces.sort_by(|x, y| x.1 .0.total_cmp(&y.1 .0));
        for (idx, t, bbox) in pieces {
            let from = interpolate(a, b, t.0, &bbox);
            let to = interpolate(a, b, t.1, &bbox);
            builders
                .entry(idx)
                .or_default()
                .push(ordinal, k as f64 + t.0, t, from, to);
        }
        ordinal += 1;
    }
    let mut points = HashMap::new();
    for s in &samples {
        *points.entry(precision.index_of(s.0, s.1)).or_insert(0) += 1;
    }
    JourneyTiles {
        chains: builders
            .into_iter()
            .map(|(idx, b)| (idx, b.finish(&precision.bbox_of(idx), &journey.id)))
            .collect(),
        points,
    }
}

/// Clips every journey into the cells it crosses at `precision`. Keys are
/// geohash codes in lexicographic order; chains inside a tile are ordered
/// by `(journey_id, start)`.
pub fn assign_tiles(journeys: &[Journey], precision: Precision) -> BTreeMap<String, TileClip> {
    let per_journey: Vec<JourneyTiles> = journeys.par_iter().map(|j| tile_journey(j, precision)).collect();
    let mut by_index: BTreeMap<CellIndex, TileClip> = BTreeMap::new();
    for jt in &per_journey {
        for (idx, chains) in &jt.chains {
            by_index
                .entry(*idx)
                .or_insert_with(|| TileClip::empty(precision.cell(*idx)))
                .chains
                .extend(chains.iter().cloned());
        }
    }
    for jt in &per_journey {
        for (idx, n) in &jt.points {
            if let Some(tile) = by_index.get_mut(idx) {
                tile.point_count += n;
            }
        }
    }
    by_index
        .into_values()
        .map(|mut tile| {
            tile.chains
                .sort_by(|a, b| a.journey_id.cmp(&b.journey_id).then(a.start.total_cmp(&b.start)));
            (tile.cell.code.clone(), tile)
        })
        .collect()
}

/// One JSON object per tile: `{code, point_count, chain_count, bbox}`.
pub fn write_tile_index<'a, W: Write>(mut sink: W, tiles: impl IntoIterator<Item = &'a TileClip>) -> Result<()> {
    for t in tiles {
        let record = json!({
            "code": t.cell.code,
            "point_count": t.point_count,
            "chain_count": t.chains.len(),
            "bbox": t.cell.bbox,
        });
        writeln!(sink, "{record}").map_err(|e| Error::Input(e.to_string()))?;
    }
    Ok(())
}
