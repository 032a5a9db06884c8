//! Waypoint CSV loading, journey assembly and reference-network gating.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{point_segment_distance, LocalFrame};
use crate::simgen::RoadNetwork;

pub const WAYPOINT_HEADER: [&str; 5] = ["journey_id", "timestamp_ms", "lat", "lon", "speed_mps"];

/// Default off-road gate in meters.
pub const DEFAULT_MAX_OFFSET_M: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WayPoint {
    pub journey_id: String,
    /// Epoch milliseconds.
    pub t: i64,
    pub lat: f64,
    pub lon: f64,
    /// Meters per second.
    pub speed: Option<f64>,
}

impl WayPoint {
    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.speed.is_none_or(|s| s.is_finite() && s >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Journey {
    pub id: String,
    pub points: Vec<WayPoint>,
}

impl Journey {
    pub fn is_valid(&self) -> bool {
        self.points.len() >= 2
            && self.points.iter().all(|p| p.journey_id == self.id && p.is_valid())
            && self.points.windows(2).all(|w| w[0].t < w[1].t)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub points: Vec<WayPoint>,
    pub rejected: usize,
}

#[derive(Debug, Clone, Default)]
pub struct JourneySet {
    pub journeys: Vec<Journey>,
    /// Groups left with fewer than two distinct timestamps.
    pub dropped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub journeys: Vec<Journey>,
    pub removed_points: usize,
    pub dropped_journeys: usize,
}

struct Columns {
    id: usize,
    t: usize,
    lat: usize,
    lon: usize,
    speed: usize,
}

fn input_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) | csv::ErrorKind::Utf8 { .. } => Error::Input(e.to_string()),
        _ => Error::Format(e.to_string()),
    }
}

/// Parses waypoint CSV. Rows that fail to parse or violate the waypoint
/// invariants are skipped and counted in `rejected`.
pub fn load_waypoints<R: Read>(source: R) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(input_error)?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("waypoint header is missing column `{name}`")))
    };
    let cols = Columns {
        id: find("journey_id")?,
        t: find("timestamp_ms")?,
        lat: find("lat")?,
        lon: find("lon")?,
        speed: find("speed_mps")?,
    };

    let mut report = LoadReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => match parse_row(&record, &cols) {
                Some(p) if p.is_valid() => report.points.push(p),
                _ => report.rejected += 1,
            },
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(input_error(e)),
            Err(_) => report.rejected += 1,
        }
    }
    Ok(report)
}

fn parse_row(record: &csv::StringRecord, cols: &Columns) -> Option<WayPoint> {
    let field = |i: usize| record.get(i).filter(|s| !s.is_empty());
    let number = |i: usize| field(i)?.parse::<f64>().ok().filter(|v| v.is_finite());
    let speed = match field(cols.speed) {
        None => None,
        Some(s) => Some(s.parse::<f64>().ok()?),
    };
    Some(WayPoint {
        journey_id: field(cols.id)?.to_owned(),
        t: field(cols.t)?.parse().ok()?,
        lat: number(cols.lat)?,
        lon: number(cols.lon)?,
        speed,
    })
}

/// Writes waypoints in the ingest CSV format.
pub fn write_waypoints<'a, W, I>(sink: W, points: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a WayPoint>,
{
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(WAYPOINT_HEADER).map_err(input_error)?;
    for p in points {
        let speed = p.speed.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([
            p.journey_id.as_str(),
            &p.t.to_string(),
            &p.lat.to_string(),
            &p.lon.to_string(),
            &speed,
        ])
        .map_err(input_error)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}

fn point_order(a: &WayPoint, b: &WayPoint) -> std::cmp::Ordering {
    let speed = |p: &WayPoint| p.speed.unwrap_or(-1.0);
    a.t.cmp(&b.t)
        .then(a.lat.total_cmp(&b.lat))
        .then(a.lon.total_cmp(&b.lon))
        .then(speed(a).total_cmp(&speed(b)))
}

/// Groups points into journeys sorted by id, each sorted by time. Of several
/// points sharing a timestamp only the first in `(t, lat, lon, speed)` order
/// survives, which keeps the result independent of input order.
pub fn build_journeys(points: impl IntoIterator<Item = WayPoint>) -> JourneySet {
    let mut groups: BTreeMap<String, Vec<WayPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(p.journey_id.clone()).or_default().push(p);
    }
    let mut set = JourneySet::default();
    for (id, mut pts) in groups {
        pts.sort_by(point_order);
        pts.dedup_by(|later, first| later.t == first.t);
        if pts.len() >= 2 {
            set.journeys.push(Journey { id, points: pts });
        } else {
            set.dropped += 1;
        }
    }
    set
}

/// Removes waypoints farther than `max_offset` meters from every network edge
/// and drops journeys left with fewer than two points.
pub fn filter_to_reference(journeys: &[Journey], network: &RoadNetwork, max_offset: f64) -> Result<FilterOutcome> {
    if network.edges.is_empty() {
        return Err(Error::Config("reference network has no edges".into()));
    }
    if !(max_offset > 0.0 && max_offset.is_finite()) {
        return Err(Error::Config(format!("max_offset must be positive, got {max_offset}")));
    }
    let filtered: Vec<(Journey, usize)> = journeys
        .par_iter()
        .map(|j| {
            let kept: Vec<WayPoint> = j
                .points
                .iter()
                .filter(|p| distance_to_network(p.lat, p.lon, network, max_offset) <= max_offset)
                .cloned()
                .collect();
            let removed = j.points.len() - kept.len();
            (
                Journey {
                    id: j.id.clone(),
                    points: kept,
                },
                removed,
            )
        })
        .collect();
    let mut out = FilterOutcome::default();
    for (j, removed) in filtered {
        out.removed_points += removed;
        if j.points.len() >= 2 {
            out.journeys.push(j);
        } else {
            out.dropped_journeys += 1;
        }
    }
    Ok(out)
}

/// Distance in meters from a point to the nearest network edge, measured on
/// an equirectangular projection about the point. Edges whose bounding box
/// lies farther than `cutoff` are skipped, so results beyond the cutoff are
/// only lower-bounded by it.
pub fn distance_to_network(lat: f64, lon: f64, network: &RoadNetwork, cutoff: f64) -> f64 {
    let frame = LocalFrame::new(lat, lon);
    let (dlat, dlon) = {
        let (la, lo) = frame.to_lat_lon(cutoff, cutoff);
        ((la - lat).abs(), (lo - lon).abs())
    };
    let mut best = f64::INFINITY;
    for e in &network.edges {
        let (a, b) = (&network.nodes[e.a], &network.nodes[e.b]);
        if lat + dlat < a.lat.min(b.lat)
            || lat - dlat > a.lat.max(b.lat)
            || lon + dlon < a.lon.min(b.lon)
            || lon - dlon > a.lon.max(b.lon)
        {
            continue;
        }
        let d = point_segment_distance((0.0, 0.0), frame.to_xy(a.lat, a.lon), frame.to_xy(b.lat, b.lon));
        best = best.min(d);
    }
    best
}
