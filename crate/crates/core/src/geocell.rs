//! Geohash cells: encoding, decoding and metric cell dimensions.
//!
//! Codes interleave longitude and latitude bisection bits, longitude first,
//! five bits per base-32 character. A coordinate lying exactly on a split
//! belongs to the upper (north/east) half, so `encode` is total over the
//! closed coordinate ranges.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{haversine, METERS_PER_DEGREE};

pub const ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

pub const MAX_PRECISION: u8 = 12;

/// Geohash code length, 1 through 12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Precision(u8);

impl Precision {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=MAX_PRECISION).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!(
                "geohash precision {value} outside 1..={MAX_PRECISION}"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn lon_bits(self) -> u32 {
        (5 * self.0 as u32).div_ceil(2)
    }

    pub fn lat_bits(self) -> u32 {
        5 * self.0 as u32 / 2
    }

    /// Cell span in degrees as (latitude, longitude).
    pub fn span_degrees(self) -> (f64, f64) {
        (
            180.0 / (1u64 << self.lat_bits()) as f64,
            360.0 / (1u64 << self.lon_bits()) as f64,
        )
    }

    /// Row/column of the cell containing a coordinate. Callers must pass
    /// in-range coordinates.
    pub fn index_of(self, lat: f64, lon: f64) -> CellIndex {
        CellIndex {
            row: bisect(lat, -90.0, 90.0, self.lat_bits()),
            col: bisect(lon, -180.0, 180.0, self.lon_bits()),
        }
    }

    pub fn bbox_of(self, idx: CellIndex) -> BBox {
        let (dlat, dlon) = self.span_degrees();
        let lat_min = -90.0 + idx.row as f64 * dlat;
        let lon_min = -180.0 + idx.col as f64 * dlon;
        BBox {
            lat_min,
            lat_max: lat_min + dlat,
            lon_min,
            lon_max: lon_min + dlon,
        }
    }

    pub fn code_of(self, idx: CellIndex) -> String {
        let total = 5 * self.0 as u32;
        let (lat_bits, lon_bits) = (self.lat_bits(), self.lon_bits());
        let mut code = String::with_capacity(self.0 as usize);
        let mut ch = 0usize;
        let (mut used_lat, mut used_lon) = (0, 0);
        for bit in 0..total {
            let b = if bit.is_multiple_of(2) {
                used_lon += 1;
                (idx.col >> (lon_bits - used_lon)) & 1
            } else {
                used_lat += 1;
                (idx.row >> (lat_bits - used_lat)) & 1
            };
            ch = (ch << 1) | b as usize;
            if bit % 5 == 4 {
                code.push(ALPHABET[ch] as char);
                ch = 0;
            }
        }
        code
    }

    pub fn cell(self, idx: CellIndex) -> GeoCell {
        GeoCell {
            code: self.code_of(idx),
            precision: self,
            bbox: self.bbox_of(idx),
        }
    }
}

impl TryFrom<u8> for Precision {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Precision::new(value)
    }
}

impl From<Precision> for u8 {
    fn from(p: Precision) -> u8 {
        p.0
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Integer cell coordinates on the uniform grid of one precision level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    /// Closed containment.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }

    pub fn contains_bbox(&self, other: &BBox) -> bool {
        self.lat_min <= other.lat_min
            && other.lat_max <= self.lat_max
            && self.lon_min <= other.lon_min
            && other.lon_max <= self.lon_max
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoCell {
    pub code: String,
    pub precision: Precision,
    pub bbox: BBox,
}

fn bisect(value: f64, mut lo: f64, mut hi: f64, bits: u32) -> u32 {
    let mut idx = 0u32;
    for _ in 0..bits {
        let mid = (lo + hi) / 2.0;
        idx <<= 1;
        if value >= mid {
            idx |= 1;
            lo = mid;
        } else {
            hi = mid;
        }
    }
    idx
}

fn check_coordinate(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Domain(format!("coordinate ({lat}, {lon}) outside WGS84 range")));
    }
    Ok(())
}

/// Geohash cell containing `(lat, lon)` at the given precision.
pub fn encode(lat: f64, lon: f64, precision: Precision) -> Result<GeoCell> {
    check_coordinate(lat, lon)?;
    Ok(precision.cell(precision.index_of(lat, lon)))
}

/// Decodes a geohash into its cell.
pub fn cell_bounds(code: &str) -> Result<GeoCell> {
    let precision = u8::try_from(code.len())
        .ok()
        .and_then(|n| Precision::new(n).ok())
        .ok_or_else(|| Error::Format(format!("geohash {code:?} must have 1..=12 characters")))?;
    let (mut row, mut col) = (0u32, 0u32);
    let mut bit = 0u32;
    for c in code.bytes() {
        let value = ALPHABET
            .iter()
            .position(|&a| a == c)
            .ok_or_else(|| Error::Format(format!("invalid geohash character {:?}", c as char)))?;
        for shift in (0..5).rev() {
            let b = ((value >> shift) & 1) as u32;
            if bit.is_multiple_of(2) {
                col = (col << 1) | b;
            } else {
                row = (row << 1) | b;
            }
            bit += 1;
        }
    }
    Ok(precision.cell(CellIndex { row, col }))
}

/// Metric cell size `(width, height)` in meters for the latitude band
/// containing `lat`. Width is the great-circle length of the band's southern
/// edge; height is the meridional extent.
pub fn cell_dimensions(precision: Precision, lat: f64) -> (f64, f64) {
    let (dlat, dlon) = precision.span_degrees();
    let row = bisect(lat.clamp(-90.0, 90.0), -90.0, 90.0, precision.lat_bits());
    let south = -90.0 + row as f64 * dlat;
    let width = haversine(south, 0.0, south, dlon);
    (width, dlat * METERS_PER_DEGREE)
}
