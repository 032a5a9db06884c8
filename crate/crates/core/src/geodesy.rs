//! Spherical-earth helpers shared by the stages.

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Meters per degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Great-circle distance in meters.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Equirectangular projection about a fixed reference latitude/longitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub lat0: f64,
    pub lon0: f64,
    cos_lat0: f64,
}

impl LocalFrame {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        Self {
            lat0,
            lon0,
            cos_lat0: lat0.to_radians().cos(),
        }
    }

    pub fn to_xy(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            (lon - self.lon0) * self.cos_lat0 * METERS_PER_DEGREE,
            (lat - self.lat0) * METERS_PER_DEGREE,
        )
    }

    pub fn to_lat_lon(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.lat0 + y / METERS_PER_DEGREE,
            self.lon0 + x / (self.cos_lat0 * METERS_PER_DEGREE),
        )
    }
}

/// Distance from point `p` to the segment `a`-`b` in a planar frame.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let f = LocalFrame::new(42.03, -93.62);
        let (x, y) = f.to_xy(42.031, -93.619);
        let (lat, lon) = f.to_lat_lon(x, y);
        assert!((lat - 42.031).abs() < 1e-12);
        assert!((lon + 93.619).abs() < 1e-12);
    }

    #[test]
    fn haversine_quarter_meridian() {
        let d = haversine(0.0, 0.0, 90.0, 0.0);
        assert!((d - EARTH_RADIUS_M * std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        assert_eq!(point_segment_distance((0.0, 5.0), (0.0, 0.0), (10.0, 0.0)), 5.0);
        assert_eq!(point_segment_distance((-3.0, 4.0), (0.0, 0.0), (10.0, 0.0)), 5.0);
        assert_eq!(point_segment_distance((1.0, 1.0), (0.0, 0.0), (0.0, 0.0)), 2f64.sqrt());
    }
}
