//! Coordinates and the local equirectangular meter plane.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84 position in degrees. Serialized as `[lon, lat]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

impl From<[f64; 2]> for LonLat {
    fn from([lon, lat]: [f64; 2]) -> Self {
        Self { lon, lat }
    }
}

impl From<LonLat> for [f64; 2] {
    fn from(p: LonLat) -> Self {
        [p.lon, p.lat]
    }
}

/// A point in the local meter plane (x east, y north).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Meters {
    pub x: f64,
    pub y: f64,
}

impl Meters {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Meters) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Meters, t: f64) -> Meters {
        Meters::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

/// Equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin: LonLat,
    cos_lat0: f64,
}

impl Projection {
    pub fn new(origin: LonLat) -> Self {
        Self {
            origin,
            cos_lat0: origin.lat.to_radians().cos(),
        }
    }

    pub fn origin(&self) -> LonLat {
        self.origin
    }

    pub fn project(&self, p: LonLat) -> Meters {
        Meters {
            x: EARTH_RADIUS_M * (p.lon - self.origin.lon).to_radians() * self.cos_lat0,
            y: EARTH_RADIUS_M * (p.lat - self.origin.lat).to_radians(),
        }
    }

    pub fn unproject(&self, m: Meters) -> LonLat {
        LonLat {
            lon: self.origin.lon + (m.x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees(),
            lat: self.origin.lat + (m.y / EARTH_RADIUS_M).to_degrees(),
        }
    }
}

/// Closest point on segment `a`-`b` to `p`, clamped to the endpoints.
/// Returns the point and the parameter `t` in `[0, 1]`.
pub fn project_on_segment(p: Meters, a: Meters, b: Meters) -> (Meters, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    (a.lerp(b, t), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_maps_to_zero() {
        let proj = Projection::new(LonLat::new(127.03, 37.5));
        let m = proj.project(LonLat::new(127.03, 37.5));
        assert_eq!(m, Meters::new(0.0, 0.0));
    }

    #[test]
    fn north_offset_in_meters() {
        let proj = Projection::new(LonLat::new(127.03, 37.5));
        let m = proj.project(LonLat::new(127.03, 37.501));
        // 6371000 * 0.001 * pi / 180
        assert!((m.y - 111.1949).abs() < 0.1, "{}", m.y);
        assert!(m.x.abs() < 1e-9);
    }

    #[test]
    fn segment_projection_clamps() {
        let a = Meters::new(0.0, 0.0);
        let b = Meters::new(10.0, 0.0);
        let (q, t) = project_on_segment(Meters::new(-5.0, 3.0), a, b);
        assert_eq!((q, t), (a, 0.0));
        let (q, t) = project_on_segment(Meters::new(4.0, 3.0), a, b);
        assert_eq!(q, Meters::new(4.0, 0.0));
        assert!((t - 0.4).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn project_round_trip(dlon in -0.1f64..0.1, dlat in -0.1f64..0.1) {
            let origin = LonLat::new(127.03, 37.5);
            let proj = Projection::new(origin);
            let p = LonLat::new(origin.lon + dlon, origin.lat + dlat);
            let back = proj.unproject(proj.project(p));
            prop_assert!((back.lon - p.lon).abs() < 1e-9);
            prop_assert!((back.lat - p.lat).abs() < 1e-9);
        }
    }
}
