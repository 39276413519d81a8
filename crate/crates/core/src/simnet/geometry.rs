use serde::{Deserialize, Serialize};

use crate::ledger::Geotag;

const METERS_PER_DEGREE: f64 = 111_320.0;

/// Planar position in meters relative to the scenario origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

/// Equirectangular projection between scenario meters and geotags. Good to
/// centimeters over the few kilometers a scenario spans.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Projection {
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl Default for Projection {
    fn default() -> Self {
        Projection {
            origin_lat: 45.0,
            origin_lon: 7.0,
        }
    }
}

impl Projection {
    fn lon_scale(&self) -> f64 {
        METERS_PER_DEGREE * self.origin_lat.to_radians().cos()
    }

    /// `None` only when the point falls outside valid coordinates.
    pub fn to_geotag(&self, p: &Point) -> Option<Geotag> {
        Geotag::from_degrees(
            self.origin_lat + p.y / METERS_PER_DEGREE,
            self.origin_lon + p.x / self.lon_scale(),
        )
    }

    pub fn to_point(&self, g: &Geotag) -> Point {
        Point::new(
            (g.longitude() - self.origin_lon) * self.lon_scale(),
            (g.latitude() - self.origin_lat) * METERS_PER_DEGREE,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_round_trips_to_centimeters() {
        let proj = Projection::default();
        for p in [Point::new(0.0, 0.0), Point::new(1234.5, -987.25), Point::new(-3000.0, 4000.0)] {
            let back = proj.to_point(&proj.to_geotag(&p).unwrap());
            assert!(p.distance(&back) < 0.02, "{p:?} -> {back:?}");
        }
    }

    #[test]
    fn distance_and_lerp() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(3.0, 4.0);
        assert_eq!(a.distance(&b), 5.0);
        assert_eq!(a.lerp(&b, 0.5), Point::new(1.5, 2.0));
    }
}
