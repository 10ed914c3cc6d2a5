//! Spherical geometry helpers.

use serde::{Deserialize, Serialize};

use crate::model::GeoPoint;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Axis-aligned lat/lon rectangle, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoRect {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl GeoRect {
    pub const WORLD: GeoRect = GeoRect {
        min_lat: -90.0,
        max_lat: 90.0,
        min_lon: -180.0,
        max_lon: 180.0,
    };

    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Self {
        GeoRect {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.min_lat < self.max_lat
            && self.min_lon < self.max_lon
            && GeoPoint {
                lat: self.min_lat,
                lon: self.min_lon,
            }
            .is_valid()
            && GeoPoint {
                lat: self.max_lat,
                lon: self.max_lon,
            }
            .is_valid()
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat
            && p.lat <= self.max_lat
            && p.lon >= self.min_lon
            && p.lon <= self.max_lon
    }

    pub fn mid(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.min_lat + self.max_lat) / 2.0,
            lon: (self.min_lon + self.max_lon) / 2.0,
        }
    }

    /// Quadrant index of `p` relative to the midpoint: bit 0 = east, bit 1 = north.
    pub fn quadrant_of(&self, p: GeoPoint) -> usize {
        let m = self.mid();
        let east = (p.lon >= m.lon) as usize;
        let north = (p.lat >= m.lat) as usize;
        east | (north << 1)
    }

    pub fn quadrant(&self, q: usize) -> GeoRect {
        let m = self.mid();
        let (min_lon, max_lon) = if q & 1 == 1 {
            (m.lon, self.max_lon)
        } else {
            (self.min_lon, m.lon)
        };
        let (min_lat, max_lat) = if q & 2 == 2 {
            (m.lat, self.max_lat)
        } else {
            (self.min_lat, m.lat)
        };
        GeoRect {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        }
    }

    /// Width along the equator-parallel through the center, in meters.
    pub fn width_m(&self) -> f64 {
        let c = self.mid();
        haversine_m(
            GeoPoint {
                lat: c.lat,
                lon: self.min_lon,
            },
            GeoPoint {
                lat: c.lat,
                lon: c.lon,
            },
        ) + haversine_m(
            GeoPoint {
                lat: c.lat,
                lon: c.lon,
            },
            GeoPoint {
                lat: c.lat,
                lon: self.max_lon,
            },
        )
    }

    /// Lower bound on the great-circle distance (meters) from `p` to any
    /// point of the rectangle. Zero when `p` lies inside.
    ///
    /// Two bounds are combined: the latitude gap (a path can never be
    /// shorter than its latitude change) and, when `p` is outside the
    /// longitude span, the distance to the nearer bounding half-meridian.
    /// The result is shaved slightly so that float rounding in
    /// [`haversine_m`] can never put an interior point below it.
    pub fn min_distance_lower_bound_m(&self, p: GeoPoint) -> f64 {
        let lat_gap = if p.lat > self.max_lat {
            p.lat - self.max_lat
        } else if p.lat < self.min_lat {
            self.min_lat - p.lat
        } else {
            0.0
        }
        .to_radians();

        let in_lon = p.lon >= self.min_lon && p.lon <= self.max_lon;
        let angle = if in_lon {
            lat_gap
        } else {
            let phi = p.lat.to_radians();
            let to_meridian = |edge: f64| -> f64 {
                let mut d = (p.lon - edge).abs() % 360.0;
                if d > 180.0 {
                    d = 360.0 - d;
                }
                let dl = d.to_radians();
                if dl <= std::f64::consts::FRAC_PI_2 {
                    (phi.cos() * dl.sin()).clamp(0.0, 1.0).asin()
                } else {
                    std::f64::consts::FRAC_PI_2 - phi.abs()
                }
            };
            let cross = to_meridian(self.min_lon).min(to_meridian(self.max_lon));
            lat_gap.max(cross)
        };
        if angle <= 0.0 {
            return 0.0;
        }
        (EARTH_RADIUS_M * angle * (1.0 - 1e-9) - 1e-6).max(0.0)
    }
}

/// Quadtree cell id (Morton order) of `p` at `depth` levels below the world rectangle.
pub fn cell_id(p: GeoPoint, depth: u32) -> u64 {
    let side = 1u64 << depth;
    let row = (((p.lat + 90.0) / 180.0) * side as f64).floor();
    let col = (((p.lon + 180.0) / 360.0) * side as f64).floor();
    let row = (row.max(0.0) as u64).min(side - 1);
    let col = (col.max(0.0) as u64).min(side - 1);
    let mut id = 0u64;
    for bit in 0..depth {
        id |= ((col >> bit) & 1) << (2 * bit);
        id |= ((row >> bit) & 1) << (2 * bit + 1);
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    #[test]
    fn equator_arc_matches_radius_times_angle() {
        // Along the equator the great circle is the equator itself, so the
        // distance is R * Δλ in radians.
        let d = haversine_m(pt(0.0, 0.0), pt(0.0, 0.045));
        assert!((d - 5003.771699005142).abs() < 1e-6, "{d}");
    }

    #[test]
    fn antipodes_are_half_circumference() {
        let d = haversine_m(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-3);
    }

    #[test]
    fn quadrants_tile_parent() {
        let r = GeoRect::WORLD;
        for q in 0..4 {
            let c = r.quadrant(q);
            assert_eq!(r.quadrant_of(c.mid()), q);
        }
    }

    #[test]
    fn cell_ids_at_depth_eight() {
        assert_eq!(cell_id(pt(-90.0, -180.0), 8), 0);
        assert_eq!(cell_id(pt(90.0, 180.0), 8), (1 << 16) - 1);
        assert_ne!(cell_id(pt(10.0, 10.0), 8), cell_id(pt(10.0, 12.0), 8));
    }

    fn arb_rect() -> impl Strategy<Value = GeoRect> {
        (
            -90.0f64..90.0,
            -90.0f64..90.0,
            -180.0f64..180.0,
            -180.0f64..180.0,
        )
            .prop_filter_map("degenerate", |(a, b, c, d)| {
                let r = GeoRect::new(a.min(b), a.max(b), c.min(d), c.max(d));
                (r.max_lat > r.min_lat && r.max_lon > r.min_lon).then_some(r)
            })
    }

    proptest! {
        #[test]
        fn lower_bound_never_exceeds_distance(
            r in arb_rect(),
            qlat in -90.0f64..=90.0, qlon in -180.0f64..=180.0,
            u in 0.0f64..=1.0, v in 0.0f64..=1.0,
        ) {
            let inside = pt(r.min_lat + u * (r.max_lat - r.min_lat), r.min_lon + v * (r.max_lon - r.min_lon));
            let q = pt(qlat, qlon);
            prop_assert!(r.min_distance_lower_bound_m(q) <= haversine_m(q, inside));
        }

        #[test]
        fn lower_bound_zero_inside(r in arb_rect(), u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let inside = pt(r.min_lat + u * (r.max_lat - r.min_lat), r.min_lon + v * (r.max_lon - r.min_lon));
            prop_assert_eq!(r.min_distance_lower_bound_m(inside), 0.0);
        }
    }
}
